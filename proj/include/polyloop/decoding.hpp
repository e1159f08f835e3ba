#pragma once

#include <torch/torch.h>

#include <random>
#include <vector>

#include "polyloop/geometry.hpp"
#include "polyloop/model.hpp"

namespace polyloop::nn {

enum class DecodeMode { kGreedy, kSample };

struct RolloutOptions {
  DecodeMode mode = DecodeMode::kGreedy;
  double tau = 1.0;              // sampling temperature
  bool track_grad = false;       // keep the graph behind logprob_sum
  bool keep_logits = false;      // keep per-step logits (teacher forcing)
  std::mt19937_64* rng = nullptr;
};

struct Rollout {
  geometry::PolygonSeq polygon;  // first vertex + decoded vertices, EOS excluded
  std::vector<int> tokens;       // every token after the first vertex, EOS included if emitted
  bool hit_eos = false;
  double logprob = 0.0;          // sum over free (non-forced) tokens
  torch::Tensor logprob_sum;     // scalar; carries gradients when track_grad
  torch::Tensor final_h2;        // [C2, D, D], state after the last step
};

struct RolloutBatch {
  std::vector<Rollout> rollouts;
  torch::Tensor logits;          // [S, B, D*D+1] when keep_logits
  std::vector<std::vector<int>> forced;  // forced token per step (-1 when free/padding)
};

// Decodes a batch. prefixes[b] holds tokens to force, starting with the
// first vertex; an EOS token in a prefix ends that sequence. After the
// prefix each row continues greedily or by sampling. Every path stops
// after at most cfg.t_max steps. Greedy, sampled, prefix and
// teacher-forced decoding all run through this function.
RolloutBatch rollout(PolygonModelImpl& model, const torch::Tensor& skip,
                     const std::vector<std::vector<int>>& prefixes, const RolloutOptions& opt);

// Single-instance conveniences; skip is [1, C_s, D, D].
Rollout decode_greedy(PolygonModelImpl& model, const torch::Tensor& skip, geometry::GridVertex v0);
Rollout decode_sample(PolygonModelImpl& model, const torch::Tensor& skip, geometry::GridVertex v0,
                      double tau, std::mt19937_64& rng);
Rollout decode_with_prefix(PolygonModelImpl& model, const torch::Tensor& skip,
                           const std::vector<geometry::GridVertex>& prefix, bool closed = false);

struct BeamResult {
  Rollout best;
  std::vector<Rollout> completed;  // descending logprob
};

// Log-probability beam search of width B from v0. B = 1 reproduces
// decode_greedy token for token.
BeamResult beam_search(PolygonModelImpl& model, const torch::Tensor& skip, geometry::GridVertex v0,
                       int beam_width);

// Token sequence for a closed polygon: vertices then EOS.
std::vector<int> polygon_tokens(const geometry::PolygonSeq& poly);

// Per-step logits under teacher forcing of `sequences` (token lists from
// polygon_tokens). Returns logits [S, B, D*D+1] and targets [S, B] with -1
// after a sequence's EOS.
struct TeacherForced {
  torch::Tensor logits;
  torch::Tensor targets;
};
TeacherForced teacher_forced(PolygonModelImpl& model, const torch::Tensor& skip,
                             const std::vector<std::vector<int>>& sequences);

}  // namespace polyloop::nn
