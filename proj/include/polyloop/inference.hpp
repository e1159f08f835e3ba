#pragma once

#include <torch/torch.h>

#include <vector>

#include "polyloop/dataset.hpp"
#include "polyloop/decoding.hpp"
#include "polyloop/evaluator.hpp"
#include "polyloop/model.hpp"

namespace polyloop::nn {

struct Candidate {
  geometry::PolygonSeq polygon;
  geometry::GridVertex first_vertex;
  double sequence_logprob = 0.0;
  double predicted_iou = 0.0;
};

struct InferenceOptions {
  int k = 5;                       // first-vertex candidates
  int beam_width = 1;
  bool use_eos_selection = false;  // score up to K finished beams per first vertex
};

struct InferenceResult {
  Candidate best;
  std::vector<Candidate> candidates;  // everything the evaluator scored
};

// Top-K first vertices -> beam search per vertex -> evaluator scoring ->
// highest predicted IoU (ties: higher sequence log-probability, then
// earlier candidate). `evaluator` may be null, in which case candidates are
// ranked by log-probability. skip: [1, C_s, D, D].
InferenceResult full_inference(PolygonModelImpl& model, EvaluatorNetImpl* evaluator,
                               const torch::Tensor& skip, const InferenceOptions& opt);

// Greedy decode from the top-1 first vertex.
geometry::PolygonSeq greedy_inference(PolygonModelImpl& model, const torch::Tensor& skip);

// Mean IoU against gt_mask of greedy (evaluator == nullptr and opt.k == 1)
// or full inference over `samples`, encoding in chunks of `batch`.
struct EvalSummary {
  double mean_iou = 0.0;
  std::vector<double> ious;
  std::vector<geometry::PolygonSeq> polygons;
};
EvalSummary evaluate(PolygonModelImpl& model, EvaluatorNetImpl* evaluator,
                     const std::vector<data::InstanceSample>& samples, const InferenceOptions& opt,
                     bool greedy_only);

}  // namespace polyloop::nn
