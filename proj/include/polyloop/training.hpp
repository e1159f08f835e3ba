#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <random>
#include <vector>

#include "polyloop/dataset.hpp"
#include "polyloop/metrics.hpp"
#include "polyloop/model.hpp"

namespace polyloop::nn {

struct Batch {
  torch::Tensor crops;                       // [B, 3, S, S]
  std::vector<std::vector<int>> sequences;   // GT tokens (rotated start) + EOS
  torch::Tensor edge_targets;                // [B, D, D]
  torch::Tensor vertex_targets;              // [B, D, D]
  std::vector<const data::InstanceSample*> samples;
};

// Builds a batch from `indices`; each GT starts at a vertex drawn from `rng`
// (pass nullptr to keep the stored start).
Batch make_batch(const std::vector<data::InstanceSample>& samples,
                 const std::vector<std::size_t>& indices, int grid, std::mt19937_64* rng);

torch::Tensor crops_tensor(const std::vector<const data::InstanceSample*>& samples);

struct TrainConfig {
  int steps = 1000;
  int batch_size = 8;
  double lr = 1e-4;
  double grad_clip = 40.0;
  double lambda_fp = 1.0;    // first-vertex loss weight
  bool smoothed = false;     // smoothed MLE targets
  double tau = 0.6;          // RL sampling temperature
  std::uint64_t seed = 1;
  int log_every = 50;
  MetricsLog* metrics = nullptr;
  // Called at every log interval with the logged record.
  std::function<void(const nlohmann::json&)> on_log;
};

struct MleStepStats {
  double loss = 0.0;
  double sequence_loss = 0.0;
  double first_vertex_loss = 0.0;
  double accuracy = 0.0;   // teacher-forced per-step argmax accuracy
};

MleStepStats mle_step(PolygonModelImpl& model, torch::optim::Optimizer& opt, const Batch& batch,
                      const TrainConfig& cfg);

// Runs cfg.steps MLE updates with Adam on batches drawn uniformly.
void train_mle(PolygonModelImpl& model, const std::vector<data::InstanceSample>& samples,
               const TrainConfig& cfg);

struct RlStepStats {
  double sampled_reward = 0.0;
  double greedy_reward = 0.0;
  double advantage = 0.0;
  double length = 0.0;              // mean greedy polygon vertex count
  double self_intersections = 0.0;  // mean over greedy polygons
  double loss = 0.0;
};

// One self-critical update: sample at tau, greedy baseline, loss
// -mean(A * sum log p). Batch norm statistics stay frozen (eval mode) so the
// sampled and greedy policies share the same network function.
RlStepStats self_critical_step(PolygonModelImpl& model, torch::optim::Optimizer& opt,
                               const Batch& batch, const TrainConfig& cfg, std::mt19937_64& rng);

std::vector<RlStepStats> train_rl(PolygonModelImpl& model,
                                  const std::vector<data::InstanceSample>& samples,
                                  const TrainConfig& cfg);

// Clips the global gradient norm; returns the norm before clipping.
double clip_gradients(torch::nn::Module& module, double max_norm);

// Polygon model checkpoints.
void save_model(const std::filesystem::path& path, PolygonModelImpl& model,
                const nlohmann::json& meta = nlohmann::json::object());
PolygonModel load_model(const std::filesystem::path& path);

}  // namespace polyloop::nn
