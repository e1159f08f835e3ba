#pragma once

#include <vector>

#include "polyloop/dataset.hpp"
#include "polyloop/ggnn.hpp"
#include "polyloop/model.hpp"
#include "polyloop/training.hpp"

namespace polyloop::nn {

struct GgnnTrainConfig {
  int steps = 2000;
  int batch_size = 8;        // graphs per update
  double lr = 1e-3;
  double grad_clip = 40.0;
  double gt_input_prob = 0.3;  // chance of training on the quantised GT instead of a prediction
  std::uint64_t seed = 1;
  int log_every = 50;
  MetricsLog* metrics = nullptr;
  std::function<void(const nlohmann::json&)> on_log;
};

// Cross-entropy over offset classes per node. The polygon model is frozen;
// its greedy predictions feed target construction.
std::vector<double> train_ggnn(PolygonModelImpl& model, GgnnImpl& ggnn,
                               const std::vector<data::InstanceSample>& samples,
                               const GgnnTrainConfig& cfg);

// build -> features -> propagate(steps) -> outputs -> argmax -> apply.
// ggnn_grid: [1, C_g, D', D']. steps < 0 uses the configured T.
geometry::PolygonSeq upscale(GgnnImpl& ggnn, const torch::Tensor& ggnn_grid,
                             const geometry::PolygonSeq& poly, int steps = -1);

struct UpscaleSummary {
  double ggnn_iou = 0.0;      // mean IoU at D' of upscaled polygons
  double nearest_iou = 0.0;   // mean IoU at D' of nearest-neighbour upscaling
  std::vector<double> ggnn_ious, nearest_ious;
};

// Upscales the given D-grid polygons (one per sample) and scores both
// variants against gt_mask_fine.
UpscaleSummary evaluate_upscale(PolygonModelImpl& model, GgnnImpl& ggnn,
                                const std::vector<data::InstanceSample>& samples,
                                const std::vector<geometry::PolygonSeq>& polygons, int steps = -1);

}  // namespace polyloop::nn
