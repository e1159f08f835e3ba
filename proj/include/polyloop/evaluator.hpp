#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <vector>

#include "polyloop/dataset.hpp"
#include "polyloop/model.hpp"
#include "polyloop/training.hpp"

namespace polyloop::nn {

// Predicts a candidate polygon's IoU from the skip features, the final
// second-layer ConvLSTM state and a rendering of the candidate outline.
class EvaluatorNetImpl : public torch::nn::Module {
 public:
  explicit EvaluatorNetImpl(const ModelConfig& cfg);

  // skip [B, C_s, D, D], h2 [B, C2, D, D], outline [B, 1, D, D] -> [B] in [0, 1].
  torch::Tensor forward(const torch::Tensor& skip, const torch::Tensor& h2,
                        const torch::Tensor& outline);

  const ModelConfig& config() const { return cfg_; }

 private:
  ModelConfig cfg_;
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr};
  torch::nn::Linear fc_{nullptr};
};
TORCH_MODULE(EvaluatorNet);

// [1, D, D] plane with the polygon's vertices and connecting edges set.
torch::Tensor render_outline(const geometry::PolygonSeq& poly, const torch::TensorOptions& opts);

struct EvaluatorTrainStats {
  std::vector<double> losses;  // per step
};

// Regresses the IoU of polygons sampled at cfg.tau (0.3) from first
// vertices drawn among the model's top `first_vertex_pool` predictions.
// The polygon model is not updated.
EvaluatorTrainStats train_evaluator(PolygonModelImpl& model, EvaluatorNetImpl& evaluator,
                                    const std::vector<data::InstanceSample>& samples,
                                    const TrainConfig& cfg, int first_vertex_pool = 5);

void save_evaluator(const std::filesystem::path& path, EvaluatorNetImpl& evaluator,
                    const nlohmann::json& meta = nlohmann::json::object());
EvaluatorNet load_evaluator(const std::filesystem::path& path);

}  // namespace polyloop::nn
