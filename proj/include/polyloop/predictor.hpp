#pragma once

#include <torch/torch.h>

#include <map>
#include <mutex>
#include <string>

#include "polyloop/evaluator.hpp"
#include "polyloop/inference.hpp"
#include "polyloop/model.hpp"
#include "polyloop/simulator.hpp"

namespace polyloop::nn {

// Simulator predictor backed by the polygon model: full inference for the
// automatic pass, decode_with_prefix after corrections. Encoder outputs are
// cached per sample id.
class ModelPredictor : public sim::Predictor {
 public:
  ModelPredictor(PolygonModel model, EvaluatorNet evaluator, InferenceOptions opt);

  geometry::PolygonSeq predict(const data::InstanceSample& sample) override;
  geometry::PolygonSeq predict_with_prefix(const data::InstanceSample& sample,
                                           const std::vector<geometry::GridVertex>& prefix) override;

  void clear_cache();

 private:
  torch::Tensor skip_for(const data::InstanceSample& sample);

  PolygonModel model_;
  EvaluatorNet evaluator_;  // may be empty
  InferenceOptions opt_;
  std::map<std::string, torch::Tensor> cache_;
};

}  // namespace polyloop::nn
