#include "polyloop/predictor.hpp"

#include "polyloop/decoding.hpp"
#include "polyloop/training.hpp"

namespace polyloop::nn {

ModelPredictor::ModelPredictor(PolygonModel model, EvaluatorNet evaluator, InferenceOptions opt)
    : model_(std::move(model)), evaluator_(std::move(evaluator)), opt_(opt) {
  model_->eval();
  if (evaluator_) evaluator_->eval();
}

torch::Tensor ModelPredictor::skip_for(const data::InstanceSample& sample) {
  auto it = cache_.find(sample.id);
  if (it != cache_.end()) return it->second;
  torch::NoGradGuard no_grad;
  auto skip = model_->encode(crops_tensor({&sample})).skip;
  cache_.emplace(sample.id, skip);
  return skip;
}

geometry::PolygonSeq ModelPredictor::predict(const data::InstanceSample& sample) {
  const auto skip = skip_for(sample);
  return full_inference(*model_, evaluator_ ? evaluator_.get() : nullptr, skip, opt_).best.polygon;
}

geometry::PolygonSeq ModelPredictor::predict_with_prefix(const data::InstanceSample& sample,
                                                         const std::vector<geometry::GridVertex>& prefix) {
  return decode_with_prefix(*model_, skip_for(sample), prefix).polygon;
}

void ModelPredictor::clear_cache() { cache_.clear(); }

}  // namespace polyloop::nn
