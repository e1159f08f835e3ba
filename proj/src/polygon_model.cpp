#include "polyloop/errors.hpp"
#include "polyloop/model.hpp"
#include "polyloop/tensor_utils.hpp"

namespace polyloop::nn {

PolygonModelImpl::PolygonModelImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  encoder_ = register_module("encoder", Encoder(cfg_));
  first_vertex_ = register_module("first_vertex", FirstVertexHead(cfg_));
  decoder_ = register_module("decoder", Decoder(cfg_));
}

EncoderFeatures PolygonModelImpl::encode(const torch::Tensor& crops, bool with_ggnn_grid) {
  return encoder_->forward(crops, with_ggnn_grid);
}

std::vector<geometry::GridVertex> top_k_first_vertices(const torch::Tensor& vertex_logits, int k) {
  if (vertex_logits.dim() != 2 || vertex_logits.size(0) != vertex_logits.size(1)) {
    throw ShapeMismatch("vertex map must be [D, D]");
  }
  const int d = static_cast<int>(vertex_logits.size(0));
  if (k < 1 || k > d * d) throw InvalidK("K=" + std::to_string(k) + " on a " + std::to_string(d) + " grid");
  const auto values = to_vector(vertex_logits);
  std::vector<geometry::GridVertex> out;
  for (int idx : topk_first(values, k)) out.push_back(vertex_of(idx, d));
  return out;
}

}  // namespace polyloop::nn
