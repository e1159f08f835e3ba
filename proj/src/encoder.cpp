#include "polyloop/errors.hpp"
#include "polyloop/model.hpp"

namespace polyloop::nn {

namespace F = torch::nn::functional;

namespace {

torch::nn::Conv2d conv(int in, int out, int k, int stride = 1, int dilation = 1, bool bias = false) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k)
                               .stride(stride)
                               .padding(dilation * (k / 2))
                               .dilation(dilation)
                               .bias(bias));
}

torch::nn::Sequential conv_bn_relu(int in, int out, int k, int stride = 1, int dilation = 1) {
  return torch::nn::Sequential(conv(in, out, k, stride, dilation), torch::nn::BatchNorm2d(out),
                               torch::nn::ReLU());
}

torch::Tensor resize(const torch::Tensor& x, int size) {
  if (x.size(2) == size && x.size(3) == size) return x;
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<std::int64_t>{size, size})
                               .mode(torch::kBilinear)
                               .align_corners(false));
}

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int in, int out, int stride, int dilation) {
  conv1_ = register_module("conv1", conv(in, out, 3, stride, dilation));
  bn1_ = register_module("bn1", torch::nn::BatchNorm2d(out));
  conv2_ = register_module("conv2", conv(out, out, 3, 1, dilation));
  bn2_ = register_module("bn2", torch::nn::BatchNorm2d(out));
  if (in != out || stride != 1) {
    proj_ = register_module("proj", conv(in, out, 1, stride));
    proj_bn_ = register_module("proj_bn", torch::nn::BatchNorm2d(out));
  }
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = torch::relu(bn1_(conv1_(x)));
  y = bn2_(conv2_(y));
  const auto shortcut = proj_ ? proj_bn_(proj_(x)) : x;
  return torch::relu(y + shortcut);
}

EncoderImpl::EncoderImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  stem_ = register_module("stem", conv_bn_relu(3, cfg.stem_channels, 3));
  const auto res = cfg.resolutions();
  int in = cfg.stem_channels;
  for (std::size_t s = 0; s < cfg.stage_channels.size(); ++s) {
    torch::nn::Sequential stage;
    for (int b = 0; b < cfg.blocks_per_stage; ++b) {
      stage->push_back(ResidualBlock(b == 0 ? in : cfg.stage_channels[s], cfg.stage_channels[s],
                                     b == 0 ? cfg.stage_strides[s] : 1, cfg.stage_dilations[s]));
    }
    stages_.push_back(register_module("stage" + std::to_string(s), stage));
    in = cfg.stage_channels[s];
    // Every stage at or below twice the output grid contributes a skip tap.
    if (res[s + 1] <= 2 * cfg.grid) {
      tap_stage_.push_back(static_cast<int>(s));
      taps_.push_back(register_module("tap" + std::to_string(s),
                                      conv_bn_relu(cfg.stage_channels[s], cfg.tap_channels, 3)));
    }
  }
  const int fused_in = cfg.tap_channels * static_cast<int>(taps_.size());
  fuse_ = register_module("fuse", conv_bn_relu(fused_in, cfg.skip_channels, 3));
}

EncoderFeatures EncoderImpl::forward(const torch::Tensor& crops, bool with_ggnn_grid) {
  if (crops.dim() != 4 || crops.size(1) != 3 || crops.size(2) != cfg_.crop_size ||
      crops.size(3) != cfg_.crop_size) {
    throw ShapeMismatch("encoder expects [B, 3, " + std::to_string(cfg_.crop_size) + ", " +
                        std::to_string(cfg_.crop_size) + "], got " + c10::str(crops.sizes()));
  }
  const int fine_tap = cfg_.fine_tap();
  std::vector<torch::Tensor> maps;
  auto x = stem_->forward(crops);
  maps.push_back(x);
  for (auto& stage : stages_) {
    x = stage->forward(x);
    maps.push_back(x);
  }
  std::vector<torch::Tensor> taps;
  for (std::size_t i = 0; i < taps_.size(); ++i) {
    taps.push_back(resize(taps_[i]->forward(maps[static_cast<std::size_t>(tap_stage_[i]) + 1]),
                          2 * cfg_.grid));
  }
  const auto fused = fuse_->forward(torch::cat(taps, 1));
  EncoderFeatures out;
  out.skip = F::max_pool2d(fused, F::MaxPool2dFuncOptions(2));
  if (with_ggnn_grid) {
    out.ggnn_grid =
        torch::cat({maps[static_cast<std::size_t>(fine_tap)], resize(fused, cfg_.fine_grid)}, 1);
  }
  return out;
}

FirstVertexHeadImpl::FirstVertexHeadImpl(const ModelConfig& cfg) {
  edge_ = register_module(
      "edge", torch::nn::Sequential(conv(cfg.skip_channels, cfg.first_vertex_hidden, 3, 1, 1, true),
                                    torch::nn::ReLU(),
                                    conv(cfg.first_vertex_hidden, 1, 3, 1, 1, true)));
  vertex_ = register_module(
      "vertex",
      torch::nn::Sequential(conv(cfg.skip_channels + 1, cfg.first_vertex_hidden, 3, 1, 1, true),
                            torch::nn::ReLU(), conv(cfg.first_vertex_hidden, 1, 3, 1, 1, true)));
}

FirstVertexOut FirstVertexHeadImpl::forward(const torch::Tensor& skip) {
  const auto edge = edge_->forward(skip);
  const auto vertex = vertex_->forward(torch::cat({skip, edge}, 1));
  return {edge.squeeze(1), vertex.squeeze(1)};
}

}  // namespace polyloop::nn
