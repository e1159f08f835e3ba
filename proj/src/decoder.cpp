#include "polyloop/model.hpp"

namespace polyloop::nn {

StepNormImpl::StepNormImpl(int channels, int steps) : steps_(steps) {
  weight_ = register_parameter("weight", torch::ones({channels}));
  bias_ = register_parameter("bias", torch::zeros({channels}));
  running_mean_ = register_buffer("running_mean", torch::zeros({steps, channels}));
  running_var_ = register_buffer("running_var", torch::ones({steps, channels}));
}

torch::Tensor StepNormImpl::forward(const torch::Tensor& x, int t) {
  const int i = std::min(t, steps_ - 1);
  return torch::batch_norm(x, weight_, bias_, running_mean_[i], running_var_[i], is_training(),
                           0.1, 1e-5, false);
}

ConvLSTMCellImpl::ConvLSTMCellImpl(int in, int hidden, int kernel, int steps) : hidden_(hidden) {
  gates_ = register_module(
      "gates", torch::nn::Conv2d(torch::nn::Conv2dOptions(in + hidden, 4 * hidden, kernel)
                                     .padding(kernel / 2)
                                     .bias(false)));
  norm_ = register_module("norm", StepNorm(4 * hidden, steps));
}

std::pair<torch::Tensor, torch::Tensor> ConvLSTMCellImpl::forward(const torch::Tensor& x,
                                                                  const torch::Tensor& h,
                                                                  const torch::Tensor& c, int t) {
  const auto g = norm_(gates_(torch::cat({x, h}, 1)), t).chunk(4, 1);
  const auto i = torch::sigmoid(g[0]);
  const auto f = torch::sigmoid(g[1]);
  const auto o = torch::sigmoid(g[2]);
  const auto u = torch::tanh(g[3]);
  auto c_next = f * c + i * u;
  auto h_next = o * torch::tanh(c_next);
  return {h_next, c_next};
}

DecoderImpl::DecoderImpl(const ModelConfig& cfg) : cfg_(cfg) {
  const int a = cfg.attention_channels;
  auto one_by_one = [](int in, int out, bool bias) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).bias(bias));
  };
  att_x_ = register_module("att_x", one_by_one(cfg.skip_channels, a, true));
  att_h1_ = register_module("att_h1", one_by_one(cfg.lstm1_channels, a, false));
  att_h2_ = register_module("att_h2", one_by_one(cfg.lstm2_channels, a, false));
  att_out_ = register_module("att_out", one_by_one(a, 1, false));
  const int vertex_planes = cfg.vertex_offsets ? 9 : 3;
  lstm1_ = register_module("lstm1", ConvLSTMCell(cfg.skip_channels + vertex_planes, cfg.lstm1_channels,
                                                 cfg.lstm_kernel, cfg.t_max));
  lstm2_ = register_module("lstm2", ConvLSTMCell(cfg.lstm1_channels, cfg.lstm2_channels,
                                                 cfg.lstm_kernel, cfg.t_max));
  head_ = register_module("head", one_by_one(cfg.lstm2_channels, 1, true));
  eos_ = register_module("eos", torch::nn::Linear(cfg.lstm2_channels, 1));
}

DecoderState DecoderImpl::initial_state(std::int64_t batch, const torch::TensorOptions& opts) const {
  const int d = cfg_.grid;
  DecoderState s;
  s.h1 = torch::zeros({batch, cfg_.lstm1_channels, d, d}, opts);
  s.c1 = torch::zeros_like(s.h1);
  s.h2 = torch::zeros({batch, cfg_.lstm2_channels, d, d}, opts);
  s.c2 = torch::zeros_like(s.h2);
  return s;
}

torch::Tensor DecoderImpl::attention_scores(const torch::Tensor& skip, const torch::Tensor& h1,
                                            const torch::Tensor& h2) {
  const auto e = torch::tanh(att_x_(skip) + att_h1_(h1) + att_h2_(h2));
  return att_out_(e).flatten(1);
}

torch::Tensor DecoderImpl::attention(const torch::Tensor& skip, const torch::Tensor& h1,
                                     const torch::Tensor& h2) {
  return torch::softmax(attention_scores(skip, h1, h2), 1);
}

StepOutput DecoderImpl::step(const torch::Tensor& skip, const DecoderState& state,
                             const torch::Tensor& y_prev, const torch::Tensor& y_prev2,
                             const torch::Tensor& y_first) {
  const int d = cfg_.grid;
  StepOutput out;
  out.alpha = attention(skip, state.h1, state.h2);
  const auto weighted = skip * out.alpha.view({-1, 1, d, d});
  std::vector<torch::Tensor> parts{weighted, y_prev, y_prev2, y_first};
  if (cfg_.vertex_offsets) {
    const auto xs = torch::arange(d, skip.options()).div(d);
    const auto gx = xs.view({1, 1, 1, d});
    const auto gy = xs.view({1, 1, d, 1});
    for (const auto* y : {&y_prev, &y_prev2, &y_first}) {
      // A one-hot plane is all zeros before the sequence starts; its offsets are then zero.
      const auto present = y->sum({2, 3}, true);
      const auto px = (*y * gx).sum({2, 3}, true);
      const auto py = (*y * gy).sum({2, 3}, true);
      parts.push_back(((gx - px) * present).expand({-1, 1, d, d}));
      parts.push_back(((gy - py) * present).expand({-1, 1, d, d}));
    }
  }
  const auto input = torch::cat(parts, 1);
  auto [h1, c1] = lstm1_(input, state.h1, state.c1, state.t);
  auto [h2, c2] = lstm2_(h1, state.h2, state.c2, state.t);
  const auto cells = head_(h2).flatten(1);
  const auto eos = eos_(h2.mean({2, 3}));
  out.logits = torch::cat({cells, eos}, 1);
  out.state = {h1, c1, h2, c2, state.t + 1};
  return out;
}

}  // namespace polyloop::nn
