#pragma once

#include <torch/torch.h>

#include <vector>

#include "polyloop/geometry.hpp"
#include "polyloop/model_config.hpp"

namespace polyloop::nn {

struct EncoderFeatures {
  torch::Tensor skip;       // [B, C_s, D, D]
  torch::Tensor ggnn_grid;  // [B, C_g, D', D'], undefined unless requested
};

// conv-bn-relu x2 with a projected shortcut when the shape changes.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int in, int out, int stride, int dilation);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, proj_{nullptr};
  torch::nn::BatchNorm2d bn1_{nullptr}, bn2_{nullptr}, proj_bn_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class EncoderImpl : public torch::nn::Module {
 public:
  explicit EncoderImpl(const ModelConfig& cfg);
  EncoderFeatures forward(const torch::Tensor& crops, bool with_ggnn_grid = false);

 private:
  ModelConfig cfg_;
  torch::nn::Sequential stem_{nullptr};
  std::vector<torch::nn::Sequential> stages_;
  std::vector<int> tap_stage_;                 // stage index of each skip tap
  std::vector<torch::nn::Sequential> taps_;
  torch::nn::Sequential fuse_{nullptr};
};
TORCH_MODULE(Encoder);

struct FirstVertexOut {
  torch::Tensor edge_logits;    // [B, D, D]
  torch::Tensor vertex_logits;  // [B, D, D]
};

// Edge map first; the vertex map sees the skip features and the edge logits.
class FirstVertexHeadImpl : public torch::nn::Module {
 public:
  explicit FirstVertexHeadImpl(const ModelConfig& cfg);
  FirstVertexOut forward(const torch::Tensor& skip);

 private:
  torch::nn::Sequential edge_{nullptr}, vertex_{nullptr};
};
TORCH_MODULE(FirstVertexHead);

// Batch normalisation with separate running statistics for every decode
// step and one shared affine transform.
class StepNormImpl : public torch::nn::Module {
 public:
  StepNormImpl(int channels, int steps);
  torch::Tensor forward(const torch::Tensor& x, int t);

 private:
  int steps_;
  torch::Tensor weight_, bias_, running_mean_, running_var_;
};
TORCH_MODULE(StepNorm);

class ConvLSTMCellImpl : public torch::nn::Module {
 public:
  ConvLSTMCellImpl(int in, int hidden, int kernel, int steps);
  // Returns (h, c).
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& x, const torch::Tensor& h,
                                                  const torch::Tensor& c, int t);

 private:
  int hidden_;
  torch::nn::Conv2d gates_{nullptr};
  StepNorm norm_{nullptr};
};
TORCH_MODULE(ConvLSTMCell);

struct DecoderState {
  torch::Tensor h1, c1, h2, c2;
  int t = 0;  // number of completed steps
};

struct StepOutput {
  torch::Tensor logits;  // [B, D*D + 1], last column is EOS
  torch::Tensor alpha;   // [B, D*D]
  DecoderState state;
};

class DecoderImpl : public torch::nn::Module {
 public:
  explicit DecoderImpl(const ModelConfig& cfg);

  DecoderState initial_state(std::int64_t batch, const torch::TensorOptions& opts) const;

  // softmax over the D*D grid of w . tanh(fx(x) + f1(h1) + f2(h2)).
  torch::Tensor attention(const torch::Tensor& skip, const torch::Tensor& h1,
                          const torch::Tensor& h2);
  torch::Tensor attention_scores(const torch::Tensor& skip, const torch::Tensor& h1,
                                 const torch::Tensor& h2);

  // y_prev, y_prev2, y_first: [B, 1, D, D] one-hot planes.
  StepOutput step(const torch::Tensor& skip, const DecoderState& state,
                  const torch::Tensor& y_prev, const torch::Tensor& y_prev2,
                  const torch::Tensor& y_first);

 private:
  ModelConfig cfg_;
  torch::nn::Conv2d att_x_{nullptr}, att_h1_{nullptr}, att_h2_{nullptr}, att_out_{nullptr};
  ConvLSTMCell lstm1_{nullptr}, lstm2_{nullptr};
  torch::nn::Conv2d head_{nullptr};
  torch::nn::Linear eos_{nullptr};
};
TORCH_MODULE(Decoder);

class PolygonModelImpl : public torch::nn::Module {
 public:
  explicit PolygonModelImpl(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  // crops: [B, 3, crop, crop]. Throws ShapeMismatch on a wrong shape.
  EncoderFeatures encode(const torch::Tensor& crops, bool with_ggnn_grid = false);
  FirstVertexOut first_vertex(const torch::Tensor& skip) { return first_vertex_->forward(skip); }
  Decoder& decoder() { return decoder_; }

 private:
  ModelConfig cfg_;
  Encoder encoder_{nullptr};
  FirstVertexHead first_vertex_{nullptr};
  Decoder decoder_{nullptr};
};
TORCH_MODULE(PolygonModel);

// The K most probable first-vertex cells (row-major tie-break).
// vertex_logits: [D, D]. Throws InvalidK for K < 1 or K > D*D.
std::vector<geometry::GridVertex> top_k_first_vertices(const torch::Tensor& vertex_logits, int k);

}  // namespace polyloop::nn
