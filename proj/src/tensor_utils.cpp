#include "polyloop/tensor_utils.hpp"

#include <algorithm>
#include <numeric>

#include "polyloop/errors.hpp"

namespace polyloop::nn {

torch::Tensor image_to_tensor(const Image& image, torch::Dtype dtype) {
  auto t = torch::from_blob(const_cast<std::uint8_t*>(image.rgb.data()),
                            {image.height, image.width, 3}, torch::kUInt8)
               .permute({2, 0, 1})
               .to(dtype);
  return (t - 127.5) / 64.0;
}

torch::Tensor one_hot_planes(std::span<const int> tokens, int grid, const torch::TensorOptions& opts) {
  const auto b = static_cast<std::int64_t>(tokens.size());
  std::vector<float> data(static_cast<std::size_t>(b) * grid * grid, 0.0f);
  for (std::int64_t i = 0; i < b; ++i) {
    const int tok = tokens[static_cast<std::size_t>(i)];
    if (tok >= 0 && tok < grid * grid) data[static_cast<std::size_t>(i) * grid * grid + tok] = 1.0f;
  }
  return torch::from_blob(data.data(), {b, 1, grid, grid}, torch::kFloat32).clone().to(opts);
}

torch::Tensor mask_plane(const geometry::BinaryMask& mask, const torch::TensorOptions& opts) {
  const int g = mask.grid_size();
  std::vector<float> data(mask.cells().begin(), mask.cells().end());
  return torch::from_blob(data.data(), {g, g}, torch::kFloat32).clone().to(opts);
}

int argmax_first(std::span<const float> values) {
  if (values.empty()) throw ShapeMismatch("argmax of an empty vector");
  int best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  }
  return best;
}

int argmax_first(const torch::Tensor& row) {
  const auto v = to_vector(row);
  return argmax_first(v);
}

namespace {

template <typename T>
std::vector<int> topk_impl(std::span<const T> values, int k) {
  if (k < 1 || k > static_cast<int>(values.size())) {
    throw InvalidK("k=" + std::to_string(k) + " for " + std::to_string(values.size()) + " values");
  }
  std::vector<int> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](int a, int b) {
    const T va = values[static_cast<std::size_t>(a)];
    const T vb = values[static_cast<std::size_t>(b)];
    return va != vb ? va > vb : a < b;
  });
  idx.resize(static_cast<std::size_t>(k));
  return idx;
}

}  // namespace

std::vector<int> topk_first(std::span<const float> values, int k) { return topk_impl(values, k); }

std::vector<int> topk_first(std::span<const double> values, int k) { return topk_impl(values, k); }

std::vector<float> to_vector(const torch::Tensor& t) {
  auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous().reshape({-1});
  return {c.data_ptr<float>(), c.data_ptr<float>() + c.numel()};
}

int sample_index(std::span<const float> probs, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double r = u(rng);
  double total = 0.0;
  for (float p : probs) total += p;
  r *= total;
  double acc = 0.0;
  int last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0f) continue;
    acc += probs[i];
    last_positive = static_cast<int>(i);
    if (r < acc) return static_cast<int>(i);
  }
  return last_positive;
}

}  // namespace polyloop::nn
