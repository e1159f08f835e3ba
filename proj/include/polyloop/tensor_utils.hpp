#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "polyloop/geometry.hpp"
#include "polyloop/image.hpp"

namespace polyloop::nn {

// [3, H, W] float tensor, roughly zero-mean unit-range.
torch::Tensor image_to_tensor(const Image& image, torch::Dtype dtype = torch::kFloat32);

// Token <-> grid cell. Token D*D is end-of-sequence.
inline int token_of(geometry::GridVertex v, int grid) { return v.y * grid + v.x; }
inline geometry::GridVertex vertex_of(int token, int grid) { return {token % grid, token / grid}; }
inline int eos_token(int grid) { return grid * grid; }

// [B, 1, D, D] one-hot planes; a negative token (or EOS) gives an all-zero plane.
torch::Tensor one_hot_planes(std::span<const int> tokens, int grid, const torch::TensorOptions& opts);

// [D, D] float plane with the cells of `mask` set to 1.
torch::Tensor mask_plane(const geometry::BinaryMask& mask, const torch::TensorOptions& opts);

// Row-major lowest index among the maxima.
int argmax_first(std::span<const float> values);
int argmax_first(const torch::Tensor& row);

// Indices of the k largest values, descending; equal values by lowest index.
std::vector<int> topk_first(std::span<const float> values, int k);
std::vector<int> topk_first(std::span<const double> values, int k);

std::vector<float> to_vector(const torch::Tensor& t);

// Draw an index from the distribution `probs` (must sum to ~1) using one
// uniform variate from `rng`.
int sample_index(std::span<const float> probs, std::mt19937_64& rng);

}  // namespace polyloop::nn
