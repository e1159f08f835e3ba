#pragma once

#include <torch/torch.h>

#include <span>

#include "polyloop/geometry.hpp"
#include "polyloop/model.hpp"

namespace polyloop::nn {

// Mean cross-entropy over valid steps. logits [S, B, D*D+1], targets [S, B]
// with -1 marking padding. With `smoothed`, a vertex target becomes the
// smooth_target distribution around it; EOS stays one-hot.
torch::Tensor mle_loss(const torch::Tensor& logits, const torch::Tensor& targets, int grid,
                       bool smoothed);

// Binary cross-entropy on the edge and vertex maps. Targets are [B, D, D] in {0, 1}.
torch::Tensor first_vertex_loss(const FirstVertexOut& out, const torch::Tensor& edge_targets,
                                const torch::Tensor& vertex_targets);

// IoU of the rasterised polygon with the GT mask; fewer than 3 distinct
// vertices score 0.
double reward(const geometry::PolygonSeq& poly, const geometry::BinaryMask& gt);

// -mean((r - b) * log p(sample)); the advantage is a constant.
// logprob_sums: [B], one summed log-probability per sampled sequence.
torch::Tensor self_critical_loss(const torch::Tensor& logprob_sums, std::span<const double> rewards,
                                 std::span<const double> baselines);

// (pred - actual)^2, elementwise mean over a batch.
torch::Tensor evaluator_loss(const torch::Tensor& pred, const torch::Tensor& actual);

}  // namespace polyloop::nn
