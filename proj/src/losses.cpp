#include "polyloop/losses.hpp"

#include "polyloop/errors.hpp"
#include "polyloop/tensor_utils.hpp"

namespace polyloop::nn {

torch::Tensor mle_loss(const torch::Tensor& logits, const torch::Tensor& targets, int grid,
                       bool smoothed) {
  if (logits.dim() != 3 || targets.dim() != 2 || logits.size(0) != targets.size(0) ||
      logits.size(1) != targets.size(1) || logits.size(2) != grid * grid + 1) {
    throw ShapeMismatch("mle_loss: logits " + c10::str(logits.sizes()) + " vs targets " +
                        c10::str(targets.sizes()));
  }
  const auto classes = logits.size(2);
  const auto flat_logits = logits.reshape({-1, classes});
  const auto flat_targets = targets.reshape({-1}).to(torch::kInt64);
  const auto valid = flat_targets.ge(0);
  const auto n = valid.sum().item<std::int64_t>();
  if (n == 0) return logits.sum() * 0.0;
  const auto logp = torch::log_softmax(flat_logits.index({valid}), 1);
  const auto tgt = flat_targets.index({valid});
  if (!smoothed) return -logp.gather(1, tgt.unsqueeze(1)).mean();

  auto dist = torch::zeros({n, classes}, logp.options());
  auto tgt_cpu = tgt.to(torch::kCPU);
  const auto acc = tgt_cpu.accessor<std::int64_t, 1>();
  for (std::int64_t i = 0; i < n; ++i) {
    const int tok = static_cast<int>(acc[i]);
    if (tok == eos_token(grid)) {
      dist[i][tok] = 1.0;
      continue;
    }
    const auto st = geometry::smooth_target(vertex_of(tok, grid), grid);
    dist[i].narrow(0, 0, grid * grid)
        .copy_(torch::from_blob(const_cast<double*>(st.weights.data()), {grid * grid},
                                torch::kFloat64)
                   .to(logp.scalar_type()));
  }
  return -(dist * logp).sum(1).mean();
}

torch::Tensor first_vertex_loss(const FirstVertexOut& out, const torch::Tensor& edge_targets,
                                const torch::Tensor& vertex_targets) {
  if (out.edge_logits.sizes() != edge_targets.sizes() ||
      out.vertex_logits.sizes() != vertex_targets.sizes()) {
    throw ShapeMismatch("first_vertex_loss: map/target shapes differ");
  }
  return torch::binary_cross_entropy_with_logits(out.edge_logits, edge_targets) +
         torch::binary_cross_entropy_with_logits(out.vertex_logits, vertex_targets);
}

double reward(const geometry::PolygonSeq& poly, const geometry::BinaryMask& gt) {
  if (geometry::distinct_vertex_count(poly) < 3) return 0.0;
  return geometry::mask_iou(geometry::rasterize_polygon(poly, gt.grid_size()), gt);
}

torch::Tensor self_critical_loss(const torch::Tensor& logprob_sums, std::span<const double> rewards,
                                 std::span<const double> baselines) {
  const auto n = static_cast<std::size_t>(logprob_sums.numel());
  if (logprob_sums.dim() != 1 || rewards.size() != n || baselines.size() != n || n == 0) {
    throw ShapeMismatch("self_critical_loss: need one reward and baseline per sequence");
  }
  std::vector<double> adv(n);
  for (std::size_t i = 0; i < n; ++i) adv[i] = rewards[i] - baselines[i];
  const auto a = torch::tensor(adv, logprob_sums.options());
  return -(a * logprob_sums).mean();
}

torch::Tensor evaluator_loss(const torch::Tensor& pred, const torch::Tensor& actual) {
  if (pred.sizes() != actual.sizes()) throw ShapeMismatch("evaluator_loss: shapes differ");
  return (pred - actual).pow(2).mean();
}

}  // namespace polyloop::nn
