#include "polyloop/inference.hpp"

#include "polyloop/errors.hpp"
#include "polyloop/losses.hpp"
#include "polyloop/tensor_utils.hpp"
#include "polyloop/training.hpp"

namespace polyloop::nn {

InferenceResult full_inference(PolygonModelImpl& model, EvaluatorNetImpl* evaluator,
                               const torch::Tensor& skip, const InferenceOptions& opt) {
  torch::NoGradGuard no_grad;
  const auto fv = model.first_vertex(skip);
  const auto starts = top_k_first_vertices(fv.vertex_logits[0], opt.k);

  std::vector<Rollout> rollouts;
  std::vector<geometry::GridVertex> firsts;
  for (const auto& v0 : starts) {
    if (opt.beam_width == 1 && !opt.use_eos_selection) {
      rollouts.push_back(decode_greedy(model, skip, v0));
      firsts.push_back(v0);
      continue;
    }
    auto beams = beam_search(model, skip, v0, opt.beam_width);
    const std::size_t keep =
        opt.use_eos_selection ? std::min<std::size_t>(beams.completed.size(), static_cast<std::size_t>(opt.k)) : 1;
    for (std::size_t i = 0; i < keep; ++i) {
      rollouts.push_back(std::move(beams.completed[i]));
      firsts.push_back(v0);
    }
  }

  InferenceResult res;
  std::vector<double> scores(rollouts.size(), 0.0);
  if (evaluator) {
    std::vector<torch::Tensor> h2s, outlines;
    for (const auto& r : rollouts) {
      h2s.push_back(r.final_h2);
      outlines.push_back(render_outline(r.polygon, skip.options()));
    }
    const auto n = static_cast<std::int64_t>(rollouts.size());
    const auto pred = evaluator->forward(skip.expand({n, -1, -1, -1}), torch::stack(h2s),
                                         torch::stack(outlines));
    const auto v = to_vector(pred);
    for (std::size_t i = 0; i < v.size(); ++i) scores[i] = v[i];
  }
  std::size_t best = 0;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    res.candidates.push_back({rollouts[i].polygon, firsts[i], rollouts[i].logprob, scores[i]});
    if (i == 0) continue;
    const auto& c = res.candidates[i];
    const auto& b = res.candidates[best];
    if (c.predicted_iou > b.predicted_iou ||
        (c.predicted_iou == b.predicted_iou && c.sequence_logprob > b.sequence_logprob)) {
      best = i;
    }
  }
  res.best = res.candidates[best];
  return res;
}

geometry::PolygonSeq greedy_inference(PolygonModelImpl& model, const torch::Tensor& skip) {
  torch::NoGradGuard no_grad;
  const auto fv = model.first_vertex(skip);
  return decode_greedy(model, skip, top_k_first_vertices(fv.vertex_logits[0], 1)[0]).polygon;
}

EvalSummary evaluate(PolygonModelImpl& model, EvaluatorNetImpl* evaluator,
                     const std::vector<data::InstanceSample>& samples, const InferenceOptions& opt,
                     bool greedy_only) {
  torch::NoGradGuard no_grad;
  model.eval();
  if (evaluator) evaluator->eval();
  EvalSummary out;
  const std::size_t chunk = 16;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    std::vector<const data::InstanceSample*> batch;
    for (std::size_t i = start; i < std::min(samples.size(), start + chunk); ++i) batch.push_back(&samples[i]);
    const auto skip = model.encode(crops_tensor(batch)).skip;
    if (greedy_only) {
      const auto fv = model.first_vertex(skip);
      std::vector<std::vector<int>> starts;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        starts.push_back({token_of(top_k_first_vertices(fv.vertex_logits[static_cast<std::int64_t>(b)], 1)[0],
                                   model.config().grid)});
      }
      const auto rb = rollout(model, skip, starts, {});
      for (const auto& r : rb.rollouts) out.polygons.push_back(r.polygon);
    } else {
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto one = skip.narrow(0, static_cast<std::int64_t>(b), 1);
        out.polygons.push_back(full_inference(model, evaluator, one, opt).best.polygon);
      }
    }
  }
  double total = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    out.ious.push_back(reward(out.polygons[i], samples[i].gt_mask));
    total += out.ious.back();
  }
  out.mean_iou = samples.empty() ? 0.0 : total / static_cast<double>(samples.size());
  return out;
}

}  // namespace polyloop::nn
