#include "polyloop/ggnn_training.hpp"

#include "polyloop/errors.hpp"
#include "polyloop/inference.hpp"
#include "polyloop/losses.hpp"
#include "polyloop/simulator.hpp"
#include "polyloop/tensor_utils.hpp"

namespace polyloop::nn {

using json = nlohmann::json;

std::vector<double> train_ggnn(PolygonModelImpl& model, GgnnImpl& ggnn,
                               const std::vector<data::InstanceSample>& samples,
                               const GgnnTrainConfig& cfg) {
  if (samples.empty()) throw Error("train_ggnn: empty training set");
  const auto& gc = ggnn.config();
  if (gc.fine_grid != model.config().fine_grid || gc.grid != model.config().grid) {
    throw ShapeMismatch("ggnn and polygon model grids differ");
  }
  model.eval();
  const auto preds = evaluate(model, nullptr, samples, {}, true).polygons;

  ggnn.train();
  torch::optim::Adam opt(ggnn.parameters(), torch::optim::AdamOptions(cfg.lr));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::vector<double> losses;
  double acc = 0.0;
  int n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    std::vector<std::size_t> idx;
    std::vector<const data::InstanceSample*> batch;
    for (int i = 0; i < cfg.batch_size; ++i) {
      idx.push_back(pick(rng));
      batch.push_back(&samples[idx.back()]);
    }
    torch::Tensor grids;
    {
      torch::NoGradGuard no_grad;
      grids = model.encode(crops_tensor(batch), true).ggnn_grid;
    }
    const auto obs = ggnn.observe(grids);
    std::vector<torch::Tensor> logits;
    std::vector<std::int64_t> labels;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      const auto& s = *batch[b];
      const auto& input = coin(rng) < cfg.gt_input_prob ? s.gt : preds[idx[b]];
      const auto t = ggnn_targets(input, s.gt, s.gt_fine, gc);
      logits.push_back(ggnn.forward(obs[static_cast<std::int64_t>(b)], t.graph, gc.steps));
      labels.insert(labels.end(), t.classes.begin(), t.classes.end());
    }
    const auto loss = torch::cross_entropy_loss(torch::cat(logits), torch::tensor(labels, torch::kInt64));
    opt.zero_grad();
    loss.backward();
    clip_gradients(ggnn, cfg.grad_clip);
    opt.step();
    losses.push_back(loss.item<double>());
    acc += losses.back();
    ++n;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      const json rec = {{"phase", "ggnn"}, {"step", step}, {"loss", acc / n}};
      if (cfg.metrics) cfg.metrics->write(rec);
      if (cfg.on_log) cfg.on_log(rec);
      acc = 0.0;
      n = 0;
    }
  }
  ggnn.eval();
  return losses;
}

geometry::PolygonSeq upscale(GgnnImpl& ggnn, const torch::Tensor& ggnn_grid,
                             const geometry::PolygonSeq& poly, int steps) {
  torch::NoGradGuard no_grad;
  const auto& gc = ggnn.config();
  const auto graph = build_graph(poly, gc.fine_grid, gc.edge_types);
  const auto obs = ggnn.observe(ggnn_grid)[0];
  const auto out = ggnn.forward(obs, graph, steps < 0 ? gc.steps : steps);
  std::vector<int> classes;
  for (std::int64_t i = 0; i < out.size(0); ++i) classes.push_back(argmax_first(out[i]));
  return apply_offsets(graph, classes, gc.window);
}

UpscaleSummary evaluate_upscale(PolygonModelImpl& model, GgnnImpl& ggnn,
                                const std::vector<data::InstanceSample>& samples,
                                const std::vector<geometry::PolygonSeq>& polygons, int steps) {
  if (polygons.size() != samples.size()) throw ShapeMismatch("one polygon per sample required");
  torch::NoGradGuard no_grad;
  model.eval();
  ggnn.eval();
  const int fine = ggnn.config().fine_grid;
  UpscaleSummary out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& p = polygons[i];
    double g = 0.0, nn = 0.0;
    if (geometry::distinct_vertex_count(p) >= 3) {
      const auto grid = model.encode(crops_tensor({&s}), true).ggnn_grid;
      g = sim::polygon_iou(upscale(ggnn, grid, p, steps), s.gt_mask_fine);
      nn = sim::polygon_iou(geometry::upscale_nearest(p, fine), s.gt_mask_fine);
    }
    out.ggnn_ious.push_back(g);
    out.nearest_ious.push_back(nn);
    out.ggnn_iou += g / static_cast<double>(samples.size());
    out.nearest_iou += nn / static_cast<double>(samples.size());
  }
  return out;
}

}  // namespace polyloop::nn
