#include "polyloop/evaluator.hpp"

#include "polyloop/checkpoint.hpp"
#include "polyloop/decoding.hpp"
#include "polyloop/errors.hpp"
#include "polyloop/losses.hpp"
#include "polyloop/tensor_utils.hpp"

namespace polyloop::nn {

using json = nlohmann::json;

EvaluatorNetImpl::EvaluatorNetImpl(const ModelConfig& cfg) : cfg_(cfg) {
  const int in = cfg.skip_channels + cfg.lstm2_channels + 1;
  conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, 16, 3).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(16, 1, 3).padding(1)));
  fc_ = register_module("fc", torch::nn::Linear(cfg.grid * cfg.grid, 1));
  // Start near a typical IoU with little spread; a saturated sigmoid stalls MSE training.
  torch::NoGradGuard no_grad;
  fc_->weight.mul_(0.1);
  fc_->bias.fill_(std::log(0.9 / 0.1));
}

torch::Tensor EvaluatorNetImpl::forward(const torch::Tensor& skip, const torch::Tensor& h2,
                                        const torch::Tensor& outline) {
  auto x = torch::relu(conv1_(torch::cat({skip, h2, outline}, 1)));
  x = conv2_(x);
  return torch::sigmoid(fc_(x.flatten(1))).squeeze(1);
}

torch::Tensor render_outline(const geometry::PolygonSeq& poly, const torch::TensorOptions& opts) {
  return mask_plane(geometry::rasterize_outline(poly, poly.grid_size), opts).unsqueeze(0);
}

EvaluatorTrainStats train_evaluator(PolygonModelImpl& model, EvaluatorNetImpl& evaluator,
                                    const std::vector<data::InstanceSample>& samples,
                                    const TrainConfig& cfg, int first_vertex_pool) {
  if (samples.empty()) throw Error("train_evaluator: empty training set");
  model.eval();
  evaluator.train();
  for (auto& p : model.parameters()) p.set_requires_grad(false);
  torch::optim::Adam opt(evaluator.parameters(), torch::optim::AdamOptions(cfg.lr));
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> pick(0, samples.size() - 1);
  std::uniform_int_distribution<int> pick_start(0, first_vertex_pool - 1);
  const int d = model.config().grid;
  EvaluatorTrainStats stats;
  double acc = 0.0;
  int n = 0;
  try {
    for (int step = 1; step <= cfg.steps; ++step) {
      std::vector<const data::InstanceSample*> batch;
      for (int i = 0; i < cfg.batch_size; ++i) batch.push_back(&samples[pick(rng)]);
      torch::Tensor skip;
      RolloutBatch rb;
      {
        torch::NoGradGuard no_grad;
        skip = model.encode(crops_tensor(batch)).skip;
        const auto fv = model.first_vertex(skip);
        std::vector<std::vector<int>> starts;
        for (std::size_t b = 0; b < batch.size(); ++b) {
          const auto top = top_k_first_vertices(fv.vertex_logits[static_cast<std::int64_t>(b)],
                                                first_vertex_pool);
          starts.push_back({token_of(top[static_cast<std::size_t>(pick_start(rng))], d)});
        }
        RolloutOptions opt_s;
        opt_s.mode = DecodeMode::kSample;
        opt_s.tau = cfg.tau;
        opt_s.rng = &rng;
        rb = rollout(model, skip, starts, opt_s);
      }
      std::vector<torch::Tensor> h2s, outlines;
      std::vector<float> targets;
      for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& r = rb.rollouts[b];
        h2s.push_back(r.final_h2);
        outlines.push_back(render_outline(r.polygon, skip.options()));
        targets.push_back(static_cast<float>(reward(r.polygon, batch[b]->gt_mask)));
      }
      const auto pred = evaluator.forward(skip, torch::stack(h2s), torch::stack(outlines));
      const auto target = torch::tensor(targets).to(pred.options());
      const auto loss = evaluator_loss(pred, target);
      opt.zero_grad();
      loss.backward();
      clip_gradients(evaluator, cfg.grad_clip);
      opt.step();
      stats.losses.push_back(loss.item<double>());
      acc += stats.losses.back();
      ++n;
      if (step % cfg.log_every == 0 || step == cfg.steps) {
        const json rec = {{"phase", "evaluator"}, {"step", step}, {"loss", acc / n}};
        if (cfg.metrics) cfg.metrics->write(rec);
        if (cfg.on_log) cfg.on_log(rec);
        acc = 0.0;
        n = 0;
      }
    }
  } catch (...) {
    for (auto& p : model.parameters()) p.set_requires_grad(true);
    throw;
  }
  for (auto& p : model.parameters()) p.set_requires_grad(true);
  evaluator.eval();
  return stats;
}

void save_evaluator(const std::filesystem::path& path, EvaluatorNetImpl& evaluator, const json& meta) {
  save_checkpoint(path, evaluator, {"evaluator", to_json(evaluator.config()), meta});
}

EvaluatorNet load_evaluator(const std::filesystem::path& path) {
  const auto header = read_checkpoint_header(path);
  EvaluatorNet ev(model_config_from_json(header.config));
  load_checkpoint(path, *ev, "evaluator");
  ev->eval();
  return ev;
}

}  // namespace polyloop::nn
