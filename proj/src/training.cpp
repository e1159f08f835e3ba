#include "polyloop/training.hpp"

#include <iostream>

#include "polyloop/checkpoint.hpp"
#include "polyloop/decoding.hpp"
#include "polyloop/errors.hpp"
#include "polyloop/losses.hpp"
#include "polyloop/tensor_utils.hpp"

namespace polyloop::nn {

using data::InstanceSample;
using json = nlohmann::json;

torch::Tensor crops_tensor(const std::vector<const InstanceSample*>& samples) {
  std::vector<torch::Tensor> crops;
  for (const auto* s : samples) crops.push_back(image_to_tensor(s->crop));
  return torch::stack(crops);
}

Batch make_batch(const std::vector<InstanceSample>& samples, const std::vector<std::size_t>& indices,
                 int grid, std::mt19937_64* rng) {
  Batch b;
  const auto opts = torch::TensorOptions().dtype(torch::kFloat32);
  std::vector<torch::Tensor> edges, vertices;
  for (auto i : indices) {
    const auto& s = samples.at(i);
    if (s.gt.grid_size != grid) throw ShapeMismatch("sample grid differs from model grid");
    b.samples.push_back(&s);
    auto gt = s.gt;
    if (rng) {
      std::uniform_int_distribution<std::size_t> start(0, gt.size() - 1);
      gt = geometry::rotate_start(gt, start(*rng));
    }
    b.sequences.push_back(polygon_tokens(gt));
    edges.push_back(mask_plane(geometry::rasterize_outline(s.gt, grid), opts));
    geometry::BinaryMask vm(grid);
    for (const auto& v : s.gt.vertices) vm.set(v.x, v.y);
    vertices.push_back(mask_plane(vm, opts));
  }
  b.crops = crops_tensor(b.samples);
  b.edge_targets = torch::stack(edges);
  b.vertex_targets = torch::stack(vertices);
  return b;
}

double clip_gradients(torch::nn::Module& module, double max_norm) {
  return torch::nn::utils::clip_grad_norm_(module.parameters(), max_norm);
}

MleStepStats mle_step(PolygonModelImpl& model, torch::optim::Optimizer& opt, const Batch& batch,
                      const TrainConfig& cfg) {
  model.train();
  const int d = model.config().grid;
  const auto feats = model.encode(batch.crops);
  const auto fv = model.first_vertex(feats.skip);
  const auto tf = teacher_forced(model, feats.skip, batch.sequences);
  const auto seq = mle_loss(tf.logits, tf.targets, d, cfg.smoothed);
  const auto fvl = first_vertex_loss(fv, batch.edge_targets, batch.vertex_targets);
  const auto loss = seq + cfg.lambda_fp * fvl;
  opt.zero_grad();
  loss.backward();
  clip_gradients(model, cfg.grad_clip);
  opt.step();

  MleStepStats st;
  st.loss = loss.item<double>();
  st.sequence_loss = seq.item<double>();
  st.first_vertex_loss = fvl.item<double>();
  const auto valid = tf.targets.ge(0);
  const auto pred = tf.logits.detach().argmax(2);
  st.accuracy = (pred.eq(tf.targets) & valid).sum().item<double>() /
                std::max<double>(1.0, valid.sum().item<double>());
  return st;
}

namespace {

std::vector<std::size_t> draw(std::mt19937_64& rng, std::size_t n, int count) {
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::vector<std::size_t> out;
  for (int i = 0; i < count; ++i) out.push_back(pick(rng));
  return out;
}

void emit(const TrainConfig& cfg, const json& record) {
  if (cfg.metrics) cfg.metrics->write(record);
  if (cfg.on_log) cfg.on_log(record);
}

}  // namespace

void train_mle(PolygonModelImpl& model, const std::vector<InstanceSample>& samples,
               const TrainConfig& cfg) {
  if (samples.empty()) throw Error("train_mle: empty training set");
  torch::optim::Adam opt(model.parameters(), torch::optim::AdamOptions(cfg.lr));
  std::mt19937_64 rng(cfg.seed);
  MleStepStats acc;
  int n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto batch = make_batch(samples, draw(rng, samples.size(), cfg.batch_size),
                                  model.config().grid, &rng);
    const auto st = mle_step(model, opt, batch, cfg);
    acc.loss += st.loss;
    acc.sequence_loss += st.sequence_loss;
    acc.first_vertex_loss += st.first_vertex_loss;
    acc.accuracy += st.accuracy;
    ++n;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      emit(cfg, {{"phase", "mle"},
                 {"step", step},
                 {"loss", acc.loss / n},
                 {"sequence_loss", acc.sequence_loss / n},
                 {"first_vertex_loss", acc.first_vertex_loss / n},
                 {"accuracy", acc.accuracy / n}});
      acc = {};
      n = 0;
    }
  }
  model.eval();
}

RlStepStats self_critical_step(PolygonModelImpl& model, torch::optim::Optimizer& opt,
                               const Batch& batch, const TrainConfig& cfg, std::mt19937_64& rng) {
  model.eval();
  const int d = model.config().grid;
  const auto feats = model.encode(batch.crops);
  std::vector<std::vector<int>> starts;
  {
    torch::NoGradGuard no_grad;
    const auto fv = model.first_vertex(feats.skip);
    for (std::int64_t b = 0; b < fv.vertex_logits.size(0); ++b) {
      starts.push_back({token_of(top_k_first_vertices(fv.vertex_logits[b], 1)[0], d)});
    }
  }
  RolloutOptions sample_opt;
  sample_opt.mode = DecodeMode::kSample;
  sample_opt.tau = cfg.tau;
  sample_opt.track_grad = true;
  sample_opt.rng = &rng;
  const auto sampled = rollout(model, feats.skip, starts, sample_opt);
  const auto greedy = rollout(model, feats.skip.detach(), starts, {});

  RlStepStats st;
  std::vector<torch::Tensor> terms;
  std::vector<double> rewards, baselines;
  const double n = static_cast<double>(starts.size());
  for (std::size_t b = 0; b < starts.size(); ++b) {
    const auto& gt = batch.samples[b]->gt_mask;
    const double rs = reward(sampled.rollouts[b].polygon, gt);
    const double rg = reward(greedy.rollouts[b].polygon, gt);
    rewards.push_back(rs);
    baselines.push_back(rg);
    st.sampled_reward += rs / n;
    st.greedy_reward += rg / n;
    st.advantage += (rs - rg) / n;
    const auto& gp = greedy.rollouts[b].polygon;
    st.length += static_cast<double>(gp.size()) / n;
    st.self_intersections += gp.size() >= 3 ? geometry::count_self_intersections(gp) / n : 0.0;
    terms.push_back(sampled.rollouts[b].logprob_sum);
  }
  const auto loss = self_critical_loss(torch::stack(terms), rewards, baselines);
  opt.zero_grad();
  loss.backward();
  clip_gradients(model, cfg.grad_clip);
  opt.step();
  st.loss = loss.item<double>();
  return st;
}

std::vector<RlStepStats> train_rl(PolygonModelImpl& model, const std::vector<InstanceSample>& samples,
                                  const TrainConfig& cfg) {
  if (samples.empty()) throw Error("train_rl: empty training set");
  torch::optim::Adam opt(model.parameters(), torch::optim::AdamOptions(cfg.lr));
  std::mt19937_64 rng(cfg.seed);
  std::vector<RlStepStats> history;
  RlStepStats acc;
  int n = 0;
  for (int step = 1; step <= cfg.steps; ++step) {
    const auto batch =
        make_batch(samples, draw(rng, samples.size(), cfg.batch_size), model.config().grid, nullptr);
    const auto st = self_critical_step(model, opt, batch, cfg, rng);
    history.push_back(st);
    acc.sampled_reward += st.sampled_reward;
    acc.greedy_reward += st.greedy_reward;
    acc.advantage += st.advantage;
    acc.length += st.length;
    acc.self_intersections += st.self_intersections;
    acc.loss += st.loss;
    ++n;
    if (step % cfg.log_every == 0 || step == cfg.steps) {
      emit(cfg, {{"phase", "rl"},
                 {"step", step},
                 {"loss", acc.loss / n},
                 {"sampled_reward", acc.sampled_reward / n},
                 {"mean_iou", acc.greedy_reward / n},
                 {"advantage", acc.advantage / n},
                 {"mean_len", acc.length / n},
                 {"self_intersections", acc.self_intersections / n}});
      acc = {};
      n = 0;
    }
  }
  model.eval();
  return history;
}

void save_model(const std::filesystem::path& path, PolygonModelImpl& model, const json& meta) {
  save_checkpoint(path, model, {"polygon_model", to_json(model.config()), meta});
}

PolygonModel load_model(const std::filesystem::path& path) {
  const auto header = read_checkpoint_header(path);
  if (header.kind != "polygon_model") {
    throw CheckpointError(path.string() + " is not a polygon model checkpoint");
  }
  PolygonModel model(model_config_from_json(header.config));
  load_checkpoint(path, *model, "polygon_model");
  model->eval();
  return model;
}

}  // namespace polyloop::nn
