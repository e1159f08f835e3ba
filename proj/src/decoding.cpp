#include "polyloop/decoding.hpp"

#include <algorithm>
#include <limits>
#include <optional>

#include "polyloop/errors.hpp"
#include "polyloop/tensor_utils.hpp"

namespace polyloop::nn {

using geometry::GridVertex;
using geometry::PolygonSeq;

namespace {

void check_skip(const PolygonModelImpl& model, const torch::Tensor& skip) {
  const auto& c = model.config();
  if (skip.dim() != 4 || skip.size(1) != c.skip_channels || skip.size(2) != c.grid ||
      skip.size(3) != c.grid) {
    throw ShapeMismatch("skip features must be [B, " + std::to_string(c.skip_channels) + ", " +
                        std::to_string(c.grid) + ", " + std::to_string(c.grid) + "]");
  }
}

int checked_token(GridVertex v, int grid) {
  if (v.x < 0 || v.y < 0 || v.x >= grid || v.y >= grid) {
    throw OutOfBounds("vertex (" + std::to_string(v.x) + ", " + std::to_string(v.y) +
                      ") outside the " + std::to_string(grid) + " grid");
  }
  return token_of(v, grid);
}

}  // namespace

std::vector<int> polygon_tokens(const PolygonSeq& poly) {
  std::vector<int> out;
  for (const auto& v : poly.vertices) out.push_back(checked_token(v, poly.grid_size));
  out.push_back(eos_token(poly.grid_size));
  return out;
}

RolloutBatch rollout(PolygonModelImpl& model, const torch::Tensor& skip,
                     const std::vector<std::vector<int>>& prefixes, const RolloutOptions& opt) {
  check_skip(model, skip);
  const auto& cfg = model.config();
  const int d = cfg.grid;
  const int eos = eos_token(d);
  const auto batch = static_cast<std::size_t>(skip.size(0));
  if (prefixes.size() != batch) throw ShapeMismatch("one prefix per batch row required");
  if (opt.mode == DecodeMode::kSample) {
    if (!(opt.tau > 0.0)) throw InvalidTemperature("tau must be > 0, got " + std::to_string(opt.tau));
    if (!opt.rng) throw Error("sampling requires an rng");
  }

  std::optional<torch::NoGradGuard> no_grad;
  if (!opt.track_grad && !opt.keep_logits) no_grad.emplace();

  const auto fopts = skip.options();
  RolloutBatch result;
  result.rollouts.resize(batch);
  std::vector<int> prev(batch), prev2(batch, -1), first(batch);
  std::vector<bool> done(batch, false);
  std::vector<std::vector<torch::Tensor>> free_lp(batch);
  for (std::size_t b = 0; b < batch; ++b) {
    if (prefixes[b].empty() || prefixes[b][0] < 0 || prefixes[b][0] >= eos) {
      throw Error("prefix must start with an in-grid vertex token");
    }
    first[b] = prev[b] = prefixes[b][0];
    auto& r = result.rollouts[b];
    r.polygon = PolygonSeq{{vertex_of(first[b], d)}, d, true};
  }
  // A prefix longer than t_max is still consumed in full.
  int steps = cfg.t_max;
  for (const auto& p : prefixes) steps = std::max(steps, static_cast<int>(p.size()) - 1);
  const auto y0 = one_hot_planes(first, d, fopts);
  auto state = model.decoder()->initial_state(static_cast<std::int64_t>(batch), fopts);
  std::vector<torch::Tensor> step_logits;

  for (int s = 0; s < steps; ++s) {
    if (std::all_of(done.begin(), done.end(), [](bool x) { return x; })) break;
    auto out = model.decoder()->step(skip, state, one_hot_planes(prev, d, fopts),
                                     one_hot_planes(prev2, d, fopts), y0);
    state = out.state;
    if (opt.keep_logits) step_logits.push_back(out.logits);
    const auto scaled = opt.mode == DecodeMode::kSample ? out.logits / opt.tau : out.logits;
    const auto logp = torch::log_softmax(scaled, 1);
    const auto logp_cpu = logp.detach().to(torch::kFloat32).contiguous();
    std::vector<int> forced_now(batch, -1);

    for (std::size_t b = 0; b < batch; ++b) {
      if (done[b]) continue;
      auto& r = result.rollouts[b];
      const std::size_t pos = static_cast<std::size_t>(s) + 1;
      const float* row = logp_cpu[static_cast<std::int64_t>(b)].data_ptr<float>();
      const std::span<const float> lp(row, static_cast<std::size_t>(eos) + 1);
      int tok;
      const bool forced = pos < prefixes[b].size();
      if (forced) {
        tok = prefixes[b][pos];
        if (tok < 0 || tok > eos) throw Error("prefix token out of range");
        forced_now[b] = tok;
      } else if (opt.mode == DecodeMode::kGreedy) {
        tok = argmax_first(lp);
      } else {
        std::vector<float> probs(lp.size());
        for (std::size_t i = 0; i < lp.size(); ++i) probs[i] = std::exp(lp[i]);
        tok = sample_index(probs, *opt.rng);
      }
      if (!forced) {
        r.logprob += lp[static_cast<std::size_t>(tok)];
        if (opt.track_grad) free_lp[b].push_back(logp[static_cast<std::int64_t>(b)][tok]);
      }
      r.tokens.push_back(tok);
      if (tok == eos) {
        r.hit_eos = true;
        done[b] = true;
      } else {
        r.polygon.vertices.push_back(vertex_of(tok, d));
        prev2[b] = prev[b];
        prev[b] = tok;
      }
      if (done[b] || s + 1 == steps) {
        r.final_h2 = state.h2[static_cast<std::int64_t>(b)].detach();
        done[b] = true;
      }
    }
    result.forced.push_back(forced_now);
  }

  for (std::size_t b = 0; b < batch; ++b) {
    auto& r = result.rollouts[b];
    if (opt.track_grad && !free_lp[b].empty()) {
      r.logprob_sum = torch::stack(free_lp[b]).sum();
    } else {
      r.logprob_sum = torch::zeros({}, fopts);
    }
  }
  if (opt.keep_logits && !step_logits.empty()) result.logits = torch::stack(step_logits);
  return result;
}

Rollout decode_greedy(PolygonModelImpl& model, const torch::Tensor& skip, GridVertex v0) {
  return rollout(model, skip, {{checked_token(v0, model.config().grid)}}, {}).rollouts[0];
}

Rollout decode_sample(PolygonModelImpl& model, const torch::Tensor& skip, GridVertex v0, double tau,
                      std::mt19937_64& rng) {
  RolloutOptions opt;
  opt.mode = DecodeMode::kSample;
  opt.tau = tau;
  opt.rng = &rng;
  return rollout(model, skip, {{checked_token(v0, model.config().grid)}}, opt).rollouts[0];
}

Rollout decode_with_prefix(PolygonModelImpl& model, const torch::Tensor& skip,
                           const std::vector<GridVertex>& prefix, bool closed) {
  if (prefix.empty()) throw Error("decode_with_prefix needs a nonempty prefix");
  const int d = model.config().grid;
  std::vector<int> tokens;
  for (const auto& v : prefix) tokens.push_back(checked_token(v, d));
  if (closed) tokens.push_back(eos_token(d));
  return rollout(model, skip, {tokens}, {}).rollouts[0];
}

TeacherForced teacher_forced(PolygonModelImpl& model, const torch::Tensor& skip,
                             const std::vector<std::vector<int>>& sequences) {
  RolloutOptions opt;
  opt.keep_logits = true;
  auto rb = rollout(model, skip, sequences, opt);
  const auto steps = static_cast<std::int64_t>(rb.forced.size());
  auto targets = torch::full({steps, static_cast<std::int64_t>(sequences.size())}, -1, torch::kInt64);
  auto acc = targets.accessor<std::int64_t, 2>();
  for (std::int64_t s = 0; s < steps; ++s) {
    for (std::size_t b = 0; b < sequences.size(); ++b) acc[s][static_cast<std::int64_t>(b)] = rb.forced[s][b];
  }
  return {rb.logits, targets};
}

BeamResult beam_search(PolygonModelImpl& model, const torch::Tensor& skip, GridVertex v0,
                       int beam_width) {
  check_skip(model, skip);
  if (skip.size(0) != 1) throw ShapeMismatch("beam search runs on one instance");
  if (beam_width < 1) throw Error("beam width must be >= 1");
  torch::NoGradGuard no_grad;
  const auto& cfg = model.config();
  const int d = cfg.grid;
  const int eos = eos_token(d);
  const auto fopts = skip.options();
  const int v0_tok = checked_token(v0, d);

  struct Hyp {
    std::vector<int> tokens;
    int prev, prev2;
    double score;
  };
  std::vector<Hyp> alive{{{}, v0_tok, -1, 0.0}};
  std::vector<std::pair<Hyp, torch::Tensor>> completed;
  auto state = model.decoder()->initial_state(1, fopts);

  double best_completed = -std::numeric_limits<double>::infinity();
  auto finish = [&](const Hyp& h, const torch::Tensor& h2) {
    completed.emplace_back(h, h2);
    best_completed = std::max(best_completed, h.score);
  };

  for (int s = 0; s < cfg.t_max && !alive.empty(); ++s) {
    const auto n = static_cast<std::int64_t>(alive.size());
    std::vector<int> prev, prev2;
    for (const auto& h : alive) {
      prev.push_back(h.prev);
      prev2.push_back(h.prev2);
    }
    const auto y0 = one_hot_planes(std::vector<int>(alive.size(), v0_tok), d, fopts);
    const auto skip_n = skip.expand({n, -1, -1, -1});
    auto out = model.decoder()->step(skip_n, state, one_hot_planes(prev, d, fopts),
                                     one_hot_planes(prev2, d, fopts), y0);
    const auto logp = torch::log_softmax(out.logits, 1).to(torch::kFloat32).contiguous();
    const std::size_t classes = static_cast<std::size_t>(eos) + 1;

    // Rank every (beam, token) extension; ties go to the lower beam, then the lower token.
    std::vector<double> scores(alive.size() * classes);
    for (std::size_t b = 0; b < alive.size(); ++b) {
      const float* row = logp[static_cast<std::int64_t>(b)].data_ptr<float>();
      for (std::size_t k = 0; k < classes; ++k) {
        scores[b * classes + k] = alive[b].score + row[k];
      }
    }
    const int keep = std::min<int>(beam_width, static_cast<int>(scores.size()));
    const auto best = topk_first(scores, keep);

    std::vector<Hyp> next;
    std::vector<std::int64_t> parents;
    for (int idx : best) {
      const auto b = static_cast<std::size_t>(idx) / classes;
      const int tok = static_cast<int>(static_cast<std::size_t>(idx) % classes);
      Hyp h = alive[b];
      h.score = scores[static_cast<std::size_t>(idx)];
      h.tokens.push_back(tok);
      if (tok == eos) {
        finish(h, out.state.h2[static_cast<std::int64_t>(b)]);
        continue;
      }
      h.prev2 = h.prev;
      h.prev = tok;
      next.push_back(h);
      parents.push_back(static_cast<std::int64_t>(b));
    }
    if (next.empty()) break;
    const auto idx = torch::tensor(parents, torch::kInt64);
    state = {out.state.h1.index_select(0, idx), out.state.c1.index_select(0, idx),
             out.state.h2.index_select(0, idx), out.state.c2.index_select(0, idx), out.state.t};
    alive = std::move(next);
    // Scores only decrease, so no open hypothesis can overtake a better finished one.
    if (alive.front().score <= best_completed) break;
    if (s + 1 == cfg.t_max) {
      for (std::size_t b = 0; b < alive.size(); ++b) {
        finish(alive[b], state.h2[static_cast<std::int64_t>(b)]);
      }
      alive.clear();
    }
  }

  std::stable_sort(completed.begin(), completed.end(),
                   [](const auto& a, const auto& b) { return a.first.score > b.first.score; });
  BeamResult res;
  for (const auto& [h, h2] : completed) {
    Rollout r;
    r.polygon = PolygonSeq{{v0}, d, true};
    r.tokens = h.tokens;
    for (int tok : h.tokens) {
      if (tok == eos) {
        r.hit_eos = true;
      } else {
        r.polygon.vertices.push_back(vertex_of(tok, d));
      }
    }
    r.logprob = h.score;
    r.logprob_sum = torch::tensor(h.score, fopts);
    r.final_h2 = h2;
    res.completed.push_back(std::move(r));
  }
  res.best = res.completed.front();
  return res;
}

}  // namespace polyloop::nn
