#include "polyloop/adapt.hpp"

#include "polyloop/checkpoint.hpp"
#include "polyloop/errors.hpp"
#include "polyloop/predictor.hpp"

namespace polyloop::adapt {

using geometry::PolygonSeq;

double CorrectedChunk::clicks_saved_pct() const {
  return gt_vertices == 0 ? 0.0 : 100.0 * (1.0 - static_cast<double>(clicks) / gt_vertices);
}

namespace {

PolygonSeq normalise(const PolygonSeq& poly, const PolygonSeq& fallback) {
  auto p = geometry::remove_consecutive_duplicates(poly);
  if (geometry::distinct_vertex_count(p) < 3 || geometry::signed_area2(p) == 0) return fallback;
  p = geometry::simplify_collinear(geometry::canonical_orientation(p));
  return p;
}

std::vector<data::InstanceSample> chunk_of(const std::vector<data::InstanceSample>& all,
                                           const ChunkSchedule& s, int c) {
  const auto begin = all.begin() + static_cast<std::ptrdiff_t>(c) * s.chunk_size;
  return {begin, begin + s.chunk_size};
}

void check_schedule(const std::vector<data::InstanceSample>& data, const ChunkSchedule& s) {
  if (s.chunks < 1 || s.chunk_size < 1 || s.n_mle < 1 || s.n_rl < 1 || s.n_ev < 1) {
    throw InvalidSchedule("chunk counts and step counts must be positive");
  }
  if (static_cast<std::size_t>(s.chunks) * static_cast<std::size_t>(s.chunk_size) > data.size()) {
    throw InvalidSchedule(std::to_string(s.chunks) + " chunks of " + std::to_string(s.chunk_size) +
                          " need more than the " + std::to_string(data.size()) + " instances given");
  }
}

}  // namespace

CorrectedChunk predict_and_correct(const std::vector<data::InstanceSample>& chunk,
                                   sim::Predictor& predictor, const sim::SimulatorConfig& cfg) {
  if (chunk.empty()) throw EmptyChunk("nothing to annotate");
  CorrectedChunk out;
  for (const auto& s : chunk) {
    const auto trace = sim::simulate(predictor, s, cfg);
    out.clicks += trace.clicks;
    out.gt_vertices += static_cast<int>(s.gt.size());
    out.mean_iou += trace.initial_iou / static_cast<double>(chunk.size());
    auto corrected = s;
    corrected.gt = normalise(trace.final_polygon, sim::align_gt(trace.final_polygon, s.gt));
    corrected.gt_mask = geometry::rasterize_polygon(corrected.gt, corrected.gt.grid_size);
    out.data.push_back(std::move(corrected));
  }
  return out;
}

void SeenBuffer::add(const std::vector<data::InstanceSample>& items, int chunk) {
  for (const auto& s : items) {
    items_.push_back(s);
    origin_.push_back(chunk);
  }
}

std::vector<data::InstanceSample> SeenBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  std::vector<data::InstanceSample> out;
  if (items_.empty()) return out;
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  for (std::size_t i = 0; i < n; ++i) out.push_back(items_[pick(rng)]);
  return out;
}

AdaptResult run_online_finetune(const std::vector<data::InstanceSample>& new_data,
                                const ChunkSchedule& schedule, nn::PolygonModelImpl& base,
                                nn::EvaluatorNetImpl* base_evaluator) {
  check_schedule(new_data, schedule);
  AdaptResult res;
  res.model = nn::PolygonModel(base.config());
  nn::copy_state(base, *res.model);
  res.model->eval();
  if (base_evaluator) {
    res.evaluator = nn::EvaluatorNet(base_evaluator->config());
    nn::copy_state(*base_evaluator, *res.evaluator);
    res.evaluator->eval();
  } else {
    res.evaluator = nn::EvaluatorNet(base.config());
  }
  SeenBuffer seen;
  std::mt19937_64 rng(schedule.seed);

  for (int c = 0; c < schedule.chunks; ++c) {
    const auto raw = chunk_of(new_data, schedule, c);
    CorrectedChunk corrected;
    {
      // Predictions for this chunk come from the model promoted after the previous one.
      nn::ModelPredictor predictor(res.model, base_evaluator || c > 0 ? res.evaluator : nn::EvaluatorNet{nullptr},
                                   schedule.inference);
      corrected = predict_and_correct(raw, predictor, schedule.sim);
    }
    ChunkReport rep;
    rep.chunk = c + 1;
    rep.clicks_saved_pct = corrected.clicks_saved_pct();
    rep.mean_iou = corrected.mean_iou;
    rep.n = static_cast<int>(raw.size());

    auto train_set = corrected.data;
    const auto replay = seen.sample(static_cast<std::size_t>(schedule.chunk_size), rng);
    rep.replayed = static_cast<int>(replay.size());
    train_set.insert(train_set.end(), replay.begin(), replay.end());
    seen.add(corrected.data, c + 1);

    const std::uint64_t chunk_seed = schedule.seed * 1000003ULL + static_cast<std::uint64_t>(c);
    auto mle = schedule.mle;
    mle.steps = schedule.n_mle;
    mle.smoothed = true;
    mle.seed = chunk_seed;
    nn::train_mle(*res.model, train_set, mle);
    rep.phases.push_back("mle");

    auto rl = schedule.rl;
    rl.steps = schedule.n_rl;
    rl.seed = chunk_seed + 1;
    nn::train_rl(*res.model, train_set, rl);
    rep.phases.push_back("rl");

    auto ev = schedule.ev;
    ev.steps = schedule.n_ev;
    ev.seed = chunk_seed + 2;
    nn::train_evaluator(*res.model, *res.evaluator, train_set, ev);
    rep.phases.push_back("ev");

    res.reports.push_back(rep);
  }
  return res;
}

std::vector<ChunkReport> frozen_baseline(const std::vector<data::InstanceSample>& new_data,
                                         const ChunkSchedule& schedule, nn::PolygonModelImpl& model,
                                         nn::EvaluatorNetImpl* evaluator) {
  check_schedule(new_data, schedule);
  nn::PolygonModel copy(model.config());
  nn::copy_state(model, *copy);
  nn::EvaluatorNet ev{nullptr};
  if (evaluator) {
    ev = nn::EvaluatorNet(evaluator->config());
    nn::copy_state(*evaluator, *ev);
  }
  nn::ModelPredictor predictor(copy, ev, schedule.inference);
  std::vector<ChunkReport> out;
  for (int c = 0; c < schedule.chunks; ++c) {
    const auto raw = chunk_of(new_data, schedule, c);
    const auto corrected = predict_and_correct(raw, predictor, schedule.sim);
    out.push_back({c + 1, corrected.clicks_saved_pct(), corrected.mean_iou, static_cast<int>(raw.size()), 0, {}});
  }
  return out;
}

}  // namespace polyloop::adapt
