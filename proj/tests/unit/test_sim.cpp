#include <torch/torch.h>

#include <algorithm>
#include <random>
#include <set>

#include "doctest.h"
#include "fixtures.hpp"
#include "polyloop/adapt.hpp"
#include "polyloop/checkpoint.hpp"
#include "polyloop/errors.hpp"
#include "polyloop/predictor.hpp"
#include "polyloop/simulator.hpp"

using namespace polyloop;
using geometry::GridVertex;
using geometry::PolygonSeq;

namespace {

data::InstanceSample sample_of(const PolygonSeq& gt, const std::string& id = "s") {
  data::InstanceSample s;
  s.id = id;
  s.gt = gt;
  s.gt_mask = geometry::rasterize_polygon(gt, gt.grid_size);
  return s;
}

const PolygonSeq kSquare{{{4, 4}, {20, 4}, {20, 20}, {4, 20}}, 28, true};

// Orientation by the shoelace sum, independent of the library helpers.
long long shoelace(const PolygonSeq& p) {
  long long s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto a = p[i];
    const auto b = p[(i + 1) % p.size()];
    s += static_cast<long long>(a.x) * b.y - static_cast<long long>(b.x) * a.y;
  }
  return s;
}

PolygonSeq random_poly(std::mt19937_64& rng, int n) {
  std::uniform_int_distribution<int> c(0, 27);
  PolygonSeq p{{}, 28, true};
  for (int i = 0; i < n; ++i) p.vertices.push_back({c(rng), c(rng)});
  return p;
}

}  // namespace

TEST_CASE("a perfect predictor needs no clicks at any threshold") {
  sim::OraclePredictor oracle;
  std::mt19937_64 rng(1);
  for (int i = 0; i < 20; ++i) {
    auto gt = geometry::canonical_orientation(random_poly(rng, 5));
    if (geometry::distinct_vertex_count(gt) < 3 || shoelace(gt) == 0) continue;
    const auto s = sample_of(gt);
    for (int T = 1; T <= 4; ++T) {
      for (double T2 : {0.8, 1.0}) {
        const auto tr = sim::simulate(oracle, s, {T, T2, -1, true});
        CHECK(tr.clicks == 0);
        CHECK(tr.final_iou == 1.0);
      }
    }
  }
}

TEST_CASE("a prediction far from every GT vertex costs one click per vertex") {
  const PolygonSeq far{{{0, 27}, {1, 27}, {1, 26}, {0, 26}}, 28, true};
  sim::FixedPredictor stub(far);
  const auto s = sample_of(kSquare);
  const auto tr = sim::simulate(stub, s, {1, 1.0, -1, false});
  CHECK(tr.clicks == 4);
  CHECK((tr.final_polygon == sim::align_gt(far, kSquare)));
  CHECK(tr.final_iou == 1.0);
  CHECK(tr.initial_iou == 0.0);
  CHECK(tr.steps.size() == 4);
}

TEST_CASE("missing and surplus predicted vertices") {
  const auto s = sample_of(kSquare);
  SUBCASE("a short prediction pays for each missing vertex") {
    sim::FixedPredictor stub(PolygonSeq{{{4, 4}, {20, 4}}, 28, true});
    const auto tr = sim::simulate(stub, s, {1, 1.0, -1, false});
    CHECK(tr.clicks == 2);
    CHECK(tr.final_polygon.size() == 4);
    CHECK(tr.final_iou == 1.0);
  }
  SUBCASE("a deviating surplus vertex costs one click and ends the session") {
    sim::FixedPredictor stub(PolygonSeq{{{4, 4}, {20, 4}, {20, 20}, {4, 20}, {12, 12}, {2, 2}}, 28, true});
    const auto tr = sim::simulate(stub, s, {1, 1.0, -1, false});
    CHECK(tr.clicks == 1);
    REQUIRE(tr.final_polygon.size() >= 5);
    CHECK((tr.final_polygon[4] == GridVertex{4, 20}));
    CHECK(tr.steps.back().index == 4);
  }
  SUBCASE("a surplus vertex on the last GT vertex is free") {
    sim::FixedPredictor stub(PolygonSeq{{{4, 4}, {20, 4}, {20, 20}, {4, 20}, {4, 20}}, 28, true});
    const auto tr = sim::simulate(stub, s, {1, 1.0, -1, false});
    CHECK(tr.clicks == 0);
  }
}

TEST_CASE("click budget caps a session") {
  const PolygonSeq far{{{0, 27}, {1, 27}, {1, 26}, {0, 26}}, 28, true};
  sim::FixedPredictor stub(far);
  const auto tr = sim::simulate(stub, sample_of(kSquare), {1, 1.0, 2, false});
  CHECK(tr.clicks == 2);
  CHECK_THROWS_AS(sim::simulate(stub, sample_of(kSquare), {0, 0.8, -1, true}), InvalidRange);
  CHECK_THROWS_AS(sim::simulate(stub, sample_of(kSquare), {1, 1.5, -1, true}), InvalidRange);
}

TEST_CASE("acceptance threshold: an adequate prediction is taken as is") {
  // IoU 0.75-ish prediction: accepted at T2 = 0.7, corrected at T2 = 1.
  sim::FixedPredictor stub(PolygonSeq{{{4, 4}, {20, 4}, {20, 16}, {4, 16}}, 28, true});
  const auto s = sample_of(kSquare);
  const auto lenient = sim::simulate(stub, s, {1, 0.7, -1, true});
  CHECK(lenient.accepted_without_correction);
  CHECK(lenient.clicks == 0);
  const auto strict = sim::simulate(stub, s, {1, 1.0, -1, true});
  CHECK(strict.clicks == 2);
  CHECK(strict.final_iou == 1.0);
}

TEST_CASE("early stop ends a session once the acceptance IoU is reached") {
  const PolygonSeq pred{{{4, 4}, {20, 4}, {20, 12}, {4, 12}}, 28, true};
  sim::FixedPredictor stub(pred);
  const auto s = sample_of(kSquare);
  const auto early = sim::simulate(stub, s, {1, 0.8, -1, true});
  const auto late = sim::simulate(stub, s, {1, 0.8, -1, false});
  CHECK(early.clicks <= late.clicks);
  CHECK(early.final_iou >= 0.8);
}

TEST_CASE("clicks do not increase with the correction threshold for a fixed predictor") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    auto gt = geometry::canonical_orientation(random_poly(rng, 6));
    if (geometry::distinct_vertex_count(gt) < 3 || shoelace(gt) == 0) continue;
    PolygonSeq pred = gt;
    std::uniform_int_distribution<int> j(-3, 3);
    for (auto& v : pred.vertices) {
      v.x = std::clamp(v.x + j(rng), 0, 27);
      v.y = std::clamp(v.y + j(rng), 0, 27);
    }
    sim::FixedPredictor stub(pred);
    const auto s = sample_of(gt);
    int prev = 1 << 30;
    for (int T = 1; T <= 4; ++T) {
      const int c = sim::simulate(stub, s, {T, 1.0, -1, false}).clicks;
      CHECK(c <= prev);
      prev = c;
    }
  }
}

TEST_CASE("align_gt matches a brute-force rotation search") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const auto gt = random_poly(rng, 3 + static_cast<int>(rng() % 6));
    const auto pred = random_poly(rng, 3 + static_cast<int>(rng() % 6));
    const auto got = sim::align_gt(pred, gt);
    // Expected: gt, reversed when the windings differ, rotated to the first
    // vertex with minimal manhattan distance to pred[0].
    auto seq = gt.vertices;
    if ((shoelace(pred) >= 0) != (shoelace(gt) >= 0)) std::reverse(seq.begin(), seq.end());
    std::size_t best = 0;
    int bd = 1 << 30;
    for (std::size_t i = 0; i < seq.size(); ++i) {
      const int d = std::abs(seq[i].x - pred[0].x) + std::abs(seq[i].y - pred[0].y);
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    std::rotate(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(best), seq.end());
    CHECK((got.vertices == seq));
  }
  CHECK_THROWS_AS(sim::align_gt(kSquare, PolygonSeq{{}, 28, true}), InvalidTarget);
}

TEST_CASE("curve table has one row per threshold") {
  sim::OraclePredictor oracle;
  const std::vector<data::InstanceSample> data{sample_of(kSquare, "a"), sample_of(kSquare, "b")};
  const auto t = sim::clicks_vs_iou_curve(oracle, data, {1, 2, 3, 4}, 0.8);
  CHECK(t.rows.size() == 4);
  CHECK(t.columns == std::vector<std::string>{"T", "T2", "mean_clicks", "mean_iou", "n"});
  for (const auto& r : t.rows) CHECK(r[t.column("mean_clicks")] == 0.0);
}

TEST_CASE("traces are byte-identical across runs of a model predictor") {
  auto model = fixture::tiny_model(21);
  const auto data = fixture::samples(model->config(), 5, 3);
  auto run = [&] {
    nn::ModelPredictor pred(model, nullptr, {3, 2, false});
    std::string out;
    for (const auto& s : data) out += sim::trace_to_json(sim::simulate(pred, s, {1, 0.8, -1, true})).dump() + "\n";
    return out;
  };
  const auto a = run();
  CHECK(a == run());
  CHECK(a.size() > 10);
}

TEST_CASE("predict_and_correct with a perfect predictor saves every click") {
  sim::OraclePredictor oracle;
  const std::vector<data::InstanceSample> chunk{sample_of(kSquare, "a"), sample_of(kSquare, "b")};
  const auto c = adapt::predict_and_correct(chunk, oracle, {1, 0.8, -1, true});
  CHECK(c.clicks == 0);
  CHECK(c.gt_vertices == 8);
  CHECK(c.clicks_saved_pct() == 100.0);
  REQUIRE(c.data.size() == 2);
  CHECK(geometry::mask_iou(c.data[0].gt_mask, chunk[0].gt_mask) == 1.0);
  CHECK_THROWS_AS(adapt::predict_and_correct({}, oracle, {}), EmptyChunk);
}

TEST_CASE("corrected chunks carry the annotator's final polygon as the new target") {
  sim::FixedPredictor stub(PolygonSeq{{{0, 27}, {1, 27}, {1, 26}, {0, 26}}, 28, true});
  const std::vector<data::InstanceSample> chunk{sample_of(kSquare, "a")};
  const auto c = adapt::predict_and_correct(chunk, stub, {1, 1.0, -1, false});
  CHECK(c.clicks == 4);
  CHECK(c.clicks_saved_pct() == 0.0);
  CHECK(geometry::mask_iou(c.data[0].gt_mask, chunk[0].gt_mask) == 1.0);
}

TEST_CASE("seen buffer samples only what it was given") {
  adapt::SeenBuffer buf;
  std::mt19937_64 rng(1);
  CHECK(buf.sample(5, rng).empty());
  buf.add({sample_of(kSquare, "a"), sample_of(kSquare, "b")}, 1);
  buf.add({sample_of(kSquare, "c")}, 2);
  CHECK(buf.size() == 3);
  CHECK(buf.origins() == std::vector<int>{1, 1, 2});
  std::set<std::string> ids;
  for (const auto& s : buf.sample(200, rng)) ids.insert(s.id);
  CHECK(ids == std::set<std::string>{"a", "b", "c"});
}

TEST_CASE("online fine-tuning: phase order, replay from earlier chunks, base untouched") {
  torch::manual_seed(2);
  const auto cfg = nn::model_preset("tiny");
  nn::PolygonModel base(cfg);
  base->eval();
  nn::PolygonModel snapshot(cfg);
  nn::copy_state(*base, *snapshot);
  const auto data = fixture::samples(cfg, 14, 8, "shift");
  REQUIRE(data.size() >= 12);

  adapt::ChunkSchedule s;
  s.chunks = 3;
  s.chunk_size = 4;
  s.n_mle = 2;
  s.n_rl = 1;
  s.n_ev = 1;
  s.mle.batch_size = s.rl.batch_size = s.ev.batch_size = 2;
  s.ev.tau = 0.3;
  const auto res = adapt::run_online_finetune(data, s, *base, nullptr);
  REQUIRE(res.reports.size() == 3);
  for (const auto& r : res.reports) {
    CHECK(r.phases == std::vector<std::string>{"mle", "rl", "ev"});
    CHECK(r.n == 4);
  }
  CHECK(res.reports[0].replayed == 0);
  CHECK(res.reports[1].replayed == 4);
  CHECK(res.reports[2].replayed == 4);

  for (const auto& p : base->named_parameters()) {
    CHECK(torch::equal(p.value(), snapshot->named_parameters()[p.key()]));
  }
  const auto frozen = adapt::frozen_baseline(data, s, *base, nullptr);
  CHECK(frozen.size() == 3);

  s.chunks = 4;
  CHECK_THROWS_AS(adapt::run_online_finetune(data, s, *base, nullptr), InvalidSchedule);
  s.chunks = 1;
  s.n_rl = 0;
  CHECK_THROWS_AS(adapt::frozen_baseline(data, s, *base, nullptr), InvalidSchedule);
}
