#include "polyloop/simulator.hpp"

#include <algorithm>

#include "polyloop/errors.hpp"

namespace polyloop::sim {

using geometry::GridVertex;
using geometry::PolygonSeq;

PolygonSeq align_gt(const PolygonSeq& pred, const PolygonSeq& gt) {
  if (gt.empty()) throw InvalidTarget("empty GT polygon");
  if (pred.empty()) return gt;
  PolygonSeq g = gt;
  const bool pred_cw = geometry::signed_area2(pred) >= 0;
  const bool gt_cw = geometry::signed_area2(gt) >= 0;
  if (pred_cw != gt_cw) std::reverse(g.vertices.begin(), g.vertices.end());
  std::size_t best = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (geometry::manhattan(g[i], pred[0]) < geometry::manhattan(g[best], pred[0])) best = i;
  }
  return geometry::rotate_start(g, best);
}

double polygon_iou(const PolygonSeq& poly, const geometry::BinaryMask& gt) {
  if (geometry::distinct_vertex_count(poly) < 3) return 0.0;
  return geometry::mask_iou(geometry::rasterize_polygon(poly, gt.grid_size()), gt);
}

SessionTrace simulate(Predictor& predictor, const data::InstanceSample& sample,
                      const SimulatorConfig& cfg) {
  if (cfg.T < 1) throw InvalidRange("T must be >= 1");
  if (!(cfg.T2 > 0.0 && cfg.T2 <= 1.0)) throw InvalidRange("T2 must be in (0, 1]");
  const auto& gt_mask = sample.gt_mask;
  const int max_clicks =
      cfg.max_clicks >= 0 ? cfg.max_clicks : static_cast<int>(sample.gt.size()) + 5;

  SessionTrace trace;
  PolygonSeq pred = predictor.predict(sample);
  trace.initial = pred;
  trace.initial_iou = polygon_iou(pred, gt_mask);
  double iou = trace.initial_iou;
  if (iou >= cfg.T2) {
    trace.accepted_without_correction = true;
    trace.final_polygon = pred;
    trace.final_iou = iou;
    return trace;
  }

  const PolygonSeq gt = align_gt(pred, sample.gt);
  const GridVertex ended{-1, -1};
  for (std::size_t i = 0; trace.clicks < max_clicks; ++i) {
    const bool have_pred = i < pred.size();
    const bool have_gt = i < gt.size();
    if (!have_pred && !have_gt) break;

    if (have_gt) {
      TraceStep st{static_cast<int>(i), have_pred ? pred[i] : ended, gt[i], false};
      if (!have_pred || geometry::manhattan(pred[i], gt[i]) >= cfg.T) {
        std::vector<GridVertex> prefix(pred.vertices.begin(),
                                       pred.vertices.begin() + static_cast<std::ptrdiff_t>(std::min(i, pred.size())));
        prefix.push_back(gt[i]);
        pred = predictor.predict_with_prefix(sample, prefix);
        st.corrected = true;
        ++trace.clicks;
      }
      trace.steps.push_back(st);
      if (st.corrected && cfg.early_stop) {
        iou = polygon_iou(pred, gt_mask);
        if (iou >= cfg.T2) break;
      }
      continue;
    }

    // Surplus predicted vertex: compared with the last GT vertex. A deviation
    // is corrected onto it like any other vertex and ends the session.
    const GridVertex last = gt[gt.size() - 1];
    TraceStep st{static_cast<int>(i), pred[i], last, false};
    if (geometry::manhattan(pred[i], last) >= cfg.T) {
      std::vector<GridVertex> prefix(pred.vertices.begin(),
                                     pred.vertices.begin() + static_cast<std::ptrdiff_t>(i));
      prefix.push_back(last);
      pred = predictor.predict_with_prefix(sample, prefix);
      st.corrected = true;
      ++trace.clicks;
      trace.steps.push_back(st);
      break;
    }
    trace.steps.push_back(st);
  }
  trace.final_polygon = pred;
  trace.final_iou = polygon_iou(pred, gt_mask);
  return trace;
}

nlohmann::json trace_to_json(const SessionTrace& trace) {
  auto poly = [](const PolygonSeq& p) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& v : p.vertices) a.push_back({v.x, v.y});
    return a;
  };
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({{"index", s.index},
                     {"predicted", {s.predicted.x, s.predicted.y}},
                     {"gt", {s.gt.x, s.gt.y}},
                     {"corrected", s.corrected}});
  }
  return {{"clicks", trace.clicks},
          {"initial_iou", trace.initial_iou},
          {"final_iou", trace.final_iou},
          {"accepted", trace.accepted_without_correction},
          {"initial", poly(trace.initial)},
          {"final", poly(trace.final_polygon)},
          {"steps", steps}};
}

Table clicks_vs_iou_curve(Predictor& predictor, const std::vector<data::InstanceSample>& samples,
                          const std::vector<int>& T_list, double T2, bool early_stop) {
  if (samples.empty()) throw Error("clicks_vs_iou_curve: empty dataset");
  Table table{{"T", "T2", "mean_clicks", "mean_iou", "n"}, {}};
  for (int T : T_list) {
    SimulatorConfig cfg;
    cfg.T = T;
    cfg.T2 = T2;
    cfg.early_stop = early_stop;
    double clicks = 0.0, iou = 0.0;
    for (const auto& s : samples) {
      const auto tr = simulate(predictor, s, cfg);
      clicks += tr.clicks;
      iou += tr.final_iou;
    }
    const double n = static_cast<double>(samples.size());
    table.rows.push_back({static_cast<double>(T), T2, clicks / n, iou / n, n});
  }
  return table;
}

PolygonSeq OraclePredictor::predict_with_prefix(const data::InstanceSample& s,
                                                const std::vector<GridVertex>& prefix) {
  PolygonSeq out{prefix, s.gt.grid_size, true};
  const auto aligned = align_gt(PolygonSeq{prefix, s.gt.grid_size, true}, s.gt);
  for (std::size_t i = prefix.size(); i < aligned.size(); ++i) out.vertices.push_back(aligned[i]);
  return out;
}

PolygonSeq FixedPredictor::predict_with_prefix(const data::InstanceSample&,
                                               const std::vector<GridVertex>& prefix) {
  PolygonSeq out{prefix, fixed_.grid_size, true};
  for (std::size_t i = prefix.size(); i < fixed_.size(); ++i) out.vertices.push_back(fixed_[i]);
  return out;
}

}  // namespace polyloop::sim
