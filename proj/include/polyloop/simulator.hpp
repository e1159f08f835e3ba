#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "polyloop/dataset.hpp"
#include "polyloop/geometry.hpp"
#include "polyloop/metrics.hpp"

namespace polyloop::sim {

// Anything that can propose a polygon for an instance and re-predict after
// a corrected prefix.
class Predictor {
 public:
  virtual ~Predictor() = default;
  virtual geometry::PolygonSeq predict(const data::InstanceSample& sample) = 0;
  virtual geometry::PolygonSeq predict_with_prefix(const data::InstanceSample& sample,
                                                   const std::vector<geometry::GridVertex>& prefix) = 0;
};

struct SimulatorConfig {
  int T = 1;                // correct when manhattan distance >= T
  double T2 = 0.8;          // accept when IoU >= T2
  int max_clicks = -1;      // -1: GT vertex count + 5
  bool early_stop = true;   // re-check T2 after every correction
};

struct TraceStep {
  int index = 0;
  geometry::GridVertex predicted;  // (-1, -1) when the prediction had ended
  geometry::GridVertex gt;
  bool corrected = false;
};

struct SessionTrace {
  std::vector<TraceStep> steps;
  geometry::PolygonSeq initial;
  geometry::PolygonSeq final_polygon;
  int clicks = 0;
  double initial_iou = 0.0;
  double final_iou = 0.0;
  bool accepted_without_correction = false;
};

// Rotates GT to start at its vertex nearest (manhattan, lowest index on
// ties) to pred[0], reversed if needed to match pred's winding.
geometry::PolygonSeq align_gt(const geometry::PolygonSeq& pred, const geometry::PolygonSeq& gt);

// IoU with fewer than 3 distinct vertices counting as 0.
double polygon_iou(const geometry::PolygonSeq& poly, const geometry::BinaryMask& gt);

SessionTrace simulate(Predictor& predictor, const data::InstanceSample& sample,
                      const SimulatorConfig& cfg);

nlohmann::json trace_to_json(const SessionTrace& trace);

// One row per T: T, T2, mean_clicks, mean_iou, n.
Table clicks_vs_iou_curve(Predictor& predictor, const std::vector<data::InstanceSample>& samples,
                          const std::vector<int>& T_list, double T2, bool early_stop = true);

// Predicts the GT exactly.
class OraclePredictor : public Predictor {
 public:
  geometry::PolygonSeq predict(const data::InstanceSample& s) override { return s.gt; }
  geometry::PolygonSeq predict_with_prefix(const data::InstanceSample& s,
                                           const std::vector<geometry::GridVertex>& prefix) override;
};

// Always proposes `fixed`; after a prefix, the prefix followed by the
// remaining vertices of `fixed`.
class FixedPredictor : public Predictor {
 public:
  explicit FixedPredictor(geometry::PolygonSeq fixed) : fixed_(std::move(fixed)) {}
  geometry::PolygonSeq predict(const data::InstanceSample&) override { return fixed_; }
  geometry::PolygonSeq predict_with_prefix(const data::InstanceSample&,
                                           const std::vector<geometry::GridVertex>& prefix) override;

 private:
  geometry::PolygonSeq fixed_;
};

}  // namespace polyloop::sim
