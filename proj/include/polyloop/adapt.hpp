#pragma once

#include <random>
#include <vector>

#include "polyloop/dataset.hpp"
#include "polyloop/evaluator.hpp"
#include "polyloop/inference.hpp"
#include "polyloop/model.hpp"
#include "polyloop/simulator.hpp"
#include "polyloop/training.hpp"

namespace polyloop::adapt {

struct ChunkSchedule {
  int chunks = 5;          // C
  int chunk_size = 40;     // CS
  int n_mle = 100;
  int n_rl = 50;
  int n_ev = 50;
  sim::SimulatorConfig sim{1, 0.8, -1, true};
  nn::TrainConfig mle;     // steps ignored; smoothed forced on
  nn::TrainConfig rl;
  nn::TrainConfig ev;
  nn::InferenceOptions inference{1, 1, false};
  std::uint64_t seed = 1;
};

struct CorrectedChunk {
  std::vector<data::InstanceSample> data;  // GT replaced by the corrected polygon
  int clicks = 0;
  int gt_vertices = 0;
  double mean_iou = 0.0;                   // of the model's automatic prediction

  // 100 * (1 - clicks / GT vertices), aggregated over the chunk.
  double clicks_saved_pct() const;
};

// Simulated annotation of a chunk. Throws EmptyChunk.
CorrectedChunk predict_and_correct(const std::vector<data::InstanceSample>& chunk,
                                   sim::Predictor& predictor, const sim::SimulatorConfig& cfg);

// Corrected instances from processed chunks, sampled uniformly.
class SeenBuffer {
 public:
  void add(const std::vector<data::InstanceSample>& items, int chunk);
  std::vector<data::InstanceSample> sample(std::size_t n, std::mt19937_64& rng) const;
  std::size_t size() const { return items_.size(); }
  const std::vector<int>& origins() const { return origin_; }

 private:
  std::vector<data::InstanceSample> items_;
  std::vector<int> origin_;
};

struct ChunkReport {
  int chunk = 0;            // 1-based
  double clicks_saved_pct = 0.0;
  double mean_iou = 0.0;
  int n = 0;
  int replayed = 0;
  std::vector<std::string> phases;  // training order applied after this chunk
};

struct AdaptResult {
  nn::PolygonModel model{nullptr};
  nn::EvaluatorNet evaluator{nullptr};
  std::vector<ChunkReport> reports;
};

// Online fine-tuning: per chunk predict-and-correct with the current model,
// add CS replay samples from earlier chunks, then MLE (smoothed targets),
// RL and evaluator training, and promote the result. The base model is not
// modified. Throws InvalidSchedule when the data cannot fill the chunks.
AdaptResult run_online_finetune(const std::vector<data::InstanceSample>& new_data,
                                const ChunkSchedule& schedule, nn::PolygonModelImpl& base,
                                nn::EvaluatorNetImpl* base_evaluator);

// Clicks saved per chunk by a model that is never updated (control arm).
std::vector<ChunkReport> frozen_baseline(const std::vector<data::InstanceSample>& new_data,
                                         const ChunkSchedule& schedule, nn::PolygonModelImpl& model,
                                         nn::EvaluatorNetImpl* evaluator);

}  // namespace polyloop::adapt
