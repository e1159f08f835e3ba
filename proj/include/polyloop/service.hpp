#pragma once

#include <torch/torch.h>

#include <atomic>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "polyloop/dataset.hpp"
#include "polyloop/errors.hpp"
#include "polyloop/evaluator.hpp"
#include "polyloop/ggnn.hpp"
#include "polyloop/inference.hpp"
#include "polyloop/model.hpp"
#include "polyloop/simulator.hpp"
#include "polyloop/store.hpp"

namespace polyloop::service {

// Failure with an HTTP-style status class attached.
class ServiceError : public Error {
 public:
  ServiceError(int status, const std::string& what) : Error(what), status_(status) {}
  int status() const { return status_; }

 private:
  int status_;
};

struct ServiceConfig {
  std::filesystem::path model_checkpoint;
  std::filesystem::path evaluator_checkpoint;  // optional
  std::filesystem::path ggnn_checkpoint;       // optional
  int k = 1;
  int beam_width = 1;
  sim::SimulatorConfig sim;
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path store_path = "annotations.jsonl";
  std::filesystem::path image_root;  // relative image refs resolve here
  bool finetune_queue = false;
  double enlarge = 0.15;

  // Throws PrerequisiteMissing when a configured checkpoint is absent.
  void validate() const;
};

// Weights shared read-only by every request. Swapped as a whole.
struct ModelBundle {
  nn::PolygonModel model{nullptr};
  nn::EvaluatorNet evaluator{nullptr};
  nn::Ggnn ggnn{nullptr};
};

std::shared_ptr<ModelBundle> load_bundle(const ServiceConfig& cfg);

enum class SessionStatus { kOpen, kCommitted, kAbandoned };
std::string to_string(SessionStatus s);

struct UpscaledVertex {
  geometry::Point2 p;
  nn::NodeRole role = nn::NodeRole::kOriginal;
};

// Snapshot of a session returned to clients. `vertices` is the D-grid
// polygon (the indices `correct` refers to), `upscaled` the D' polygon,
// both in image pixels at cell centres.
struct SessionView {
  std::string id;
  SessionStatus status = SessionStatus::kOpen;
  int clicks = 0;
  std::vector<geometry::Point2> vertices;
  std::vector<geometry::GridVertex> grid;
  std::vector<UpscaledVertex> upscaled;
  std::size_t committed_prefix = 0;
  geometry::BBox crop_box;
  double predicted_iou = 0.0;
};

nlohmann::json to_json(const SessionView& v);

struct FinetuneItem {
  std::string session_id;
  std::string image_ref;
  geometry::BBox bbox;
  std::vector<geometry::Point2> polygon;  // image pixels, D' polygon
};

class AnnotationService {
 public:
  AnnotationService(ServiceConfig cfg, std::shared_ptr<ModelBundle> models);

  std::string create_session(const std::string& image_ref);
  SessionView predict(const std::string& id, const geometry::BBox& bbox);
  // index == current length appends a vertex after the last one.
  SessionView correct(const std::string& id, std::size_t index, geometry::Point2 point);
  data::AnnotationRecord commit(const std::string& id);
  void abandon(const std::string& id);
  SessionView view(const std::string& id);

  // Atomic swap; sessions keep the weights their features came from until
  // their next predict.
  void swap_models(std::shared_ptr<ModelBundle> models);
  std::shared_ptr<ModelBundle> models() const;

  std::size_t session_count() const;
  std::size_t finetune_queue_size() const;
  std::vector<FinetuneItem> drain_finetune_queue();

  const ServiceConfig& config() const { return cfg_; }
  data::AnnotationStore& store() { return store_; }

 private:
  struct Session {
    std::mutex mu;
    std::string id;
    std::string image_ref;
    std::shared_ptr<const Image> image;
    SessionStatus status = SessionStatus::kOpen;
    std::shared_ptr<ModelBundle> models;
    bool has_bbox = false;
    geometry::BBox bbox;
    geometry::BBox crop_box;
    torch::Tensor skip;
    torch::Tensor ggnn_grid;
    std::vector<geometry::GridVertex> prefix;
    geometry::PolygonSeq polygon;
    geometry::PolygonSeq upscaled;
    bool upscaled_by_ggnn = false;
    double predicted_iou = 0.0;
    int clicks = 0;
    std::int64_t created_ms = 0;
  };

  std::shared_ptr<Session> find(const std::string& id) const;
  void refresh_upscaled(Session& s);
  SessionView view_locked(const Session& s) const;

  ServiceConfig cfg_;
  data::CropSpec crop_;
  data::AnnotationStore store_;
  mutable std::mutex models_mu_;
  std::shared_ptr<ModelBundle> models_;
  mutable std::mutex sessions_mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::atomic<std::uint64_t> next_id_{1};
  mutable std::mutex queue_mu_;
  std::deque<FinetuneItem> queue_;
};

}  // namespace polyloop::service
