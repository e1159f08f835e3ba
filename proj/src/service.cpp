#include "polyloop/service.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "polyloop/decoding.hpp"
#include "polyloop/ggnn_training.hpp"
#include "polyloop/tensor_utils.hpp"
#include "polyloop/training.hpp"

namespace polyloop::service {

using geometry::BBox;
using geometry::GridVertex;
using geometry::Point2;
using geometry::PolygonSeq;
using json = nlohmann::json;

void ServiceConfig::validate() const {
  auto need = [](const std::filesystem::path& p, const char* what, bool required) {
    if (p.empty()) {
      if (required) throw PrerequisiteMissing(std::string(what) + " checkpoint not configured");
      return;
    }
    if (!std::filesystem::exists(p)) {
      throw PrerequisiteMissing(std::string(what) + " checkpoint not found: " + p.string());
    }
  };
  need(model_checkpoint, "model", true);
  need(evaluator_checkpoint, "evaluator", false);
  need(ggnn_checkpoint, "ggnn", false);
  if (k < 1) throw InvalidK("k must be >= 1");
  if (beam_width < 1) throw InvalidK("beam width must be >= 1");
}

std::shared_ptr<ModelBundle> load_bundle(const ServiceConfig& cfg) {
  cfg.validate();
  auto b = std::make_shared<ModelBundle>();
  b->model = nn::load_model(cfg.model_checkpoint);
  b->model->eval();
  if (!cfg.evaluator_checkpoint.empty()) {
    b->evaluator = nn::load_evaluator(cfg.evaluator_checkpoint);
    b->evaluator->eval();
  }
  if (!cfg.ggnn_checkpoint.empty()) {
    b->ggnn = nn::load_ggnn(cfg.ggnn_checkpoint);
    b->ggnn->eval();
  }
  return b;
}

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::kOpen: return "open";
    case SessionStatus::kCommitted: return "committed";
    case SessionStatus::kAbandoned: return "abandoned";
  }
  return "open";
}

json to_json(const SessionView& v) {
  json verts = json::array();
  for (const auto& p : v.vertices) verts.push_back({p.x, p.y});
  json grid = json::array();
  for (const auto& g : v.grid) grid.push_back({g.x, g.y});
  json up = json::array();
  for (const auto& u : v.upscaled) {
    up.push_back({{"x", u.p.x},
                  {"y", u.p.y},
                  {"role", u.role == nn::NodeRole::kOriginal ? "original" : "midpoint"}});
  }
  return {{"session_id", v.id},
          {"status", to_string(v.status)},
          {"clicks", v.clicks},
          {"vertices", verts},
          {"grid_vertices", grid},
          {"upscaled", up},
          {"committed_prefix", v.committed_prefix},
          {"crop_box", {v.crop_box.x0, v.crop_box.y0, v.crop_box.x1, v.crop_box.y1}},
          {"predicted_iou", v.predicted_iou}};
}

AnnotationService::AnnotationService(ServiceConfig cfg, std::shared_ptr<ModelBundle> models)
    : cfg_(std::move(cfg)), store_(cfg_.store_path), models_(std::move(models)) {
  if (!models_ || !models_->model) throw PrerequisiteMissing("service needs a polygon model");
  const auto& mc = models_->model->config();
  crop_ = data::CropSpec{mc.crop_size, mc.grid, mc.fine_grid, cfg_.enlarge};
}

std::shared_ptr<AnnotationService::Session> AnnotationService::find(const std::string& id) const {
  std::lock_guard lock(sessions_mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw ServiceError(404, "unknown session '" + id + "'");
  return it->second;
}

std::string AnnotationService::create_session(const std::string& image_ref) {
  if (image_ref.empty()) throw ServiceError(400, "image reference is empty");
  std::filesystem::path p = image_ref;
  if (p.is_relative() && !cfg_.image_root.empty()) p = cfg_.image_root / p;
  if (!std::filesystem::exists(p)) throw ServiceError(404, "image not found: " + p.string());
  std::shared_ptr<const Image> image;
  try {
    image = std::make_shared<const Image>(read_ppm(p));
  } catch (const std::exception& e) {
    throw ServiceError(404, "cannot read image " + p.string() + ": " + e.what());
  }
  auto s = std::make_shared<Session>();
  std::ostringstream id;
  id << "s" << next_id_.fetch_add(1) << "-" << std::hex << (data::now_ms() & 0xffffff);
  s->id = id.str();
  s->image_ref = image_ref;
  s->image = std::move(image);
  s->created_ms = data::now_ms();
  std::lock_guard lock(sessions_mu_);
  sessions_.emplace(s->id, s);
  return s->id;
}

void AnnotationService::refresh_upscaled(Session& s) {
  auto& m = *s.models;
  s.upscaled_by_ggnn = false;
  if (m.ggnn && geometry::distinct_vertex_count(s.polygon) >= 3) {
    s.upscaled = nn::upscale(*m.ggnn, s.ggnn_grid, s.polygon);
    s.upscaled_by_ggnn = true;
  } else if (!s.polygon.vertices.empty()) {
    s.upscaled = geometry::upscale_nearest(s.polygon, crop_.fine_grid);
  } else {
    s.upscaled = PolygonSeq{{}, crop_.fine_grid, true};
  }
}

SessionView AnnotationService::predict(const std::string& id, const BBox& bbox) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (s->status != SessionStatus::kOpen) throw ServiceError(409, "session " + id + " is not open");
  if (!std::isfinite(bbox.x0) || !std::isfinite(bbox.y0) || !std::isfinite(bbox.x1) ||
      !std::isfinite(bbox.y1) || !bbox.valid()) {
    throw ServiceError(400, "degenerate bounding box");
  }
  const BBox inside{std::max(0.0, bbox.x0), std::max(0.0, bbox.y0),
                    std::min<double>(s->image->width, bbox.x1),
                    std::min<double>(s->image->height, bbox.y1)};
  if (!inside.valid()) throw ServiceError(400, "bounding box lies outside the image");

  s->models = models();
  auto& model = *s->models->model;
  s->bbox = bbox;
  s->has_bbox = true;
  s->crop_box = data::crop_region(bbox, s->image->width, s->image->height, crop_);
  data::InstanceSample sample;
  sample.id = s->id;
  sample.crop = crop_resize(*s->image, s->crop_box, crop_.crop_size);

  torch::NoGradGuard no_grad;
  const auto feats = model.encode(nn::crops_tensor({&sample}), static_cast<bool>(s->models->ggnn));
  s->skip = feats.skip;
  s->ggnn_grid = feats.ggnn_grid;
  nn::InferenceOptions opt;
  opt.k = cfg_.k;
  opt.beam_width = cfg_.beam_width;
  auto* ev = s->models->evaluator ? s->models->evaluator.get() : nullptr;
  const auto res = nn::full_inference(model, ev, s->skip, opt);
  s->polygon = res.best.polygon;
  s->predicted_iou = res.best.predicted_iou;
  s->prefix.clear();
  refresh_upscaled(*s);
  return view_locked(*s);
}

SessionView AnnotationService::correct(const std::string& id, std::size_t index, Point2 point) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (s->status != SessionStatus::kOpen) throw ServiceError(409, "session " + id + " is not open");
  if (!s->has_bbox) throw ServiceError(409, "session " + id + " has no prediction yet");
  if (index > s->polygon.size()) {
    throw ServiceError(400, "vertex index " + std::to_string(index) + " out of range (polygon has " +
                                std::to_string(s->polygon.size()) + " vertices)");
  }
  if (!std::isfinite(point.x) || !std::isfinite(point.y)) throw ServiceError(400, "point is not finite");

  const int cs = crop_.crop_size;
  Point2 c = data::image_to_crop(point, s->crop_box, cs);
  c.x = std::clamp(c.x, 0.0, std::nextafter(static_cast<double>(cs), 0.0));
  c.y = std::clamp(c.y, 0.0, std::nextafter(static_cast<double>(cs), 0.0));
  const GridVertex v = geometry::crop_to_grid(c, crop_.grid_size, cs);

  std::vector<GridVertex> prefix(s->polygon.vertices.begin(),
                                 s->polygon.vertices.begin() + static_cast<std::ptrdiff_t>(index));
  prefix.push_back(v);
  const auto r = nn::decode_with_prefix(*s->models->model, s->skip, prefix);
  s->polygon = r.polygon;
  s->prefix = std::move(prefix);
  ++s->clicks;
  refresh_upscaled(*s);
  return view_locked(*s);
}

data::AnnotationRecord AnnotationService::commit(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (s->status != SessionStatus::kOpen) {
    throw ServiceError(409, "session " + id + " is already " + to_string(s->status));
  }
  if (!s->has_bbox || s->polygon.vertices.empty()) {
    throw ServiceError(409, "session " + id + " has no polygon to commit");
  }
  data::AnnotationRecord rec;
  rec.session_id = s->id;
  rec.instance_ref = s->image_ref;
  for (const auto& v : s->upscaled.vertices) {
    rec.polygon.push_back(
        data::crop_to_image(geometry::grid_to_crop(v, crop_.fine_grid, crop_.crop_size), s->crop_box,
                            crop_.crop_size));
  }
  rec.clicks = s->clicks;
  rec.created_ms = s->created_ms;
  rec.committed_ms = data::now_ms();
  store_.append(rec);
  s->status = SessionStatus::kCommitted;
  if (cfg_.finetune_queue) {
    std::lock_guard q(queue_mu_);
    queue_.push_back({s->id, s->image_ref, s->bbox, rec.polygon});
  }
  return rec;
}

void AnnotationService::abandon(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (s->status == SessionStatus::kOpen) s->status = SessionStatus::kAbandoned;
}

SessionView AnnotationService::view(const std::string& id) {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return view_locked(*s);
}

SessionView AnnotationService::view_locked(const Session& s) const {
  SessionView v;
  v.id = s.id;
  v.status = s.status;
  v.clicks = s.clicks;
  v.committed_prefix = s.prefix.size();
  v.crop_box = s.crop_box;
  v.predicted_iou = s.predicted_iou;
  const int cs = crop_.crop_size;
  for (const auto& g : s.polygon.vertices) {
    v.grid.push_back(g);
    v.vertices.push_back(data::crop_to_image(geometry::grid_to_crop(g, crop_.grid_size, cs), s.crop_box, cs));
  }
  for (std::size_t i = 0; i < s.upscaled.vertices.size(); ++i) {
    const auto p = data::crop_to_image(geometry::grid_to_crop(s.upscaled.vertices[i], crop_.fine_grid, cs),
                                       s.crop_box, cs);
    const auto role = s.upscaled_by_ggnn && i % 2 == 1 ? nn::NodeRole::kMidpoint : nn::NodeRole::kOriginal;
    v.upscaled.push_back({p, role});
  }
  return v;
}

void AnnotationService::swap_models(std::shared_ptr<ModelBundle> models) {
  if (!models || !models->model) throw PrerequisiteMissing("cannot swap in an empty model");
  const auto& a = models->model->config();
  if (a.grid != crop_.grid_size || a.crop_size != crop_.crop_size || a.fine_grid != crop_.fine_grid) {
    throw ShapeMismatch("swapped model has a different grid geometry");
  }
  std::lock_guard lock(models_mu_);
  models_ = std::move(models);
}

std::shared_ptr<ModelBundle> AnnotationService::models() const {
  std::lock_guard lock(models_mu_);
  return models_;
}

std::size_t AnnotationService::session_count() const {
  std::lock_guard lock(sessions_mu_);
  return sessions_.size();
}

std::size_t AnnotationService::finetune_queue_size() const {
  std::lock_guard lock(queue_mu_);
  return queue_.size();
}

std::vector<FinetuneItem> AnnotationService::drain_finetune_queue() {
  std::lock_guard lock(queue_mu_);
  std::vector<FinetuneItem> out(queue_.begin(), queue_.end());
  queue_.clear();
  return out;
}

}  // namespace polyloop::service
