#include <torch/torch.h>

#include <filesystem>
#include <thread>

#include "doctest.h"
#include "fixtures.hpp"
#include "httplib.h"
#include "polyloop/checkpoint.hpp"
#include "polyloop/decoding.hpp"
#include "polyloop/training.hpp"
#include "polyloop/http_api.hpp"
#include "polyloop/predictor.hpp"
#include "polyloop/service.hpp"

using namespace polyloop;
using geometry::BBox;
using geometry::GridVertex;
using geometry::Point2;
using service::AnnotationService;
using service::ServiceError;
using json = nlohmann::json;

namespace {

struct World {
  std::filesystem::path dir;
  std::vector<data::InstanceRecord> records;
  nn::PolygonModel model{nullptr};
  std::shared_ptr<AnnotationService> svc;

  explicit World(bool queue = false, std::uint64_t model_seed = 7) {
    dir = std::filesystem::temp_directory_path() /
          ("polyloop_svc_" + std::to_string(::getpid()) + "_" + std::to_string(counter()++));
    std::filesystem::remove_all(dir);
    model = fixture::tiny_model(model_seed);
    records = data::synth_generate(data::synth_preset("source", 4), 6);
    data::write_dataset(records, dir, "svc");
    svc = make_service(queue);
  }
  ~World() { std::filesystem::remove_all(dir); }

  std::shared_ptr<AnnotationService> make_service(bool queue) {
    service::ServiceConfig cfg;
    cfg.store_path = dir / "store.jsonl";
    cfg.image_root = dir;
    cfg.finetune_queue = queue;
    auto b = std::make_shared<service::ModelBundle>();
    b->model = model;
    return std::make_shared<AnnotationService>(cfg, b);
  }

  static int& counter() {
    static int c = 0;
    return c;
  }
};

int code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const ServiceError& e) {
    return e.status();
  }
  return 0;
}

// Image pixel at the centre of a D-grid cell of a session's crop.
Point2 cell_centre(const service::SessionView& v, GridVertex g, int grid, int crop) {
  return data::crop_to_image(geometry::grid_to_crop(g, grid, crop), v.crop_box, crop);
}

}  // namespace

TEST_CASE("configuration validation") {
  service::ServiceConfig cfg;
  CHECK_THROWS_AS(cfg.validate(), PrerequisiteMissing);
  cfg.model_checkpoint = "/nonexistent/model.ckpt";
  CHECK_THROWS_AS(cfg.validate(), PrerequisiteMissing);
  CHECK_THROWS_AS(service::load_bundle(cfg), PrerequisiteMissing);
  World w;
  cfg.model_checkpoint = w.dir / "m.ckpt";
  nn::save_model(cfg.model_checkpoint, *w.model);
  CHECK_NOTHROW(cfg.validate());
  cfg.k = 0;
  CHECK_THROWS_AS(cfg.validate(), InvalidK);
  cfg.k = 1;
  const auto b = service::load_bundle(cfg);
  CHECK(!b->evaluator);
  CHECK(!b->ggnn);
}

TEST_CASE("sessions are created per image and kept apart") {
  World w;
  auto& svc = *w.svc;
  CHECK(code_of([&] { svc.create_session("images/missing.ppm"); }) == 404);
  CHECK(code_of([&] { svc.create_session(""); }) == 400);
  const auto a = svc.create_session(w.records[0].image_path);
  const auto b = svc.create_session(w.records[0].image_path);
  CHECK(a != b);
  CHECK(svc.session_count() == 2);
  CHECK(code_of([&] { svc.view("nope"); }) == 404);

  svc.predict(a, w.records[0].bbox);
  const auto vb = svc.view(b);
  CHECK(vb.vertices.empty());
  CHECK(vb.clicks == 0);
}

TEST_CASE("predict: validation, crop box containment, determinism") {
  World w;
  auto& svc = *w.svc;
  const auto& r = w.records[1];
  const auto id = svc.create_session(r.image_path);
  CHECK(code_of([&] { svc.predict(id, {10, 10, 5, 20}); }) == 400);
  CHECK(code_of([&] { svc.predict(id, {10, 10, 10, 20}); }) == 400);
  CHECK(code_of([&] { svc.predict(id, {-50, -50, -10, -10}); }) == 400);
  CHECK(code_of([&] { svc.predict(id, {0, 0, NAN, 5}); }) == 400);
  CHECK(code_of([&] { svc.correct(id, 0, {1, 1}); }) == 409);

  const auto v1 = svc.predict(id, r.bbox);
  REQUIRE(!v1.vertices.empty());
  for (const auto& p : v1.vertices) {
    CHECK(p.x >= v1.crop_box.x0);
    CHECK(p.x <= v1.crop_box.x1);
    CHECK(p.y >= v1.crop_box.y0);
    CHECK(p.y <= v1.crop_box.y1);
  }
  CHECK(v1.upscaled.size() == v1.grid.size());
  const auto v2 = svc.predict(id, r.bbox);
  CHECK((v1.grid == v2.grid));
  CHECK(to_json(v1).dump() == to_json(v2).dump());
}

TEST_CASE("correct: index range, prefix semantics, click counting") {
  World w;
  auto& svc = *w.svc;
  const auto& r = w.records[2];
  const auto id = svc.create_session(r.image_path);
  const auto v0 = svc.predict(id, r.bbox);
  const auto& mc = w.model->config();
  REQUIRE(!v0.grid.empty());

  CHECK(code_of([&] { svc.correct(id, v0.grid.size() + 1, {0, 0}); }) == 400);
  CHECK(code_of([&] { svc.correct("nope", 0, {0, 0}); }) == 404);

  const GridVertex target{3, 5};
  const auto v1 = svc.correct(id, 0, cell_centre(v0, target, mc.grid, mc.crop_size));
  REQUIRE(!v1.grid.empty());
  CHECK((v1.grid[0] == target));
  CHECK(v1.clicks == 1);
  CHECK(v1.committed_prefix == 1);

  // Matches decoding from the same prefix directly.
  data::InstanceSample s;
  s.crop = crop_resize(*data::resolve_image(r, w.dir), v1.crop_box, mc.crop_size);
  torch::NoGradGuard ng;
  const auto skip = w.model->encode(nn::crops_tensor({&s}), false).skip;
  CHECK((nn::decode_with_prefix(*w.model, skip, {target}).polygon.vertices == v1.grid));

  // Re-submitting the same correction changes nothing but still counts.
  const auto v2 = svc.correct(id, 0, cell_centre(v0, target, mc.grid, mc.crop_size));
  CHECK((v2.grid == v1.grid));
  CHECK(v2.clicks == 2);

  // Points outside the crop are clamped onto its border cells.
  const auto v3 = svc.correct(id, 0, {v0.crop_box.x0 - 100, v0.crop_box.y0 - 100});
  CHECK((v3.grid[0] == GridVertex{0, 0}));

  // Appending after the last vertex.
  const auto n = v3.grid.size();
  const auto v4 = svc.correct(id, n, cell_centre(v3, {6, 6}, mc.grid, mc.crop_size));
  REQUIRE(v4.grid.size() > n);
  CHECK((v4.grid[n] == GridVertex{6, 6}));
  CHECK(v4.clicks == 4);
}

TEST_CASE("every grid cell round-trips through image coordinates") {
  World w;
  auto& svc = *w.svc;
  const auto& r = w.records[3];
  const auto id = svc.create_session(r.image_path);
  const auto v = svc.predict(id, r.bbox);
  const auto& mc = w.model->config();
  for (int y = 0; y < mc.grid; ++y) {
    for (int x = 0; x < mc.grid; ++x) {
      const Point2 p = cell_centre(v, {x, y}, mc.grid, mc.crop_size);
      const auto c = data::image_to_crop(p, v.crop_box, mc.crop_size);
      CHECK((geometry::crop_to_grid(c, mc.grid, mc.crop_size) == GridVertex{x, y}));
    }
  }
}

TEST_CASE("commit writes one record and closes the session") {
  World w(true);
  auto& svc = *w.svc;
  const auto& r = w.records[0];
  const auto id = svc.create_session(r.image_path);
  CHECK(code_of([&] { svc.commit(id); }) == 409);
  const auto v = svc.predict(id, r.bbox);
  const auto rec = svc.commit(id);
  CHECK(rec.session_id == id);
  CHECK(rec.instance_ref == r.image_path);
  CHECK(rec.polygon.size() == v.upscaled.size());
  CHECK(rec.committed_ms >= rec.created_ms);

  const auto before = svc.store().read();
  REQUIRE(before.records.size() == 1);
  CHECK((before.records[0] == rec));
  CHECK(code_of([&] { svc.commit(id); }) == 409);
  CHECK(code_of([&] { svc.predict(id, r.bbox); }) == 409);
  CHECK(code_of([&] { svc.correct(id, 0, {1, 1}); }) == 409);
  CHECK(svc.store().read().records.size() == 1);
  CHECK(svc.view(id).status == service::SessionStatus::kCommitted);

  CHECK(svc.finetune_queue_size() == 1);
  const auto q = svc.drain_finetune_queue();
  REQUIRE(q.size() == 1);
  CHECK((q[0].polygon == rec.polygon));
  CHECK(svc.finetune_queue_size() == 0);

  const auto other = svc.create_session(r.image_path);
  svc.predict(other, r.bbox);
  svc.abandon(other);
  CHECK(code_of([&] { svc.commit(other); }) == 409);
  CHECK(svc.store().read().records.size() == 1);
}

TEST_CASE("replaying a simulated session through the service gives the same polygon") {
  World w;
  auto& svc = *w.svc;
  const auto& mc = w.model->config();
  const auto samples = data::extract_all(w.records, fixture::spec_for(mc), {}, w.dir);
  nn::ModelPredictor pred(w.model, nullptr, {1, 1, false});
  int replayed = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const auto& rec = *std::find_if(w.records.begin(), w.records.end(),
                                    [&](const auto& r) { return r.id == s.id; });
    const auto tr = sim::simulate(pred, s, {1, 1.0, -1, false});
    const auto id = svc.create_session(rec.image_path);
    auto v = svc.predict(id, rec.bbox);
    CHECK((v.grid == tr.initial.vertices));
    for (const auto& st : tr.steps) {
      if (!st.corrected) continue;
      v = svc.correct(id, static_cast<std::size_t>(st.index), cell_centre(v, st.gt, mc.grid, mc.crop_size));
    }
    CHECK((v.grid == tr.final_polygon.vertices));
    CHECK(v.clicks == tr.clicks);
    replayed += tr.clicks > 0;
  }
  CHECK(replayed > 0);
}

TEST_CASE("concurrent sessions do not interfere") {
  World w;
  auto& svc = *w.svc;
  const auto& mc = w.model->config();
  auto script = [&](const data::InstanceRecord& r) {
    const auto id = svc.create_session(r.image_path);
    auto v = svc.predict(id, r.bbox);
    for (int k = 0; k < 3 && !v.grid.empty(); ++k) {
      v = svc.correct(id, static_cast<std::size_t>(k), cell_centre(v, {k + 1, 2 * k + 1}, mc.grid, mc.crop_size));
    }
    return v.grid;
  };
  std::vector<std::vector<GridVertex>> serial, parallel(4);
  for (int i = 0; i < 4; ++i) serial.push_back(script(w.records[static_cast<std::size_t>(i)]));
  std::vector<std::thread> ts;
  for (int i = 0; i < 4; ++i) {
    ts.emplace_back([&, i] { parallel[static_cast<std::size_t>(i)] = script(w.records[static_cast<std::size_t>(i)]); });
  }
  for (auto& t : ts) t.join();
  CHECK((serial == parallel));
  CHECK(svc.session_count() == 8);
}

TEST_CASE("hot swap applies to the next predict") {
  World w;
  auto& svc = *w.svc;
  const auto& r = w.records[1];
  const auto& mc = w.model->config();
  const auto id = svc.create_session(r.image_path);
  const auto before = svc.predict(id, r.bbox);

  auto other = fixture::tiny_model(99);
  auto b = std::make_shared<service::ModelBundle>();
  b->model = other;
  svc.swap_models(b);
  CHECK(svc.models()->model.ptr() == other.ptr());

  // Open sessions keep decoding with the weights their features came from.
  const auto corr = svc.correct(id, 0, cell_centre(before, before.grid[0], mc.grid, mc.crop_size));
  data::InstanceSample s;
  s.crop = crop_resize(*data::resolve_image(r, w.dir), before.crop_box, mc.crop_size);
  torch::NoGradGuard ng;
  const auto old_skip = w.model->encode(nn::crops_tensor({&s}), false).skip;
  CHECK((nn::decode_with_prefix(*w.model, old_skip, {before.grid[0]}).polygon.vertices == corr.grid));

  const auto after = svc.predict(id, r.bbox);
  const auto new_skip = other->encode(nn::crops_tensor({&s}), false).skip;
  CHECK((nn::full_inference(*other, nullptr, new_skip, {1, 1, false}).best.polygon.vertices == after.grid));

  auto bad = std::make_shared<service::ModelBundle>();
  CHECK_THROWS_AS(svc.swap_models(bad), PrerequisiteMissing);
  bad->model = nn::PolygonModel(nn::model_preset("desk"));
  CHECK_THROWS_AS(svc.swap_models(bad), ShapeMismatch);
}

TEST_CASE("HTTP API") {
  World w(true);
  service::HttpApi api(w.svc);
  const int port = api.start("127.0.0.1", 0);
  REQUIRE(port > 0);
  httplib::Client cli("127.0.0.1", port);
  const auto& r = w.records[0];
  auto post = [&](const std::string& path, const json& body) {
    auto res = cli.Post(path, body.dump(), "application/json");
    REQUIRE(res);
    return std::pair{res->status, res->body.empty() ? json() : json::parse(res->body)};
  };

  auto [st, body] = post("/sessions", {{"image", r.image_path}});
  CHECK(st == 201);
  const std::string id = body["session_id"];
  CHECK(body["status"] == "open");

  std::tie(st, body) = post("/sessions", {{"image", "images/none.ppm"}});
  CHECK(st == 404);
  CHECK(body.contains("error"));
  std::tie(st, body) = post("/sessions/nope/predict", {{"bbox", {0, 0, 5, 5}}});
  CHECK(st == 404);
  auto raw = cli.Post("/sessions", "{not json", "application/json");
  REQUIRE(raw);
  CHECK(raw->status == 400);

  std::tie(st, body) = post("/sessions/" + id + "/predict", {{"bbox", {5, 5, 5, 9}}});
  CHECK(st == 400);
  std::tie(st, body) = post("/sessions/" + id + "/predict", {{"bbox", {r.bbox.x0, r.bbox.y0, r.bbox.x1, r.bbox.y1}}});
  CHECK(st == 200);
  const auto direct = to_json(w.svc->view(id));
  CHECK(body == direct);
  const auto n = body["vertices"].size();
  REQUIRE(n > 0);
  const double x = body["vertices"][0][0], y = body["vertices"][0][1];

  std::tie(st, body) = post("/sessions/" + id + "/correct", {{"index", n + 1}, {"x", x}, {"y", y}});
  CHECK(st == 400);
  std::tie(st, body) = post("/sessions/" + id + "/correct", {{"index", 0}, {"x", x}, {"y", y}});
  CHECK(st == 200);
  CHECK(body["clicks"] == 1);

  std::tie(st, body) = post("/sessions/" + id + "/commit", json::object());
  CHECK(st == 200);
  CHECK(body["clicks"] == 1);
  CHECK(body["polygon"].size() > 0);
  std::tie(st, body) = post("/sessions/" + id + "/commit", json::object());
  CHECK(st == 409);

  auto h = cli.Get("/healthz");
  REQUIRE(h);
  CHECK(h->status == 200);
  const auto hj = json::parse(h->body);
  CHECK(hj["ok"] == true);
  CHECK(hj["sessions"] == 1);
  CHECK(hj["finetune_queue"] == 1);
  api.stop();
}
