#include "polyloop/http_api.hpp"

#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace polyloop::service {

using json = nlohmann::json;

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw ServiceError(400, std::string("invalid JSON body: ") + e.what());
  }
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      reply(res, e.status(), {{"error", e.what()}});
    } catch (const json::exception& e) {
      reply(res, 400, {{"error", std::string("bad request field: ") + e.what()}});
    } catch (const std::exception& e) {
      reply(res, 500, {{"error", e.what()}});
    }
  };
}

}  // namespace

HttpApi::HttpApi(std::shared_ptr<AnnotationService> service)
    : service_(std::move(service)), server_(std::make_unique<httplib::Server>()) {
  install_routes();
}

HttpApi::~HttpApi() { stop(); }

void HttpApi::install_routes() {
  auto svc = service_;
  server_->Post("/sessions", guarded([svc](const httplib::Request& req, httplib::Response& res) {
    const auto body = parse_body(req);
    if (!body.contains("image")) throw ServiceError(400, "missing field 'image'");
    const auto id = svc->create_session(body.at("image").get<std::string>());
    reply(res, 201, {{"session_id", id}, {"status", "open"}});
  }));
  server_->Post(R"(/sessions/([^/]+)/predict)",
                guarded([svc](const httplib::Request& req, httplib::Response& res) {
                  const auto body = parse_body(req);
                  const auto& b = body.at("bbox");
                  if (!b.is_array() || b.size() != 4) throw ServiceError(400, "bbox must be [x0, y0, x1, y1]");
                  const geometry::BBox box{b[0].get<double>(), b[1].get<double>(), b[2].get<double>(),
                                           b[3].get<double>()};
                  reply(res, 200, to_json(svc->predict(req.matches[1], box)));
                }));
  server_->Post(R"(/sessions/([^/]+)/correct)",
                guarded([svc](const httplib::Request& req, httplib::Response& res) {
                  const auto body = parse_body(req);
                  const auto index = body.at("index").get<long long>();
                  if (index < 0) throw ServiceError(400, "vertex index must be non-negative");
                  const geometry::Point2 p{body.at("x").get<double>(), body.at("y").get<double>()};
                  reply(res, 200,
                        to_json(svc->correct(req.matches[1], static_cast<std::size_t>(index), p)));
                }));
  server_->Post(R"(/sessions/([^/]+)/commit)",
                guarded([svc](const httplib::Request& req, httplib::Response& res) {
                  const auto rec = svc->commit(req.matches[1]);
                  json poly = json::array();
                  for (const auto& p : rec.polygon) poly.push_back({p.x, p.y});
                  reply(res, 200,
                        {{"session_id", rec.session_id},
                         {"image", rec.instance_ref},
                         {"clicks", rec.clicks},
                         {"polygon", poly},
                         {"created_ms", rec.created_ms},
                         {"committed_ms", rec.committed_ms}});
                }));
  server_->Get("/healthz", guarded([svc](const httplib::Request&, httplib::Response& res) {
    reply(res, 200,
          {{"ok", true},
           {"sessions", svc->session_count()},
           {"finetune_queue", svc->finetune_queue_size()}});
  }));
}

int HttpApi::start(const std::string& host, int port) {
  if (thread_) throw polyloop::Error("server already running");
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) throw polyloop::Error("cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::make_unique<std::thread>([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void HttpApi::listen(const std::string& host, int port) {
  port_ = port;
  if (!server_->listen(host, port)) throw polyloop::Error("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpApi::stop() {
  if (server_) server_->stop();
  if (thread_ && thread_->joinable()) thread_->join();
  thread_.reset();
}

}  // namespace polyloop::service
