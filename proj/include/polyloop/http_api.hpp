#pragma once

#include <memory>
#include <string>
#include <thread>

#include "polyloop/service.hpp"

namespace httplib {
class Server;
}

namespace polyloop::service {

// JSON over HTTP. Field names:
//   POST /sessions                 {"image": path}              -> {"session_id", "status"}
//   POST /sessions/{id}/predict    {"bbox": [x0, y0, x1, y1]}    -> session view
//   POST /sessions/{id}/correct    {"index": i, "x": px, "y": py} -> session view
//   POST /sessions/{id}/commit     {}                           -> {"session_id", "clicks", "polygon"}
//   GET  /healthz                                               -> {"ok", "sessions", "finetune_queue"}
// Errors: {"error": message} with status 400, 404 or 409.
class HttpApi {
 public:
  explicit HttpApi(std::shared_ptr<AnnotationService> service);
  ~HttpApi();

  // Binds (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host, int port);
  // Blocks serving on the calling thread.
  void listen(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  void install_routes();

  std::shared_ptr<AnnotationService> service_;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<std::thread> thread_;
  int port_ = 0;
};

}  // namespace polyloop::service
