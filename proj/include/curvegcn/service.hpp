#pragma once

// Annotation sessions behind a small JSON-over-HTTP API. The request handler
// is transport-independent; serve() binds it to an HTTP listener.

#include <json.hpp>

#include <chrono>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "curvegcn/checkpoint.hpp"
#include "curvegcn/interactive.hpp"

namespace curvegcn {

struct ServiceResponse {
  int status = 200;
  nlohmann::json body;
};

struct ServiceOptions {
  std::size_t max_sessions = 64;
  std::chrono::seconds idle_timeout{30 * 60};
  std::function<std::chrono::steady_clock::time_point()> clock = [] { return std::chrono::steady_clock::now(); };
};

class AnnotationService {
 public:
  // No model: every model-backed endpoint answers 503.
  explicit AnnotationService(ServiceOptions opt = {});
  AnnotationService(std::shared_ptr<const Checkpoint> model, std::string checkpoint_hash, ServiceOptions opt = {});

  ServiceResponse handle(const std::string& method, const std::string& path, const std::string& body);

  std::size_t session_count() const;

 private:
  struct Session {
    std::mutex mutex;
    FeatureMap<Real> features;
    ControlCurve<Real> curve;
    int clicks = 0;
    int height = 0, width = 0;
    std::optional<PointList<double>> gt_polygon;  // unit coordinates
    Mask gt_mask;
    std::chrono::steady_clock::time_point last_used;
  };

  ServiceResponse create_session(const nlohmann::json& req);
  ServiceResponse correct(Session& s, const nlohmann::json& req);
  ServiceResponse reset(Session& s);
  nlohmann::json state(const std::string& id, const Session& s) const;
  ServiceResponse model_info() const;

  std::shared_ptr<Session> find(const std::string& id);
  void expire_idle();

  std::shared_ptr<const Checkpoint> model_;
  std::string hash_;
  ServiceOptions opt_;
  mutable std::mutex sessions_mutex_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::uint64_t next_id_ = 0;
  std::uint64_t id_salt_ = 0;
};

std::string base64_decode(const std::string& text);
std::string base64_encode(const std::string& bytes);

// HTTP listener relaying every request to an AnnotationService.
class HttpFrontEnd {
 public:
  explicit HttpFrontEnd(AnnotationService& service);
  ~HttpFrontEnd();
  HttpFrontEnd(const HttpFrontEnd&) = delete;
  HttpFrontEnd& operator=(const HttpFrontEnd&) = delete;

  // Port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port);
  // Blocks until stop() is called from another thread.
  void run();
  // Waits for run() to start accepting connections.
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Blocks serving HTTP until the process is stopped.
void serve(AnnotationService& service, const std::string& host, int port);

}  // namespace curvegcn
