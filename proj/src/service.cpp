#include "curvegcn/service.hpp"

#include <httplib.h>
#include <openssl/evp.h>

#include <random>
#include <regex>

#include "curvegcn/data.hpp"

namespace curvegcn {

using nlohmann::json;

std::string base64_decode(const std::string& text) {
  std::string in;
  const auto comma = text.find(',');
  const std::string body = text.rfind("data:", 0) == 0 && comma != std::string::npos ? text.substr(comma + 1) : text;
  for (char c : body)
    if (!std::isspace(static_cast<unsigned char>(c))) in += c;
  if (in.size() % 4 != 0) throw ParseError("base64: length is not a multiple of 4");
  std::string out(in.size() / 4 * 3, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(in.data()), static_cast<int>(in.size()));
  if (n < 0) throw ParseError("base64: invalid characters");
  std::size_t pad = 0;
  if (!in.empty() && in.back() == '=') pad = in.size() >= 2 && in[in.size() - 2] == '=' ? 2 : 1;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

namespace {

ServiceResponse error(int status, const std::string& message) { return {status, json{{"error", message}}}; }

json curve_json(const ControlCurve<Real>& c) {
  json pts = json::array();
  for (Index i = 0; i < c.size(); ++i) pts.push_back({double(c.points(i, 0)), double(c.points(i, 1))});
  return pts;
}

// Malformed request content; answered with 422.
struct BadRequest : Error {
  using Error::Error;
};

PointList<double> parse_points(const json& j, const char* field) {
  if (!j.is_array() || j.size() < 3) throw BadRequest(std::string(field) + " must be a list of at least 3 [x, y] pairs");
  PointList<double> p(static_cast<Index>(j.size()), 2);
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto& v = j[i];
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw BadRequest(std::string(field) + " entries must be [x, y] number pairs");
    p(Index(i), 0) = v[0].get<double>();
    p(Index(i), 1) = v[1].get<double>();
  }
  if (!all_finite(p)) throw BadRequest(std::string(field) + " contains non-finite values");
  return p;
}

}  // namespace

AnnotationService::AnnotationService(ServiceOptions opt) : opt_(std::move(opt)) {
  id_salt_ = std::random_device{}();
}

AnnotationService::AnnotationService(std::shared_ptr<const Checkpoint> model, std::string checkpoint_hash,
                                     ServiceOptions opt)
    : model_(std::move(model)), hash_(std::move(checkpoint_hash)), opt_(std::move(opt)) {
  id_salt_ = std::random_device{}();
}

std::size_t AnnotationService::session_count() const {
  std::lock_guard lock(sessions_mutex_);
  return sessions_.size();
}

void AnnotationService::expire_idle() {
  const auto now = opt_.clock();
  std::lock_guard lock(sessions_mutex_);
  for (auto it = sessions_.begin(); it != sessions_.end();) {
    if (now - it->second->last_used > opt_.idle_timeout)
      it = sessions_.erase(it);
    else
      ++it;
  }
}

std::shared_ptr<AnnotationService::Session> AnnotationService::find(const std::string& id) {
  std::lock_guard lock(sessions_mutex_);
  const auto it = sessions_.find(id);
  return it == sessions_.end() ? nullptr : it->second;
}

ServiceResponse AnnotationService::handle(const std::string& method, const std::string& path,
                                          const std::string& body) {
  static const std::regex session_path(R"(^/session/([A-Za-z0-9]+)(/correct|/reset)?/?$)");
  try {
    expire_idle();
    json req = json::object();
    if (!body.empty()) {
      try {
        req = json::parse(body);
      } catch (const json::exception&) {
        return error(422, "request body is not valid JSON");
      }
      if (!req.is_object()) return error(422, "request body must be a JSON object");
    }

    if (path == "/model/info") return method == "GET" ? model_info() : error(405, "method not allowed");
    if (path == "/session" || path == "/session/") {
      if (method != "POST") return error(405, "method not allowed");
      if (!model_) return error(503, "no model loaded");
      return create_session(req);
    }
    std::smatch m;
    if (!std::regex_match(path, m, session_path)) return error(404, "no such endpoint");
    const std::string id = m[1];
    const std::string action = m[2];
    if (!model_) return error(503, "no model loaded");

    if (action.empty() && method == "DELETE") {
      std::lock_guard lock(sessions_mutex_);
      if (sessions_.erase(id) == 0) return error(404, "unknown session " + id);
      return {200, json{{"deleted", id}}};
    }
    const auto s = find(id);
    if (!s) return error(404, "unknown session " + id);
    std::lock_guard session_lock(s->mutex);
    s->last_used = opt_.clock();
    if (action.empty() && method == "GET") return {200, state(id, *s)};
    if (action == "/correct" && method == "POST") return correct(*s, req);
    if (action == "/reset" && method == "POST") return reset(*s);
    return error(405, "method not allowed");
  } catch (const BadRequest& e) {
    return error(422, e.what());
  } catch (const ParseError& e) {
    return error(422, e.what());
  } catch (const std::exception& e) {
    return error(500, e.what());
  }
}

ServiceResponse AnnotationService::model_info() const {
  if (!model_) return error(503, "no model loaded");
  const auto& cfg = model_->model.config();
  return {200, json{{"n_points", cfg.control_points},
                    {"curve_kind", to_string(cfg.curve_kind)},
                    {"iterations", cfg.iterations},
                    {"interactive", model_->interactive.has_value()},
                    {"radius", cfg.interactive_radius},
                    {"checkpoint_hash", hash_}}};
}

json AnnotationService::state(const std::string& id, const Session& s) const {
  json j{{"session_id", id},
         {"curve", curve_json(s.curve)},
         {"clicks", s.clicks},
         {"height", s.height},
         {"width", s.width}};
  if (s.gt_polygon)
    j["iou"] = iou(curve_mask(s.curve, model_->model.config().samples, s.height, s.width), s.gt_mask);
  return j;
}

ServiceResponse AnnotationService::create_session(const json& req) {
  if (!req.contains("image") || !req["image"].is_string()) throw BadRequest("missing base64 PNG field 'image'");
  const FeatureMap<Real> image = decode_png(base64_decode(req["image"].get<std::string>()));
  const auto& model = model_->model;
  const int size = model.config().input_size;
  FeatureMap<Real> input = resize_bilinear(image, size, size);
  input.data.array() -= Real(0.5);

  auto s = std::make_shared<Session>();
  s->height = image.height;
  s->width = image.width;
  if (req.contains("gt_polygon") && !req["gt_polygon"].is_null()) {
    s->gt_polygon = canonicalize_orientation(parse_points(req["gt_polygon"], "gt_polygon")).points;
    s->gt_mask = rasterize_polygon(*s->gt_polygon, s->height, s->width);
  }
  s->features = model.extract_features(input).features;
  s->curve = model.iterative_inference_from(s->features).final_curve();
  s->last_used = opt_.clock();

  std::string id;
  {
    std::lock_guard lock(sessions_mutex_);
    if (sessions_.size() >= opt_.max_sessions) {
      auto oldest = sessions_.begin();
      for (auto it = sessions_.begin(); it != sessions_.end(); ++it)
        if (it->second->last_used < oldest->second->last_used) oldest = it;
      sessions_.erase(oldest);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(mix_seed(id_salt_, next_id_++)));
    id = buf;
    sessions_[id] = s;
  }
  std::lock_guard session_lock(s->mutex);
  return {200, state(id, *s)};
}

ServiceResponse AnnotationService::correct(Session& s, const json& req) {
  const int n = static_cast<int>(s.curve.size());
  if (!req.contains("node") || !req["node"].is_number_integer()) throw BadRequest("missing integer field 'node'");
  const int node = req["node"].get<int>();
  if (node < 0 || node >= n) throw BadRequest("node index out of range [0, " + std::to_string(n) + ")");
  if (!req.contains("new_pos")) throw BadRequest("missing field 'new_pos'");
  const auto& p = req["new_pos"];
  if (!p.is_array() || p.size() != 2 || !p[0].is_number() || !p[1].is_number())
    throw BadRequest("new_pos must be an [x, y] pair");
  const Point2<Real> target(Real(p[0].get<double>()), Real(p[1].get<double>()));
  if (!all_finite(target) || (target.array() < Real(0)).any() || (target.array() > Real(1)).any())
    throw BadRequest("new_pos must lie in [0, 1] x [0, 1]");

  Correction corr;
  corr.node = node;
  corr.target = target;
  corr.shift = target - s.curve.point(node);
  if (!corr.zero_shift())
    s.curve = model_->interactive ? model_->interactive->masked_predict(s.features, s.curve, corr)
                                  : pin_only_step()(s.curve, corr);
  ++s.clicks;
  json j{{"curve", curve_json(s.curve)}, {"clicks", s.clicks}};
  if (s.gt_polygon)
    j["iou"] = iou(curve_mask(s.curve, model_->model.config().samples, s.height, s.width), s.gt_mask);
  return {200, j};
}

ServiceResponse AnnotationService::reset(Session& s) {
  s.curve = model_->model.iterative_inference_from(s.features).final_curve();
  s.clicks = 0;
  json j{{"curve", curve_json(s.curve)}, {"clicks", 0}};
  if (s.gt_polygon)
    j["iou"] = iou(curve_mask(s.curve, model_->model.config().samples, s.height, s.width), s.gt_mask);
  return {200, j};
}

struct HttpFrontEnd::Impl {
  httplib::Server server;
};

HttpFrontEnd::HttpFrontEnd(AnnotationService& service) : impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;
  const auto relay = [&service](const httplib::Request& req, httplib::Response& res) {
    const ServiceResponse r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(".*", relay);
  server.Post(".*", relay);
  server.Put(".*", relay);
  server.Delete(".*", relay);
  server.Options(".*", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, DELETE, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

HttpFrontEnd::~HttpFrontEnd() { stop(); }

int HttpFrontEnd::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpFrontEnd::run() {
  if (!impl_->server.listen_after_bind()) throw IoError("HTTP listener stopped with an error");
}

void HttpFrontEnd::wait_until_ready() const { impl_->server.wait_until_ready(); }

void HttpFrontEnd::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

void serve(AnnotationService& service, const std::string& host, int port) {
  HttpFrontEnd front(service);
  front.bind(host, port);
  front.run();
}

}  // namespace curvegcn
