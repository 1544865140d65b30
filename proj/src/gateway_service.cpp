#include "pgt/gateway_service.hpp"

#include <charconv>
#include <chrono>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

#include <httplib.h>

#include "pgt/errors.hpp"
#include "pgt/png_io.hpp"
#include "pgt/slice_pipeline.hpp"

namespace pgt {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidRequest:
    case ErrorCode::UnknownInstruction:
    case ErrorCode::BadConfig:
      return 400;
    case ErrorCode::UnknownSliceId:
    case ErrorCode::MissingRecording:
      return 404;
    case ErrorCode::MissingTarget:
      return 422;
    case ErrorCode::RemoteTimeout:
      return 504;
    case ErrorCode::RemoteUnavailable:
    case ErrorCode::RemoteMalformedResponse:
      return 502;
    default:
      return 500;
  }
}

void send_json(httplib::Response& res, const ordered_json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, ordered_json{{"error", std::string(to_string(code))}, {"message", message}}, http_status(code));
}

std::int64_t parse_int(const std::string& text, std::string_view what) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw Error(ErrorCode::InvalidRequest, std::string(what) + " must be an integer");
  }
  return v;
}

bool parse_bool(const std::string& text, std::string_view what) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw Error(ErrorCode::InvalidRequest, std::string(what) + " must be true or false");
}

double parse_double(const std::string& text, std::string_view what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::InvalidRequest, std::string(what) + " must be a number");
}

}  // namespace

struct GatewayService::Impl {
  ServiceConfig config;
  Gateway gateway;
  httplib::Server server;
  std::thread worker;
  int bound_port = 0;
  std::mutex sessions_mutex;
  std::map<std::string, std::vector<ordered_json>> sessions;

  explicit Impl(ServiceConfig c) : config(std::move(c)), gateway(config.backend) {}

  template <class F>
  void guarded(httplib::Response& res, F&& body) {
    try {
      body();
    } catch (const Error& e) {
      send_error(res, e.code(), e.what());
    } catch (const std::exception& e) {
      res.status = 500;
      res.set_content(ordered_json{{"error", "Internal"}, {"message", e.what()}}.dump(), "application/json");
    }
  }

  std::filesystem::path image_path(const SliceRecord& r) const {
    return config.image_root / r.dataset /
           slice_file_name(r.dataset, r.volume_name, static_cast<std::size_t>(r.slice_index));
  }

  void record_turn(const ChatRequest& req, const ordered_json& response) {
    if (req.session_id.empty()) return;
    ordered_json turn;
    turn["request"] = chat_request_to_json(req);
    turn["response"] = response;
    std::lock_guard lock(sessions_mutex);
    sessions[req.session_id].push_back(std::move(turn));
  }

  void chat(const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = json::parse(req.body, nullptr, false);
      if (body.is_discarded()) throw Error(ErrorCode::InvalidRequest, "body is not JSON");
      const ChatRequest request = chat_request_from_json(body);
      const ordered_json out = chat_response_to_json(gateway.chat(request));
      record_turn(request, out);
      send_json(res, out);
    });
  }

  void slices(const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<std::string> dataset;
      std::optional<bool> has_tumor;
      std::optional<double> min_ratio;
      std::int64_t page = 1;
      std::int64_t page_size = static_cast<std::int64_t>(config.default_page_size);
      if (req.has_param("dataset")) dataset = req.get_param_value("dataset");
      if (req.has_param("has_tumor")) has_tumor = parse_bool(req.get_param_value("has_tumor"), "has_tumor");
      if (req.has_param("min_bbox_ratio")) min_ratio = parse_double(req.get_param_value("min_bbox_ratio"), "min_bbox_ratio");
      if (req.has_param("page")) page = parse_int(req.get_param_value("page"), "page");
      if (req.has_param("page_size")) page_size = parse_int(req.get_param_value("page_size"), "page_size");
      if (page < 1) throw Error(ErrorCode::InvalidRequest, "page starts at 1");
      if (page_size < 1 || page_size > static_cast<std::int64_t>(config.max_page_size)) {
        throw Error(ErrorCode::InvalidRequest, "page_size must lie in [1," + std::to_string(config.max_page_size) + "]");
      }

      std::vector<const SliceRecord*> hits;
      for (const auto& r : config.catalog->records()) {
        if (dataset && r.dataset != *dataset) continue;
        if (has_tumor && r.has_tumor() != *has_tumor) continue;
        if (min_ratio && !r.pancreas_bbox_ratio.at_least(*min_ratio)) continue;
        hits.push_back(&r);
      }
      ordered_json out;
      out["page"] = page;
      out["page_size"] = page_size;
      out["total"] = hits.size();
      out["items"] = ordered_json::array();
      const std::size_t begin = static_cast<std::size_t>((page - 1) * page_size);
      for (std::size_t i = begin; i < hits.size() && i < begin + static_cast<std::size_t>(page_size); ++i) {
        const SliceRecord& r = *hits[i];
        ordered_json item;
        item["slice_id"] = r.slice_id;
        item["dataset"] = r.dataset;
        item["volume_name"] = r.volume_name;
        item["slice_index"] = r.slice_index;
        item["has_tumor"] = r.has_tumor();
        item["pancreas_bbox_ratio"] = r.pancreas_bbox_ratio.value();
        item["width"] = r.width;
        item["height"] = r.height;
        item["image_url"] = "/v1/slices/" + std::to_string(r.slice_id) + "/image";
        out["items"].push_back(std::move(item));
      }
      send_json(res, out);
    });
  }

  void image(const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const SliceRecord& r = config.catalog->at(parse_int(req.matches[1], "slice id"));
      const auto bytes = read_binary_file(image_path(r));
      res.set_content(std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()), "image/png");
    });
  }

  void record(const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, record_to_json_value(config.catalog->at(parse_int(req.matches[1], "slice id")))); });
  }

  void session(const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      ordered_json out;
      out["session_id"] = id;
      out["turns"] = ordered_json::array();
      std::lock_guard lock(sessions_mutex);
      if (const auto it = sessions.find(id); it != sessions.end()) {
        for (const auto& t : it->second) out["turns"].push_back(t);
      }
      send_json(res, out);
    });
  }

  void routes() {
    // httplib defaults to SO_REUSEPORT, which lets a second server share the
    // port silently; plain SO_REUSEADDR makes a busy port fail to bind.
    server.set_socket_options([](socket_t sock) {
      int yes = 1;
      setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    server.Post("/v1/chat", [this](const httplib::Request& q, httplib::Response& s) { chat(q, s); });
    server.Get("/v1/slices", [this](const httplib::Request& q, httplib::Response& s) { slices(q, s); });
    server.Get(R"(/v1/slices/(-?\d+)/image)", [this](const httplib::Request& q, httplib::Response& s) { image(q, s); });
    server.Get(R"(/v1/slices/(-?\d+)/record)", [this](const httplib::Request& q, httplib::Response& s) { record(q, s); });
    server.Get(R"(/v1/sessions/([^/]+))", [this](const httplib::Request& q, httplib::Response& s) { session(q, s); });
    server.Get("/v1/health", [this](const httplib::Request&, httplib::Response& s) {
      send_json(s, ordered_json{{"status", "ok"},
                                {"backend", std::string(to_string(gateway.backend().kind()))},
                                {"slices", config.catalog->size()}});
    });
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/v1/.*)", [](const httplib::Request&, httplib::Response& s) {
      s.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      s.set_header("Access-Control-Allow-Headers", "Content-Type");
      s.status = 204;
    });
  }
};

GatewayService::GatewayService(ServiceConfig config) {
  if (!config.catalog) throw Error(ErrorCode::BadConfig, "service needs a catalog");
  if (!config.backend) throw Error(ErrorCode::BadConfig, "service needs a backend");
  if (config.port < 0 || config.port > 65535) throw Error(ErrorCode::BadConfig, "port out of range");
  if (config.default_page_size == 0 || config.default_page_size > config.max_page_size) {
    throw Error(ErrorCode::BadConfig, "default page size must lie in [1, max_page_size]");
  }
  impl_ = std::make_unique<Impl>(std::move(config));
  impl_->routes();
}

GatewayService::~GatewayService() { stop(); }

void GatewayService::start() {
  if (impl_->worker.joinable()) return;
  auto& cfg = impl_->config;
  if (cfg.port == 0) {
    impl_->bound_port = impl_->server.bind_to_any_port(cfg.host);
    if (impl_->bound_port <= 0) throw Error(ErrorCode::PortInUse, "could not bind any port on " + cfg.host);
  } else {
    if (!impl_->server.bind_to_port(cfg.host, cfg.port)) {
      throw Error(ErrorCode::PortInUse, cfg.host + ":" + std::to_string(cfg.port) + " is not available");
    }
    impl_->bound_port = cfg.port;
  }
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void GatewayService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->worker.joinable()) impl_->worker.join();
}

void GatewayService::wait() {
  while (impl_->server.is_running()) std::this_thread::sleep_for(std::chrono::milliseconds(50));
}

int GatewayService::port() const { return impl_->bound_port; }

std::string GatewayService::base_url() const {
  return "http://" + impl_->config.host + ":" + std::to_string(impl_->bound_port);
}

}  // namespace pgt
