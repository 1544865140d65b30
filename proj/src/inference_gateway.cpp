#include "pgt/inference_gateway.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <random>
#include <thread>

#include <httplib.h>

#include "pgt/errors.hpp"
#include "pgt/png_io.hpp"
#include "pgt/seeding.hpp"
#include "pgt/slice_pipeline.hpp"

namespace pgt {

using nlohmann::json;
using nlohmann::ordered_json;

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::Oracle: return "oracle";
    case BackendKind::Replay: return "replay";
    case BackendKind::Remote: return "remote";
  }
  return "oracle";
}

BackendKind parse_backend_kind(std::string_view name) {
  for (BackendKind k : {BackendKind::Oracle, BackendKind::Replay, BackendKind::Remote}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::BadConfig, "unknown backend '" + std::string(name) + "'");
}

void validate_request(const ChatRequest& r) {
  if (r.slice_id.has_value() == r.image_b64.has_value()) {
    throw Error(ErrorCode::InvalidRequest, "exactly one of slice_id and image_b64 must be given");
  }
  if (r.image_b64 && r.image_b64->empty()) throw Error(ErrorCode::InvalidRequest, "image_b64 is empty");
  if (r.instruction.empty()) throw Error(ErrorCode::InvalidRequest, "instruction is empty");
}

ordered_json chat_request_to_json(const ChatRequest& r) {
  ordered_json j;
  if (r.slice_id) j["slice_id"] = *r.slice_id;
  if (r.image_b64) j["image_b64"] = *r.image_b64;
  j["task"] = r.task.name();
  j["instruction"] = r.instruction;
  j["session_id"] = r.session_id;
  return j;
}

ChatRequest chat_request_from_json(const json& body) {
  if (!body.is_object()) throw Error(ErrorCode::InvalidRequest, "request body must be a JSON object");
  ChatRequest r;
  try {
    if (body.contains("slice_id") && !body["slice_id"].is_null()) {
      if (!body["slice_id"].is_number_integer()) throw Error(ErrorCode::InvalidRequest, "slice_id must be an integer");
      r.slice_id = body["slice_id"].get<std::int64_t>();
    }
    if (body.contains("image_b64") && !body["image_b64"].is_null()) {
      r.image_b64 = body["image_b64"].get<std::string>();
    }
    r.task = TaskIdentifier::parse(body.value("task", std::string("refer")));
    r.instruction = body.at("instruction").get<std::string>();
    r.session_id = body.value("session_id", std::string());
  } catch (const json::exception& e) {
    throw Error(ErrorCode::InvalidRequest, e.what());
  }
  validate_request(r);
  return r;
}

ordered_json chat_response_to_json(const ChatResponse& r) {
  ordered_json j;
  j["raw_text"] = r.raw_text;
  j["parsed"] = parsed_to_json(r.parsed);
  j["backend"] = std::string(to_string(r.backend));
  j["latency_ms"] = r.latency_ms;
  j["session_id"] = r.session_id;
  j["slice_id"] = r.slice_id ? json(*r.slice_id) : json(nullptr);
  return j;
}

ChatResponse chat_response_from_json(const json& body, const TaskIdentifier& task) {
  try {
    ChatResponse r;
    r.raw_text = body.at("raw_text").get<std::string>();
    r.parsed = parse_output(r.raw_text, expected_output(task));
    r.backend = parse_backend_kind(body.at("backend").get<std::string>());
    r.latency_ms = body.value("latency_ms", 0.0);
    r.session_id = body.value("session_id", std::string());
    if (body.contains("slice_id") && body["slice_id"].is_number_integer()) r.slice_id = body["slice_id"].get<std::int64_t>();
    return r;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::RemoteMalformedResponse, std::string("chat response: ") + e.what());
  } catch (const Error& e) {
    throw Error(ErrorCode::RemoteMalformedResponse, std::string("chat response: ") + e.what());
  }
}

ExpectedOutput expected_output(const TaskIdentifier& task) {
  return task == TaskIdentifier::vqa() ? ExpectedOutput::YesNo : ExpectedOutput::BoundingBox;
}

RequestContext request_context(const ChatRequest& request) {
  const bool vqa = request.task == TaskIdentifier::vqa();
  if (const auto cls = classify_instruction(request.instruction)) {
    if (is_detection(cls->stage) != vqa) return {cls->stage, cls->organ};
  }
  if (vqa) return {Stage::TumorClassification, "pancreas"};
  return {Stage::PancreasDetection, "pancreas"};
}

namespace {

std::uint64_t request_seed(std::uint64_t seed, const ChatRequest& r) {
  using seeding::fnv1a;
  using seeding::splitmix64;
  std::uint64_t h = splitmix64(seed);
  h = splitmix64(h ^ static_cast<std::uint64_t>(r.slice_id.value_or(-1)));
  h = splitmix64(h ^ fnv1a(r.task.name()));
  return splitmix64(h ^ fnv1a(r.instruction));
}

NormalizedBox perturb(const NormalizedBox& b, const Perturbation& p, std::mt19937_64& rng) {
  auto symmetric = [&rng] { return 2.0 * seeding::unit_double(rng) - 1.0; };
  const double dx = symmetric() * p.shift_pct;
  const double dy = symmetric() * p.shift_pct;
  const double scale = 1.0 + symmetric() * p.scale_pct / 100.0;
  const double cx = 0.5 * (b.x_left + b.x_right) + dx;
  const double cy = 0.5 * (b.y_top + b.y_bottom) + dy;
  const double hw = 0.5 * (b.x_right - b.x_left) * scale;
  const double hh = 0.5 * (b.y_bottom - b.y_top) * scale;
  auto coord = [](double v) { return static_cast<std::int32_t>(std::clamp<long>(std::lround(v), 0, 100)); };
  return {coord(cx - hw), coord(cy - hh), coord(cx + hw), coord(cy + hh)};
}

}  // namespace

OracleBackend::OracleBackend(std::shared_ptr<const Catalog> catalog, Perturbation perturbation, std::uint64_t seed)
    : catalog_(std::move(catalog)), perturbation_(perturbation), seed_(seed) {
  if (!catalog_) throw Error(ErrorCode::BadConfig, "oracle backend needs a catalog");
  for (double v : {perturbation_.shift_pct, perturbation_.scale_pct}) {
    if (!(v >= 0.0 && v <= 100.0)) throw Error(ErrorCode::BadConfig, "perturbation magnitudes must lie in [0,100]");
  }
  if (!(perturbation_.flip_to_failure_prob >= 0.0 && perturbation_.flip_to_failure_prob <= 1.0)) {
    throw Error(ErrorCode::BadConfig, "flip_to_failure_prob must lie in [0,1]");
  }
}

std::string OracleBackend::answer(const ChatRequest& request) const {
  validate_request(request);
  if (!request.slice_id) throw Error(ErrorCode::InvalidRequest, "the oracle backend answers slice_id requests only");
  const SliceRecord& record = catalog_->at(*request.slice_id);
  const RequestContext ctx = request_context(request);

  std::mt19937_64 rng(request_seed(seed_, request));
  const bool flip = seeding::unit_double(rng) < perturbation_.flip_to_failure_prob;

  if (expected_output(request.task) == ExpectedOutput::YesNo) {
    const bool yes = record.has_tumor() != flip;
    return yes ? "yes" : "no";
  }
  const auto gt = ground_truth_box(record, ctx.stage, ctx.organ);
  if (!gt) {
    throw Error(ErrorCode::MissingTarget,
                "slice " + std::to_string(record.slice_id) + " has no " + ctx.organ + " box");
  }
  if (flip) return std::string(kOracleFailureText);
  if (perturbation_.shift_pct == 0.0 && perturbation_.scale_pct == 0.0) return render_bbox_text(*gt);
  return render_bbox_text(perturb(*gt, perturbation_, rng));
}

ReplayBackend::ReplayBackend(std::span<const PredictionRecord> recordings) {
  for (const auto& p : recordings) {
    RecordingKey key{p.slice_id, p.stage, p.organ};
    const auto [it, inserted] = recordings_.emplace(key, p.raw_text);
    if (!inserted && it->second != p.raw_text) {
      throw Error(ErrorCode::SchemaViolation, "conflicting recordings for slice " + std::to_string(p.slice_id) +
                                                  " (" + std::string(to_string(p.stage)) + ", " + p.organ + ")");
    }
  }
}

ReplayBackend ReplayBackend::load(const std::filesystem::path& path) {
  const auto records = read_predictions_jsonl(path);
  return ReplayBackend(records);
}

std::string ReplayBackend::answer(const ChatRequest& request) const {
  validate_request(request);
  if (!request.slice_id) throw Error(ErrorCode::MissingRecording, "inline images have no recordings");
  const RequestContext ctx = request_context(request);
  const auto it = recordings_.find(RecordingKey{*request.slice_id, ctx.stage, ctx.organ});
  if (it == recordings_.end()) {
    throw Error(ErrorCode::MissingRecording, "no recording for slice " + std::to_string(*request.slice_id) + " (" +
                                                 std::string(to_string(ctx.stage)) + ", " + ctx.organ + ")");
  }
  return it->second;
}

namespace {

void set_timeouts(httplib::Client& client, double timeout_s) {
  const auto total = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(timeout_s));
  const auto sec = static_cast<time_t>(total.count() / 1000000);
  const auto usec = static_cast<time_t>(total.count() % 1000000);
  client.set_connection_timeout(sec, usec);
  client.set_read_timeout(sec, usec);
  client.set_write_timeout(sec, usec);
}

[[noreturn]] void throw_transport(httplib::Error err, double elapsed_s, double timeout_s, const std::string& url) {
  const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                         (err == httplib::Error::Read && elapsed_s >= 0.9 * timeout_s);
  if (timed_out) throw Error(ErrorCode::RemoteTimeout, url + " did not answer within " + std::to_string(timeout_s) + " s");
  throw Error(ErrorCode::RemoteUnavailable, url + ": " + httplib::to_string(err));
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

Endpoint parse_endpoint(std::string_view base_url) {
  std::string_view rest = base_url;
  if (rest.starts_with("http://")) rest.remove_prefix(7);
  else if (rest.find("://") != std::string_view::npos) throw Error(ErrorCode::BadConfig, "only http:// endpoints are supported");
  while (rest.ends_with('/')) rest.remove_suffix(1);
  Endpoint e;
  const auto colon = rest.rfind(':');
  if (colon == std::string_view::npos) {
    e.host = std::string(rest);
  } else {
    e.host = std::string(rest.substr(0, colon));
    try {
      std::size_t used = 0;
      const std::string port(rest.substr(colon + 1));
      e.port = std::stoi(port, &used);
      if (used != port.size() || e.port <= 0 || e.port > 65535) throw std::invalid_argument("port");
    } catch (const std::exception&) {
      throw Error(ErrorCode::BadConfig, "bad port in '" + std::string(base_url) + "'");
    }
  }
  if (e.host.empty()) throw Error(ErrorCode::BadConfig, "no host in '" + std::string(base_url) + "'");
  return e;
}

RemoteBackend::RemoteBackend(RemoteConfig config) : config_(std::move(config)) {
  parse_endpoint(config_.base_url);
  if (!(config_.timeout_s > 0.0)) throw Error(ErrorCode::BadConfig, "remote timeout must be positive");
}

std::string RemoteBackend::answer(const ChatRequest& request) const {
  validate_request(request);
  ordered_json body;
  body["prompt"] = format_prompt(request.task, request.instruction);
  if (request.slice_id) {
    if (!config_.catalog) throw Error(ErrorCode::BadConfig, "remote backend needs a catalog for slice_id requests");
    const SliceRecord& rec = config_.catalog->at(*request.slice_id);
    const std::string name = slice_file_name(rec.dataset, rec.volume_name, static_cast<std::size_t>(rec.slice_index));
    const auto bytes = read_binary_file(config_.image_root / rec.dataset / name);
    body["image_b64"] = httplib::detail::base64_encode(
        std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
    body["image_ref"] = rec.dataset + "/" + name;
  } else {
    body["image_b64"] = *request.image_b64;
  }
  body["session_id"] = request.session_id;

  httplib::Client client(config_.base_url);
  set_timeouts(client, config_.timeout_s);
  const auto start = std::chrono::steady_clock::now();
  const auto res = client.Post(config_.path, body.dump(), "application/json");
  if (!res) throw_transport(res.error(), seconds_since(start), config_.timeout_s, config_.base_url);
  if (res->status != 200) {
    throw Error(ErrorCode::RemoteUnavailable, config_.base_url + " answered HTTP " + std::to_string(res->status));
  }
  const json reply = json::parse(res->body, nullptr, false);
  if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
    throw Error(ErrorCode::RemoteMalformedResponse, "remote reply lacks a string 'text' field");
  }
  return reply["text"].get<std::string>();
}

Gateway::Gateway(std::shared_ptr<const Backend> backend) : backend_(std::move(backend)) {
  if (!backend_) throw Error(ErrorCode::BadConfig, "gateway needs a backend");
}

ChatResponse Gateway::chat(const ChatRequest& request) const {
  validate_request(request);
  const auto start = std::chrono::steady_clock::now();
  ChatResponse r;
  r.raw_text = backend_->answer(request);
  r.latency_ms = seconds_since(start) * 1000.0;
  r.parsed = parse_output(r.raw_text, expected_output(request.task));
  r.backend = backend_->kind();
  r.session_id = request.session_id;
  r.slice_id = request.slice_id;
  return r;
}

GatewayClient::GatewayClient(std::string base_url, double timeout_s)
    : base_url_(std::move(base_url)), timeout_s_(timeout_s) {
  parse_endpoint(base_url_);
}

ChatResponse GatewayClient::chat(const ChatRequest& request) const {
  validate_request(request);
  httplib::Client client(base_url_);
  set_timeouts(client, timeout_s_);
  const auto start = std::chrono::steady_clock::now();
  const auto res = client.Post("/v1/chat", chat_request_to_json(request).dump(), "application/json");
  if (!res) throw_transport(res.error(), seconds_since(start), timeout_s_, base_url_);
  const json reply = json::parse(res->body, nullptr, false);
  if (res->status != 200) {
    if (reply.is_object() && reply.contains("error") && reply["error"].is_string()) {
      if (const auto code = error_code_from_string(reply["error"].get<std::string>())) {
        throw Error(*code, reply.value("message", std::string("gateway error")));
      }
    }
    throw Error(ErrorCode::RemoteUnavailable, base_url_ + " answered HTTP " + std::to_string(res->status));
  }
  if (reply.is_discarded()) throw Error(ErrorCode::RemoteMalformedResponse, "gateway reply is not JSON");
  return chat_response_from_json(reply, request.task);
}

std::vector<PredictionRecord> collect_predictions(std::span<const InstructionSample> samples,
                                                  const ChatService& service, unsigned threads,
                                                  std::string_view session_id) {
  std::vector<PredictionRecord> out(samples.size());
  std::vector<std::exception_ptr> errors(samples.size());
  auto run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const InstructionSample& s = samples[i];
      try {
        ChatRequest req;
        req.slice_id = s.slice_id;
        req.task = s.task;
        req.instruction = s.instruction;
        req.session_id = std::string(session_id);
        out[i] = PredictionRecord{s.slice_id, s.stage, s.organ, service.chat(req).raw_text, std::nullopt, std::nullopt};
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(samples.size(), 1))));
  if (threads == 1) {
    run(0, samples.size());
  } else {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (samples.size() + threads - 1) / threads;
    for (unsigned t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(samples.size(), begin + chunk);
      if (begin < end) pool.emplace_back(run, begin, end);
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace pgt
