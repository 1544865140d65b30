#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "pgt/annotation_catalog.hpp"
#include "pgt/grounding_eval.hpp"
#include "pgt/instruction_builder.hpp"

namespace pgt {

enum class BackendKind { Oracle, Replay, Remote };
std::string_view to_string(BackendKind kind);
/// Throws BadConfig.
BackendKind parse_backend_kind(std::string_view name);

struct ChatRequest {
  std::optional<std::int64_t> slice_id;
  std::optional<std::string> image_b64;
  TaskIdentifier task = TaskIdentifier::refer();
  std::string instruction;
  std::string session_id;
};

/// Throws InvalidRequest unless exactly one image source is set and the
/// instruction is non-empty.
void validate_request(const ChatRequest& request);
nlohmann::ordered_json chat_request_to_json(const ChatRequest& request);
/// Throws InvalidRequest on missing or mistyped fields.
ChatRequest chat_request_from_json(const nlohmann::json& body);

struct ChatResponse {
  std::string raw_text;
  ParsedOutput parsed;
  BackendKind backend = BackendKind::Oracle;
  double latency_ms = 0.0;
  std::string session_id;
  std::optional<std::int64_t> slice_id;
};

nlohmann::ordered_json chat_response_to_json(const ChatResponse& response);
/// The parsed echo is recomputed from raw_text, never trusted from the wire.
ChatResponse chat_response_from_json(const nlohmann::json& body, const TaskIdentifier& task);

/// [vqa] expects yes/no; every other task expects a box.
ExpectedOutput expected_output(const TaskIdentifier& task);

/// Stage and organ a request asks about. Free-text instructions fall back to
/// pancreas detection for [refer] and tumor classification for [vqa].
struct RequestContext {
  Stage stage = Stage::PancreasDetection;
  std::string organ = "pancreas";
};
RequestContext request_context(const ChatRequest& request);

/// Produces raw model text for a validated request. Implementations are
/// safe to call from many threads at once.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual BackendKind kind() const = 0;
  virtual std::string answer(const ChatRequest& request) const = 0;
};

/// Perturbation magnitudes are in normalized [0,100] units.
struct Perturbation {
  double shift_pct = 0.0;
  double scale_pct = 0.0;
  double flip_to_failure_prob = 0.0;
};

/// Natural-language non-box answer the oracle gives when forced to fail.
inline constexpr std::string_view kOracleFailureText = "It lies behind the stomach, in front of the spine.";

/// Answers from the catalog's ground truth; randomness is a pure function of
/// (seed, slice_id, task, instruction).
class OracleBackend final : public Backend {
 public:
  OracleBackend(std::shared_ptr<const Catalog> catalog, Perturbation perturbation, std::uint64_t seed);
  BackendKind kind() const override { return BackendKind::Oracle; }
  /// Throws InvalidRequest for inline images, UnknownSliceId, MissingTarget.
  std::string answer(const ChatRequest& request) const override;

 private:
  std::shared_ptr<const Catalog> catalog_;
  Perturbation perturbation_;
  std::uint64_t seed_;
};

struct RecordingKey {
  std::int64_t slice_id = 0;
  Stage stage = Stage::PancreasDetection;
  std::string organ;
  auto operator<=>(const RecordingKey&) const = default;
};

/// Returns recorded raw text verbatim. Recordings are prediction JSON lines.
class ReplayBackend final : public Backend {
 public:
  /// Conflicting duplicate keys throw SchemaViolation.
  explicit ReplayBackend(std::span<const PredictionRecord> recordings);
  static ReplayBackend load(const std::filesystem::path& path);

  BackendKind kind() const override { return BackendKind::Replay; }
  /// Throws MissingRecording.
  std::string answer(const ChatRequest& request) const override;
  std::size_t size() const { return recordings_.size(); }

 private:
  std::map<RecordingKey, std::string> recordings_;
};

struct RemoteConfig {
  /// Scheme, host and port, e.g. "http://127.0.0.1:9000".
  std::string base_url;
  std::string path = "/generate";
  double timeout_s = 30.0;
  /// Used to resolve slice_id requests to PNG bytes.
  std::shared_ptr<const Catalog> catalog;
  std::filesystem::path image_root;
};

/// Forwards {prompt, image_b64, image_ref, session_id} and expects {"text"}.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(RemoteConfig config);
  BackendKind kind() const override { return BackendKind::Remote; }
  /// Throws RemoteUnavailable, RemoteTimeout, RemoteMalformedResponse.
  std::string answer(const ChatRequest& request) const override;

 private:
  RemoteConfig config_;
};

/// Anything that turns a request into a response: the in-process gateway or
/// an HTTP client of a running one.
class ChatService {
 public:
  virtual ~ChatService() = default;
  virtual ChatResponse chat(const ChatRequest& request) const = 0;
};

class Gateway final : public ChatService {
 public:
  explicit Gateway(std::shared_ptr<const Backend> backend);
  /// Validates, times the backend call and attaches the parsed echo.
  ChatResponse chat(const ChatRequest& request) const override;
  const Backend& backend() const { return *backend_; }

 private:
  std::shared_ptr<const Backend> backend_;
};

/// Client of a running gateway's POST /v1/chat.
class GatewayClient final : public ChatService {
 public:
  explicit GatewayClient(std::string base_url, double timeout_s = 30.0);
  /// Service errors are rethrown with their original code.
  ChatResponse chat(const ChatRequest& request) const override;

 private:
  std::string base_url_;
  double timeout_s_;
};

/// Sends every sample to the service and records the raw answers, in sample
/// order regardless of the thread count.
std::vector<PredictionRecord> collect_predictions(std::span<const InstructionSample> samples,
                                                  const ChatService& service, unsigned threads = 1,
                                                  std::string_view session_id = "evaluation");

/// Splits "http://host:port" into the part httplib expects; throws BadConfig.
struct Endpoint {
  std::string host;
  int port = 80;
};
Endpoint parse_endpoint(std::string_view base_url);

}  // namespace pgt
