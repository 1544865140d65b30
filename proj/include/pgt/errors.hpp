#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace pgt {

enum class ErrorCode {
  // volume-io
  MalformedHeader,
  UnsupportedDatatype,
  TruncatedData,
  DimsMismatch,
  // slice-pipeline / catalog
  UnknownOrgan,
  MissingTarget,
  SchemaViolation,
  IoFailure,
  // instruction-builder
  OutOfBounds,
  UnknownInstruction,
  EmptyStage,
  // grounding-eval
  EmptyInput,
  UnknownSliceId,
  CoordinateSpaceMismatch,
  // gateway
  MissingRecording,
  RemoteUnavailable,
  RemoteTimeout,
  RemoteMalformedResponse,
  InvalidRequest,
  PortInUse,
  // cli
  BadConfig,
};

std::string_view to_string(ErrorCode code);
/// Inverse of to_string; nullopt for unknown names.
std::optional<ErrorCode> error_code_from_string(std::string_view name);

/// Process exit code for the family an error belongs to.
///   2 config/usage, 3 I/O, 4 file format or schema, 5 data/content,
///   6 remote model, 7 service.
int exit_code(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace pgt
