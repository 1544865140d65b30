#include "pgt/errors.hpp"

namespace pgt {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
    case ErrorCode::TruncatedData: return "TruncatedData";
    case ErrorCode::DimsMismatch: return "DimsMismatch";
    case ErrorCode::UnknownOrgan: return "UnknownOrgan";
    case ErrorCode::MissingTarget: return "MissingTarget";
    case ErrorCode::SchemaViolation: return "SchemaViolation";
    case ErrorCode::IoFailure: return "IoFailure";
    case ErrorCode::OutOfBounds: return "OutOfBounds";
    case ErrorCode::UnknownInstruction: return "UnknownInstruction";
    case ErrorCode::EmptyStage: return "EmptyStage";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::UnknownSliceId: return "UnknownSliceId";
    case ErrorCode::CoordinateSpaceMismatch: return "CoordinateSpaceMismatch";
    case ErrorCode::MissingRecording: return "MissingRecording";
    case ErrorCode::RemoteUnavailable: return "RemoteUnavailable";
    case ErrorCode::RemoteTimeout: return "RemoteTimeout";
    case ErrorCode::RemoteMalformedResponse: return "RemoteMalformedResponse";
    case ErrorCode::InvalidRequest: return "InvalidRequest";
    case ErrorCode::PortInUse: return "PortInUse";
    case ErrorCode::BadConfig: return "BadConfig";
  }
  return "Unknown";
}

std::optional<ErrorCode> error_code_from_string(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::BadConfig); ++i) {
    const auto code = static_cast<ErrorCode>(i);
    if (to_string(code) == name) return code;
  }
  return std::nullopt;
}

int exit_code(ErrorCode code) {
  switch (code) {
    case ErrorCode::BadConfig:
    case ErrorCode::UnknownOrgan:
    case ErrorCode::UnknownInstruction:
      return 2;
    case ErrorCode::IoFailure:
      return 3;
    case ErrorCode::MalformedHeader:
    case ErrorCode::UnsupportedDatatype:
    case ErrorCode::TruncatedData:
    case ErrorCode::SchemaViolation:
      return 4;
    case ErrorCode::DimsMismatch:
    case ErrorCode::MissingTarget:
    case ErrorCode::OutOfBounds:
    case ErrorCode::EmptyStage:
    case ErrorCode::EmptyInput:
    case ErrorCode::UnknownSliceId:
    case ErrorCode::CoordinateSpaceMismatch:
    case ErrorCode::MissingRecording:
      return 5;
    case ErrorCode::RemoteUnavailable:
    case ErrorCode::RemoteTimeout:
    case ErrorCode::RemoteMalformedResponse:
      return 6;
    case ErrorCode::InvalidRequest:
    case ErrorCode::PortInUse:
      return 7;
  }
  return 1;
}

}  // namespace pgt
