#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace vtcd {

enum class ErrorCode {
  kInvalidArgument,
  kNonFiniteData,
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kShapeOverflow,
  kRunLengthMismatch,
  kIo,
  kManifest,
  kBackend,
  kTransport,
  kProtocol,
};

const char* error_code_name(ErrorCode code);

// All library failures surface as vtcd::Error; the CLI maps codes onto exit
// statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

// Raised by model backends. Transport failures are retryable by the caller.
class BackendError : public Error {
 public:
  BackendError(ErrorCode code, const std::string& message, std::string remote_code = {})
      : Error(code, message), remote_code_(std::move(remote_code)) {}

  const std::string& remote_code() const noexcept { return remote_code_; }
  bool retryable() const noexcept { return code() == ErrorCode::kTransport; }

 private:
  std::string remote_code_;
};

inline const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kNonFiniteData: return "non-finite-data";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kShapeOverflow: return "shape-overflow";
    case ErrorCode::kRunLengthMismatch: return "run-length-mismatch";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kManifest: return "manifest";
    case ErrorCode::kBackend: return "backend";
    case ErrorCode::kTransport: return "transport";
    case ErrorCode::kProtocol: return "protocol";
  }
  return "unknown";
}

}  // namespace vtcd
