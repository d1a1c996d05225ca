#pragma once

#include <stdexcept>
#include <string>

namespace xcod {

enum class ErrorCode {
  kInvalidArgument = 1,
  kShapeMismatch,
  kNonFinite,
  kIo,
  kBadMagic,
  kUnsupportedVersion,
  kTruncatedPayload,
  kStreamExhausted,
  kConfig,
  kNetwork,
  kNotFound,
  kInternal,
};

const char* error_code_name(ErrorCode code);

// All recoverable failures in the core are raised as xcod::Error; the C API
// maps the code onto xcod_status.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace xcod
