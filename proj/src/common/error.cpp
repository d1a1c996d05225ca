#include "common/error.hpp"

namespace xcod {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid argument";
    case ErrorCode::kShapeMismatch: return "shape mismatch";
    case ErrorCode::kNonFinite: return "non-finite value";
    case ErrorCode::kIo: return "io failure";
    case ErrorCode::kBadMagic: return "bad magic";
    case ErrorCode::kUnsupportedVersion: return "unsupported version";
    case ErrorCode::kTruncatedPayload: return "truncated payload";
    case ErrorCode::kStreamExhausted: return "stream exhausted";
    case ErrorCode::kConfig: return "config error";
    case ErrorCode::kNetwork: return "network failure";
    case ErrorCode::kNotFound: return "not found";
    case ErrorCode::kInternal: return "internal error";
  }
  return "unknown";
}

}  // namespace xcod
