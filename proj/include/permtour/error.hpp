#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace permtour {

enum class ErrorCode {
  Validation,
  Structural,
  ShapeMismatch,
  NonFinite,
  Capability,
  Checksum,
  Version,
  Fingerprint,
  Io,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::Validation: return "E_VALIDATION";
    case ErrorCode::Structural: return "E_STRUCTURAL";
    case ErrorCode::ShapeMismatch: return "E_SHAPE";
    case ErrorCode::NonFinite: return "E_NONFINITE";
    case ErrorCode::Capability: return "E_CAPABILITY";
    case ErrorCode::Checksum: return "E_CHECKSUM";
    case ErrorCode::Version: return "E_VERSION";
    case ErrorCode::Fingerprint: return "E_FINGERPRINT";
    case ErrorCode::Io: return "E_IO";
  }
  return "E_UNKNOWN";
}

/// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace permtour
