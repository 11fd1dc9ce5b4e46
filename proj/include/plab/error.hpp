#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace plab {

enum class ErrorCode {
  invalid_shape,
  numeric_overflow,
  state,
  inconsistent_sites,
  empty_window,
  invalid_threshold,
  too_few_sites,
  not_found,
  invalid_arch,
  not_started,
  config,
  io,
};

inline std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_shape: return "invalid-shape";
    case ErrorCode::numeric_overflow: return "numeric-overflow";
    case ErrorCode::state: return "state";
    case ErrorCode::inconsistent_sites: return "inconsistent-sites";
    case ErrorCode::empty_window: return "empty-window";
    case ErrorCode::invalid_threshold: return "invalid-threshold";
    case ErrorCode::too_few_sites: return "too-few-sites";
    case ErrorCode::not_found: return "not-found";
    case ErrorCode::invalid_arch: return "invalid-arch";
    case ErrorCode::not_started: return "not-started";
    case ErrorCode::config: return "config";
    case ErrorCode::io: return "io";
  }
  return "unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and tests) can branch on the kind without parsing messages.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace plab
