#pragma once

#include <stdexcept>
#include <string>

namespace crdnn {

enum class ErrorCode {
  invalid_argument,
  unbounded_water_level,
  degenerate_ensemble,
  non_convergence,
  training_diverged,
  io_failure,
  format_mismatch,
  shape_mismatch,
  config_mismatch,
  missing_prerequisite,
};

const char* to_string(ErrorCode code) noexcept;

/// Every failure in the library surfaces as this exception; `code()` lets
/// callers (the CLI in particular) map failures to exit statuses.
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

inline void require(bool condition, const std::string& what) {
  if (!condition) fail(ErrorCode::invalid_argument, what);
}

}  // namespace crdnn
