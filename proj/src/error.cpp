#include "crdnn/error.hpp"

namespace crdnn {

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::unbounded_water_level: return "unbounded water level";
    case ErrorCode::degenerate_ensemble: return "degenerate ensemble";
    case ErrorCode::non_convergence: return "non-convergence";
    case ErrorCode::training_diverged: return "training diverged";
    case ErrorCode::io_failure: return "I/O failure";
    case ErrorCode::format_mismatch: return "format mismatch";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::config_mismatch: return "configuration mismatch";
    case ErrorCode::missing_prerequisite: return "missing prerequisite";
  }
  return "unknown error";
}

}  // namespace crdnn
