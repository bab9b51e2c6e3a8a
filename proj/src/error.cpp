#include "osp3d/error.hpp"

namespace osp3d {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kOk: return "ok";
    case ErrorCode::kInvalidParameter: return "invalid_parameter";
    case ErrorCode::kContractViolation: return "contract_violation";
    case ErrorCode::kFormat: return "format_error";
    case ErrorCode::kIo: return "io_error";
    case ErrorCode::kEmptySelection: return "empty_selection";
    case ErrorCode::kUndefined: return "undefined";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kUsage: return "usage_error";
  }
  return "unknown";
}

}  // namespace osp3d
