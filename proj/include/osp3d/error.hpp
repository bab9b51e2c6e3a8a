#pragma once

#include <stdexcept>
#include <string>

namespace osp3d {

enum class ErrorCode : int {
  kOk = 0,
  kInvalidParameter = 1,
  kContractViolation = 2,
  kFormat = 3,
  kIo = 4,
  kEmptySelection = 5,
  kUndefined = 6,
  kNonFinite = 7,
  kUsage = 8,
};

const char* error_code_name(ErrorCode code);

// Base exception for everything thrown by the core library. The C API maps
// the code onto its status enum.
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

}  // namespace osp3d
