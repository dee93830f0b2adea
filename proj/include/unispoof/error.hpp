#pragma once

#include <stdexcept>
#include <string>

namespace unispoof {

// Error categories. The C API maps these one-to-one onto status codes and the
// CLI maps kInvalidArgument/kShape onto exit code 1, everything else onto 2.
enum class ErrorCode {
  kInvalidArgument = 1,
  kShape = 2,
  kIo = 3,
  kRuntime = 4,
  kNumerical = 5,
};

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

inline void require(bool ok, ErrorCode code, const std::string& what) {
  if (!ok) throw Error(code, what);
}

}  // namespace unispoof
