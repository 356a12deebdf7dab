#pragma once

#include <stdexcept>
#include <string>

namespace salaud {

enum class ErrorCode {
  InvalidArgument,
  InputShape,
  Domain,
  Index,
  Consistency,
  Spec,
  Format,
  Config,
  Size,
  Training,
  Solver,
  Capacity,
  Architecture,
  Selection,
  Io,
};

const char* to_string(ErrorCode code);

// Every failure raised by the library carries one of the codes above; the C
// API maps them one-to-one onto status values.
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
  if (!condition) fail(code, message);
}

}  // namespace salaud
