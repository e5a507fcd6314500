#pragma once

#include <stdexcept>
#include <string>

namespace otdr {

enum class ErrorKind {
  Config,     // invalid configuration
  Placement,  // event does not fit in the trace
  Shape,      // tensor / window shape mismatch
  State,      // operation called out of order
  Data,       // malformed data, NaN input, empty batch
  Format,     // persisted file unreadable or wrong version
  Numeric,    // NaN loss, calibration failure
  Domain,     // argument outside a function's domain
};

const char* to_string(ErrorKind kind) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) {
  throw Error(kind, what);
}

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

}  // namespace otdr
