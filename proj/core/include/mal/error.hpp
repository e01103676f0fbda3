#pragma once

#include <stdexcept>
#include <string>

namespace mal {

enum class ErrorKind {
  Config,
  Parse,
  Integrity,
  Domain,
  Shape,
  Index,
  Numeric,
  Graph,
  Corruption,
  Capacity,
  DegenerateData,
  UndefinedMetric,
  Data,
  Dependency,
  Staleness,
  Io,
};

const char* to_string(ErrorKind kind) noexcept;

// Single exception type for the library; the kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

}  // namespace mal
