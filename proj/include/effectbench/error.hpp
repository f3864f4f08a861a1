#pragma once

#include <stdexcept>
#include <string>

namespace effectbench {

enum class ErrorKind {
  parse,       // malformed input bytes
  config,      // analysis configuration inconsistent with the data
  numeric,     // a fit failed (separation, collinearity, non-convergence)
  not_found,   // unknown dataset, job, or variable
  conflict,    // resource exists but is not in the requested state
  io,          // filesystem failure
};

const char* to_string(ErrorKind kind) noexcept;

/// Every failure raised by the library. `detail` carries row- or
/// column-level context (e.g. "row 3: expected 2 cells, found 3").
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, std::string detail = {})
      : std::runtime_error(message), kind_(kind), detail_(std::move(detail)) {}

  ErrorKind kind() const noexcept { return kind_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorKind kind_;
  std::string detail_;
};

}  // namespace effectbench
