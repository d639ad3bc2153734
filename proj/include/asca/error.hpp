#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace asca {

enum class ErrorKind {
  invalid_design,
  over_parameterized,
  formula,
  estimability,
  degenerate_data,
  domain,
  missing_data,
  invalid_argument,
  io,
  unsupported,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_design: return "invalid_design";
    case ErrorKind::over_parameterized: return "over_parameterized";
    case ErrorKind::formula: return "formula";
    case ErrorKind::estimability: return "estimability";
    case ErrorKind::degenerate_data: return "degenerate_data";
    case ErrorKind::domain: return "domain";
    case ErrorKind::missing_data: return "missing_data";
    case ErrorKind::invalid_argument: return "invalid_argument";
    case ErrorKind::io: return "io";
    case ErrorKind::unsupported: return "unsupported";
  }
  return "unknown";
}

/// Every library failure is an asca::Error carrying a machine-readable kind.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

}  // namespace asca
