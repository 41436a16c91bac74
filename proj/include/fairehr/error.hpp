#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fairehr {

enum class ErrorKind {
  kDimension,
  kDomain,
  kContract,
  kConfig,
  kSchema,
  kParse,
  kIngestion,
  kImputation,
  kMetric,
  kTraining,
  kPipeline,
  kIo,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; `kind()` tells callers which
/// contract was broken so the CLI can emit a machine-readable error.
class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string &message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string &message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string &message) {
  if (!condition) {
    throw Error(kind, message);
  }
}

} // namespace fairehr
