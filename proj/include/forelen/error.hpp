#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace forelen {

enum class ErrorKind {
  kDomain,
  kUsage,
  kUndefinedCorrelation,
  kDegenerateBins,
  kConsistency,
  kDivergence,
  kIo,
  // Dump format failures.
  kMagicMismatch,
  kVersionMismatch,
  kTruncated,
  kOffsetOutOfRange,
  kEmptyPrompt,
  kMalformed,
};

std::string_view kind_name(ErrorKind kind);

// Every failure raised by the library carries a kind so callers (the CLI in
// particular) can map it to an exit code and name it in diagnostics.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(kind_name(kind)) + ": " + message),
        kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
  throw Error(kind, message);
}

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace forelen
