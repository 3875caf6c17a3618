#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace histex {

enum class ErrorKind {
  OutOfBounds,
  NegativeCount,
  EmptyInput,
  ParseError,
  ShapeMismatch,
  NonFiniteInput,
  NonFiniteLoss,
  TooFewPairs,
  KOutOfRange,
  TOutOfRange,
  FingerprintMismatch,
  IoError,
};

std::string_view to_string(ErrorKind kind) noexcept;

/// Base exception for every recoverable failure raised by the library.
/// The kind is stable and is what the CLI maps onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
  if (!condition) fail(kind, message);
}

}  // namespace histex
