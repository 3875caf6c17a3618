#include "histex/error.hpp"

namespace histex {

std::string_view to_string(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::OutOfBounds: return "OutOfBounds";
    case ErrorKind::NegativeCount: return "NegativeCount";
    case ErrorKind::EmptyInput: return "EmptyInput";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteInput: return "NonFiniteInput";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::TooFewPairs: return "TooFewPairs";
    case ErrorKind::KOutOfRange: return "KOutOfRange";
    case ErrorKind::TOutOfRange: return "TOutOfRange";
    case ErrorKind::FingerprintMismatch: return "FingerprintMismatch";
    case ErrorKind::IoError: return "IoError";
  }
  return "Error";
}

}  // namespace histex
