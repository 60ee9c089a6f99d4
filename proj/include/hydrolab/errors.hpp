#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hydrolab {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid user input (configuration key, malformed file, bad argument).
class ValidationError : public Error {
 public:
  ValidationError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

/// Numerical failures; the CLI maps these to exit code 2.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class TruncationError : public NumericalError { using NumericalError::NumericalError; };
class BracketError : public NumericalError { using NumericalError::NumericalError; };
class CflError : public NumericalError { using NumericalError::NumericalError; };
class NegativityError : public NumericalError { using NumericalError::NumericalError; };
class FloorError : public NumericalError { using NumericalError::NumericalError; };
class MassMismatchError : public NumericalError { using NumericalError::NumericalError; };
class DegenerateFitError : public NumericalError { using NumericalError::NumericalError; };

class AsymmetryError : public ValidationError {
 public:
  explicit AsymmetryError(const std::string& what) : ValidationError("kernel", what) {}
};
class NormalizationError : public ValidationError {
 public:
  explicit NormalizationError(const std::string& what) : ValidationError("kernel", what) {}
};
class ShapeError : public ValidationError {
 public:
  explicit ShapeError(const std::string& what) : ValidationError("", what) {}
};
class RangeError : public ValidationError {
 public:
  explicit RangeError(const std::string& what) : ValidationError("", what) {}
};

class EmptySiteError : public Error { using Error::Error; };
class NotOneJumpError : public Error { using Error::Error; };

/// Raised when the total jump rate vanishes. Carries the number of events
/// performed before the system froze.
class FrozenError : public NumericalError {
 public:
  explicit FrozenError(std::uint64_t events_done = 0)
      : NumericalError("total jump rate is zero after " + std::to_string(events_done) + " events"),
        events_done_(events_done) {}
  std::uint64_t events_done() const noexcept { return events_done_; }

 private:
  std::uint64_t events_done_;
};

}  // namespace hydrolab
