#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace faust {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes do not conform for the named operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A value is outside its documented domain (negative weight, bad temperature, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

/// Binary file problems. Each failure mode has its own type so callers can
/// distinguish a foreign file from a stale one or a partial write.
class FormatError : public Error {
 public:
  using Error::Error;
};

class MagicMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

class VersionMismatch : public FormatError {
 public:
  using FormatError::FormatError;
};

class TruncatedFile : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : Error(what + " at step " + std::to_string(step)), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Source pretraining never reached the minimum validation accuracy.
class ConvergenceError : public Error {
 public:
  using Error::Error;
};

}  // namespace faust
