#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace prefopt {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid configuration or violated precondition on caller-supplied input.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Malformed persisted data (dataset, checkpoint, manifest).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// A non-finite loss or gradient was produced during training.
class NumericalError : public Error {
 public:
  NumericalError(std::size_t step, std::ptrdiff_t sample, const std::string& what)
      : Error(what), step_(step), sample_(sample) {}

  std::size_t step() const noexcept { return step_; }
  /// Index of the offending sample within the batch, or -1 if unknown.
  std::ptrdiff_t sample() const noexcept { return sample_; }

 private:
  std::size_t step_;
  std::ptrdiff_t sample_;
};

}  // namespace prefopt
