#pragma once

#include <stdexcept>
#include <string>

namespace lvcov {

/// Base of every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes that do not agree with an operation's contract.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Hyperparameter or argument outside its admissible range.
class ParameterError : public Error {
 public:
  using Error::Error;
};

/// Batch statistics that are undefined, e.g. an empty polarity group.
class StatisticsError : public Error {
 public:
  using Error::Error;
};

/// Argument outside the mathematical domain of a function.
class DomainError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values met during optimization.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed, truncated or corrupted file contents.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Phantom specification that cannot be rendered.
class SpecError : public Error {
 public:
  using Error::Error;
};

/// Volume with too few slices for the requested sampling.
class SampleError : public Error {
 public:
  using Error::Error;
};

/// Baseline measurement failures (constant image, empty mask).
class MeasurementError : public Error {
 public:
  using Error::Error;
};

/// Invalid inputs to assessment and reporting.
class InputError : public Error {
 public:
  using Error::Error;
};

}  // namespace lvcov
