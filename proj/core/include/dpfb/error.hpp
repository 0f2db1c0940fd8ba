#pragma once

#include <stdexcept>
#include <string>

namespace dpfb {

// Base class for all dpfb errors. Subclasses map to CLI exit codes:
// ParameterError -> 2, CalibrationError -> 3, everything else -> 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid argument values, malformed configs, violated preconditions.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// Non-finite intermediates or results where a finite value is required.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Noise calibration could not reach the target within the sigma bracket.
class CalibrationError : public Error {
 public:
  using Error::Error;
};

// A metric has no defined value on the given data (e.g. single-class truth).
class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

// Bootstrap / test procedure failed (e.g. too many undefined resamples).
class StatsError : public Error {
 public:
  using Error::Error;
};

// Training diverged or produced non-finite parameters.
class TrainingError : public Error {
 public:
  using Error::Error;
};

// File and schema errors; messages carry 1-based line numbers where known.
class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace dpfb
