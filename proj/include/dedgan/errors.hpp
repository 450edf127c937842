#pragma once

#include <stdexcept>
#include <string>

namespace dedgan {

/// Base of every error the library raises. CLI maps these to exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shape or size mismatch. The message names the offending axis or operand.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, out-of-range probabilities, failed decompositions.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration (batch size, unknown keys, bad profile).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Out-of-range index or label.
class RangeError : public Error {
 public:
  using Error::Error;
};

/// Invalid function argument (empty sample set, zero vector).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Shape-model fitting and alignment failures.
class FitError : public Error {
 public:
  using Error::Error;
};

/// Malformed manifest lines, unreadable images, empty datasets.
class IngestionError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint archive magic/version/corruption problems.
class CheckpointError : public Error {
 public:
  using Error::Error;
};

/// Evaluation protocol violations (gallery coverage, empty folds).
class ProtocolError : public Error {
 public:
  using Error::Error;
};

/// Training aborted; the message names the offending loss term.
class TrainingError : public Error {
 public:
  using Error::Error;
};

/// The pose oracle missed its held-out error bound.
class OracleUnfitError : public Error {
 public:
  using Error::Error;
};

}  // namespace dedgan
