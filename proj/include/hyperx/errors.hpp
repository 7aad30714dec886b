#pragma once

#include <stdexcept>
#include <string>

namespace hyperx {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes or signal lengths.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Wrong tensor rank (including a non-scalar loss handed to backward).
class RankError : public Error {
 public:
  using Error::Error;
};

/// Invalid hyperparameters, widths not divisible by n, bad filter corners.
class ConfigError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

/// Batch normalization asked for batch statistics from a single sample.
class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values in inputs, gradients or the loss.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Missing files, bad magic numbers, malformed manifests.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload does not match what its manifest declares.
class IntegrityError : public FormatError {
 public:
  using FormatError::FormatError;
};

class StratificationError : public Error {
 public:
  using Error::Error;
};

}  // namespace hyperx
