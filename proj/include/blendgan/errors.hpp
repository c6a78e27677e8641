#pragma once

#include <stdexcept>
#include <string>

namespace blendgan {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad argument values (sizes, ratios, indices).
class InvalidInput : public Error {
 public:
  using Error::Error;
};

/// A crop or region does not fit the tensor it addresses.
class GeometryError : public Error {
 public:
  using Error::Error;
};

/// An identity map or weight vector violates the simplex invariants.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Masks overlap or leave pixels uncovered.
class PartitionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// A categorical map was required but a mixture was supplied.
class NonCategoricalError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Network input smaller than the receptive field allows.
class TooSmallInput : public InvalidInput {
 public:
  using InvalidInput::InvalidInput;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint digest mismatch or truncated file.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Unsupported on-disk format version.
class VersionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite losses or gradients during optimization.
class TrainingFault : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class NotFound : public Error {
 public:
  using Error::Error;
};

}  // namespace blendgan
