#pragma once

#include <stdexcept>
#include <string>

namespace oosdsd {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Input data or configuration violates a documented contract.
class ValidationError : public Error {
public:
  using Error::Error;
};

class MissingAnnotationError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class DimensionMismatchError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class EmptyMaskError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class DegenerateDepthError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class TooFewRecordsError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class KeyMismatchError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

class NotNormalizedError : public ValidationError {
public:
  using ValidationError::ValidationError;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

} // namespace oosdsd
