#pragma once

#include <stdexcept>
#include <string>

namespace icnet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input data is unusable: malformed files, bad shapes, empty inputs.
class DataError : public Error {
 public:
  using Error::Error;
};

class FormatError : public DataError {
 public:
  using DataError::DataError;
};

class DimensionError : public DataError {
 public:
  using DataError::DataError;
};

class TruncatedError : public DataError {
 public:
  using DataError::DataError;
};

class ShapeError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

/// A computation produced or would produce a non-finite or non-convergent result.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace icnet
