#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dictnet {

/// Base class for all library errors.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Incompatible tensor/matrix shapes. Message carries both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument values (out-of-range beta, zero matrix, bad config).
class ArgumentError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values where finite ones are required.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Rank-deficient matrix in a solve that requires full column rank.
class RankError : public Error {
 public:
  RankError(const std::string& msg, std::size_t column)
      : Error(msg), column_(column) {}
  std::size_t column() const { return column_; }

 private:
  std::size_t column_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& msg, std::size_t iteration)
      : Error(msg), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Model structure does not admit the requested operation.
class StructureError : public Error {
 public:
  using Error::Error;
};

/// Bad configuration file or CLI usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Dataset-level problems (missing files, classes too small, bad splits).
class DataError : public Error {
 public:
  using Error::Error;
};

/// IDX / image file does not start with the expected magic.
class BadMagicError : public DataError {
 public:
  using DataError::DataError;
};

/// File ends before the declared payload.
class TruncatedFileError : public DataError {
 public:
  using DataError::DataError;
};

/// Image and label files disagree on the sample count.
class CountMismatchError : public DataError {
 public:
  using DataError::DataError;
};

/// Checkpoint container violations.
class FormatError : public Error {
 public:
  using Error::Error;
};

class VersionError : public FormatError {
 public:
  using FormatError::FormatError;
};

class ChecksumError : public FormatError {
 public:
  using FormatError::FormatError;
};

}  // namespace dictnet
