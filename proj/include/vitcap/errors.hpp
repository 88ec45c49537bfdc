#pragma once

#include <stdexcept>
#include <string>

namespace vitcap {

// Base for every error this library raises deliberately.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Operand shapes do not fit the operation (messages name both shapes).
class ShapeError : public Error {
 public:
  using Error::Error;
};

// An index (label, coordinate, axis) is out of its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// An operation produced or was asked to digest NaN/Inf.
class NonFiniteError : public Error {
 public:
  using Error::Error;
};

// A configuration value violates its documented invariant.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// A numeric argument is outside the domain of the function.
class DomainError : public Error {
 public:
  using Error::Error;
};

// File and serialization problems.
class IoError : public Error {
 public:
  using Error::Error;
};

// IDX container: wrong magic number.
class IdxMagicError : public IoError {
 public:
  using IoError::IoError;
};

// IDX container: file ends before the declared payload.
class IdxTruncatedError : public IoError {
 public:
  using IoError::IoError;
};

// IDX pair: image count and label count disagree.
class IdxCountMismatchError : public IoError {
 public:
  using IoError::IoError;
};

// Training aborted (non-finite loss or gradient); message names the spot.
class TrainError : public Error {
 public:
  using Error::Error;
};

}  // namespace vitcap
