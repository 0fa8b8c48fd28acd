#pragma once

#include <stdexcept>
#include <string>

namespace mcg {

/// Root of every error the library raises. Each subclass maps to one error
/// contract; the CLI turns any of them into a nonzero exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class BroadcastError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

class KernelTooLarge : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

class NotScalarError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class LabelError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DivergedError : public Error {
 public:
  using Error::Error;
};

}  // namespace mcg
