#pragma once

#include <stdexcept>
#include <string>

namespace dida {

// Base class for every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Shape or dimensionality mismatch between tensors / layers.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid argument value (out of range, wrong enum string, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// File and format problems (IDX, checkpoints, metrics).
class IoError : public Error {
 public:
  using Error::Error;
};

// Config parsing / validation problems (unknown keys, missing sections).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite losses or other numeric breakdown during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace dida
