#pragma once

#include <stdexcept>
#include <string>

namespace onavos {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes or mask dimensions that do not fit together.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A forward op produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid argument value (threshold out of range, even erosion size, ...).
class ValueError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace onavos
