#pragma once

#include <stdexcept>
#include <string>

namespace curio {

/// Base class for every error raised by the library. `exit_code()` is the
/// process status the CLI reports for it: 2 invalid input, 3 IO, 4 numeric.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual int exit_code() const noexcept { return 2; }
};

class ShapeMismatch : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class NotScalar : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 4; }
};

class BehindCamera : public Error {
 public:
  using Error::Error;
};

class RejectionExhausted : public Error {
 public:
  using Error::Error;
};

class CountMismatch : public Error {
 public:
  using Error::Error;
};

class CapabilityError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
  int exit_code() const noexcept override { return 3; }
};

/// Malformed on-disk data. `record()` is the zero-based index of the first
/// record that failed to parse, or -1 when the failure is in a header.
class FormatError : public Error {
 public:
  FormatError(const std::string& what, long record = -1)
      : Error(what), record_(record) {}
  long record() const noexcept { return record_; }

 private:
  long record_;
};

}  // namespace curio
