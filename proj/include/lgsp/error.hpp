#pragma once

#include <stdexcept>
#include <string>

namespace lgsp {

// Base of every error the library throws. The C API maps the subclasses onto
// its integer status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
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

// A runtime invariant (leakage, ordering, normalization) failed.
class InvariantViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace lgsp
