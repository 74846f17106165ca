#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace teamred {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input shape, unknown names, malformed config.
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Out-of-range scenario parameters.
class ParameterError : public Error {
 public:
  using Error::Error;
};

// A realized action left the declared action box.
class DomainError : public Error {
 public:
  DomainError(std::size_t dm, const std::string& what)
      : Error(what), dm_(dm) {}
  std::size_t dm() const { return dm_; }

 private:
  std::size_t dm_;
};

class InvariantViolation : public Error {
 public:
  using Error::Error;
};

class UnsupportedForm : public Error {
 public:
  using Error::Error;
};

class WeightOverflow : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

}  // namespace teamred
