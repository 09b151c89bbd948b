#pragma once

#include <stdexcept>
#include <string>

namespace paritylink {

// Base class for everything the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input violates a documented precondition (non-normalized vector, bad range).
class ValidationError : public Error {
 public:
  using Error::Error;
};

// More photons than a ket can hold.
class CapacityError : public Error {
 public:
  using Error::Error;
};

// Element or circuit wiring is inconsistent (unknown kind, undeclared path).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

class UnsupportedModelError : public Error {
 public:
  using Error::Error;
};

// Conditioning on an event of zero probability.
class UndefinedConditionalError : public Error {
 public:
  using Error::Error;
};

class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

// Config file does not match the schema.
class SchemaError : public Error {
 public:
  using Error::Error;
};

}  // namespace paritylink
