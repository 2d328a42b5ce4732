#pragma once

#include <stdexcept>
#include <string>

namespace vagnmt {

// Base of every error raised by the library. The CLI maps the concrete
// type to a process exit code.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes that do not fit together.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// NaN/Inf inputs, zero-norm vectors and similar domain violations.
class NumericDomainError : public Error {
 public:
  using Error::Error;
};

// Non-finite training loss or gradient.
class NumericError : public Error {
 public:
  using Error::Error;
};

// API misuse, e.g. calling backward() on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Bad user data: empty sentences, empty corpora, out-of-range indices.
class InputError : public Error {
 public:
  using Error::Error;
};

class EncodingError : public InputError {
 public:
  using InputError::InputError;
};

class AlignmentError : public InputError {
 public:
  using InputError::InputError;
};

class FormatError : public InputError {
 public:
  using InputError::InputError;
};

}  // namespace vagnmt
