#pragma once

#include <stdexcept>
#include <string>

namespace lnscope {

// Base for every error raised by the library. The CLI maps the subclasses
// onto its exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed or inconsistent input data: bad files, unresolvable tensors,
// shape mismatches.
class DataError : public Error {
 public:
  using Error::Error;
};

// Checkpoint container problems (header, offsets, truncation).
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Schema resolution failures.
class SchemaError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

// Non-finite values or divergence.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Caller violated a documented precondition.
class UsageError : public Error {
 public:
  using Error::Error;
};

}  // namespace lnscope
