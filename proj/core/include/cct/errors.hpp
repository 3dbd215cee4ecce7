#pragma once

#include <stdexcept>
#include <string>

namespace cct {

// Root of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Tensor shapes that do not agree for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// Invalid hyperparameters or geometry (e.g. non-integer conv output size).
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Label or class index outside its valid range.
class IndexError : public Error {
 public:
  using Error::Error;
};

// Input sequence length differs from the fixed context length of a
// token-mixing attention layer.
class ContextLengthError : public ShapeError {
 public:
  using ShapeError::ShapeError;
};

// API misuse, e.g. calling backward on a non-scalar.
class ContractError : public Error {
 public:
  using Error::Error;
};

class DatasetError : public Error {
 public:
  enum class Kind { kNotFound, kCorrupt, kRange };
  DatasetError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace cct
