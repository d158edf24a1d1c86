#pragma once

#include <stdexcept>
#include <string>

namespace vslnet {

// Operand shapes do not agree for an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Invalid hyperparameters or model/variant configuration.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Malformed or missing dataset content (annotations, feature files, embeddings).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// An API precondition was violated by the caller.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite values during training.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace vslnet
