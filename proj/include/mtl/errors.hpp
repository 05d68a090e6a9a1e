#pragma once

#include <stdexcept>
#include <string>

namespace mtl {

// Base class for all library errors.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Shape/rank mismatch between operands.
struct DimensionError : Error {
  explicit DimensionError(const std::string& msg) : Error(msg) {}
};

// Batch statistics would be undefined (e.g. batch of one in training mode).
struct DegenerateBatchError : Error {
  explicit DegenerateBatchError(const std::string& msg) : Error(msg) {}
};

// A request exceeds what the data can provide (classes, samples, ...).
struct CapacityError : Error {
  explicit CapacityError(const std::string& msg) : Error(msg) {}
};

// Out-of-range label or index.
struct IndexError : Error {
  explicit IndexError(const std::string& msg) : Error(msg) {}
};

// Malformed or incompatible serialized data.
struct FormatError : Error {
  explicit FormatError(const std::string& msg) : Error(msg) {}
};

// API misuse: a precondition of an operation does not hold.
struct ContractError : Error {
  explicit ContractError(const std::string& msg) : Error(msg) {}
};

// Parameters do not belong to the model they are applied to.
struct BindingError : Error {
  explicit BindingError(const std::string& msg) : Error(msg) {}
};

// Bad configuration key or value.
struct ConfigError : Error {
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Filesystem failure.
struct IoError : Error {
  explicit IoError(const std::string& msg) : Error(msg) {}
};

}  // namespace mtl
