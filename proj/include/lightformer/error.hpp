#pragma once

#include <stdexcept>
#include <string>

namespace lightformer {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Shape or dimension disagreement between operands.
struct ShapeError : Error {
  using Error::Error;
};

// Out-of-range token id or position.
struct IndexError : Error {
  using Error::Error;
};

// Invalid configuration value (CLI, config file, or programmatic).
struct ConfigError : Error {
  using Error::Error;
};

// Attention mask violates a structural requirement (e.g. empty row).
struct MaskError : Error {
  using Error::Error;
};

// API misuse: missing gradients, non-scalar loss, etc.
struct ContractError : Error {
  using Error::Error;
};

// NaN/Inf where a finite value is required.
struct NumericError : Error {
  using Error::Error;
};

// File I/O and serialization failures.
struct IoError : Error {
  using Error::Error;
};

}  // namespace lightformer
