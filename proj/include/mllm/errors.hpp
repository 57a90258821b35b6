#pragma once

#include <stdexcept>
#include <string>

namespace mllm {

// Shape disagreement between operands of a graph op.
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Out-of-range token or row index.
struct IndexError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Illegal state transition (second backward, mutating a consumed tensor, ...).
struct StateError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Invalid configuration value (drop rate >= 1, bad sharing pattern, ...).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite value where a finite one is required.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input text (invalid UTF-8, empty corpus, ...).
struct IngestionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unknown language id or missing model component.
struct LookupError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace mllm
