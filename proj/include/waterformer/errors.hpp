#pragma once

#include <stdexcept>
#include <string>

namespace waterformer {

// Shapes of two operands disagree, or an image is too small for an operation.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value is outside the domain an operation is defined on.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: unknown enum names, inconsistent hyperparameters.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Missing or undecodable input files, malformed manifests.
class IngestionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Corrupted or truncated archives.
class IntegrityError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Archive was written by an incompatible format version.
class IncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during optimization (NaN loss, non-finite activations).
class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace waterformer
