#pragma once

#include <stdexcept>

namespace ebmdiv {

// shape mismatch between operands
struct DimensionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// violated precondition or broken invariant
struct ContractError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// NaN/Inf where a finite value is required
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// file system or parse failure
struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// a required run artifact (model snapshot, report) is missing
struct ArtifactError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ebmdiv
