#pragma once

#include <stdexcept>
#include <string>

namespace agd {

// Shape mismatch between operands.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf encountered in a loss, gradient or model output.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A sampler state became non-finite.
struct SamplerDivergence : NumericError {
  using NumericError::NumericError;
};

// Caller supplied an invalid value (unknown class id, k too large, ...).
struct InputError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct PreconditionError : std::logic_error {
  using std::logic_error::logic_error;
};

// Artifacts produced under different schedules, teachers or configs.
struct CompatibilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace agd
