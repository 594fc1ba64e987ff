#pragma once

#include <stdexcept>
#include <string>

namespace beamsel {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad user-supplied configuration (CLI exit code 2).
struct ConfigError : Error {
  using Error::Error;
};

// Numerical failures (CLI exit code 3).
struct NumericalError : Error {
  using Error::Error;
};

struct ShapeMismatch : ConfigError {
  using ConfigError::ConfigError;
};

struct RankDeficient : NumericalError {
  using NumericalError::NumericalError;
};

struct SingularCombiner : NumericalError {
  using NumericalError::NumericalError;
};

struct SingularGram : NumericalError {
  using NumericalError::NumericalError;
};

struct NonFiniteObjective : NumericalError {
  using NumericalError::NumericalError;
};

struct CombinatorialOverflow : ConfigError {
  using ConfigError::ConfigError;
};

struct NoFeasibleSubarray : NumericalError {
  using NumericalError::NumericalError;
};

struct ZeroProduct : NumericalError {
  using NumericalError::NumericalError;
};

struct DivergedLoss : NumericalError {
  using NumericalError::NumericalError;
};

}  // namespace beamsel
