#pragma once

#include <stdexcept>
#include <string>

namespace ubu {

/// Bad input: wrong shape, out-of-range parameter, malformed file.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A computation ran but produced an unusable result (non-finite values,
/// non-PSD covariance, infeasible bound).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ubu
