#pragma once

#include <stdexcept>

namespace mergest {

// Bad inputs: schema violations, invalid configuration, broken invariants.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Solver failures and degenerate numerical quantities.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mergest
