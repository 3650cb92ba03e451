#pragma once

#include <stdexcept>
#include <string>

namespace ruleforge {

// Bad input: malformed file, invariant violation, unknown name. CLI exit 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure during training (non-finite loss or gradient). CLI exit 2.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace ruleforge
