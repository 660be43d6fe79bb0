#pragma once

#include <stdexcept>
#include <string>

namespace tempgnn {

// Bad input, bad configuration, bad file. CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Non-finite values, degenerate norms, log of non-positive numbers.
// CLI maps this to exit code 3.
class NumericalError : public std::runtime_error {
 public:
  explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tempgnn
