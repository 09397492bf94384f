#pragma once

#include <stdexcept>
#include <string>

namespace nde {

// Bad arguments, malformed inputs, config problems. The CLI maps these to exit code 1.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Non-finite values, solver failures, step-size underflow. The CLI maps these to exit code 2.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace nde
