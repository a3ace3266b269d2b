#pragma once

#include <stdexcept>
#include <string>

namespace swct {

// Malformed or inconsistent user input (designs, panels, configs, flags).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// An estimator or fit could not be evaluated on otherwise valid input.
class EstimationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace swct
