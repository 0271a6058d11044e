#pragma once

#include <stdexcept>
#include <string>

namespace eap {

/// Invalid user input: malformed config, shape mismatch, bad manifest.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite values or a diverging optimization.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The hardware profile cannot hold the minimal working set of a layer.
class InfeasibleProfile : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace eap
