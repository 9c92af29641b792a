#pragma once

#include <stdexcept>
#include <string>

namespace gcspatial {

/// Malformed or inconsistent user input (files, configs, arguments).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// An iterative procedure did not reach its tolerance.
class ConvergenceError : public std::runtime_error {
 public:
  ConvergenceError(const std::string& what, double last_gradient_norm = 0.0)
      : std::runtime_error(what), gradient_norm_(last_gradient_norm) {}

  double gradient_norm() const noexcept { return gradient_norm_; }

 private:
  double gradient_norm_;
};

}  // namespace gcspatial
