#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace csflock {

/// Invalid or inconsistent configuration (bad parameters, mismatched grids).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of an operation.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Index or lookup beyond the valid range.
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Operation called on inputs that violate its documented precondition.
class PreconditionError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Non-finite particle state produced by a time step.
class BlowUpError : public std::runtime_error {
 public:
  BlowUpError(std::size_t step, double time)
      : std::runtime_error("non-finite state at step " + std::to_string(step) +
                           " (t = " + std::to_string(time) + ")"),
        step_(step),
        time_(time) {}

  std::size_t step() const noexcept { return step_; }
  double time() const noexcept { return time_; }

 private:
  std::size_t step_;
  double time_;
};

}  // namespace csflock
