#pragma once

#include <stdexcept>
#include <string>

namespace gbsde {

// Bad inputs: malformed models, drivers, processes, configs. Maps to CLI exit 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

// A branch pair with equal martingale increments cannot carry a representation.
class RepresentationError : public ValidationError {
 public:
  explicit RepresentationError(const std::string& what) : ValidationError(what) {}
};

// Enumeration request beyond the hard guard.
class EnumerationLimitError : public ValidationError {
 public:
  explicit EnumerationLimitError(const std::string& what) : ValidationError(what) {}
};

// Game hypothesis (lower process above barrier on the admissible set) violated.
class HypothesisError : public ValidationError {
 public:
  explicit HypothesisError(const std::string& what) : ValidationError(what) {}
};

// The implicit scheme cannot run: node contraction gate failed for a generic
// generator. Maps to CLI exit 3.
class SchemeInfeasibleError : public std::runtime_error {
 public:
  SchemeInfeasibleError(const std::string& what, int step, int index, double l_times_da)
      : std::runtime_error(what), step(step), index(index), l_times_da(l_times_da) {}
  int step;
  int index;
  double l_times_da;
};

// Iterative solver ran out of iterations. Maps to CLI exit 3.
class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, double last_ratio)
      : std::runtime_error(what), last_ratio(last_ratio) {}
  double last_ratio;
};

}  // namespace gbsde
