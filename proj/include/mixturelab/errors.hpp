#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace mixturelab {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad input: dimension mismatch, invalid probabilities, malformed files.
class ArgumentError : public Error {
 public:
  using Error::Error;
};

// Malformed input files (CSV parse failures carry the line number).
class InputError : public ArgumentError {
 public:
  using ArgumentError::ArgumentError;
};

// Singular or ill-conditioned matrices, quadrature that does not converge.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A mixture component lost (almost) all of its responsibility mass.
class DegenerateComponentError : public NumericError {
 public:
  DegenerateComponentError(int component, double mass, int iteration = -1, bool singular = false)
      : NumericError(describe(component, mass, iteration, singular)),
        component_(component),
        mass_(mass),
        iteration_(iteration),
        singular_(singular) {}

  int component() const noexcept { return component_; }
  double mass() const noexcept { return mass_; }
  int iteration() const noexcept { return iteration_; }
  bool singular() const noexcept { return singular_; }

  DegenerateComponentError at_iteration(int iteration) const {
    return DegenerateComponentError(component_, mass_, iteration, singular_);
  }

 private:
  static std::string describe(int component, double mass, int iteration, bool singular) {
    std::string msg = "degenerate component " + std::to_string(component + 1) + " (" +
                      (singular ? "covariance collapsed, " : "") + "responsibility mass " +
                      std::to_string(mass) + ")";
    if (iteration >= 0) msg += " at iteration " + std::to_string(iteration);
    return msg;
  }
  int component_;
  double mass_;
  int iteration_;
  bool singular_;
};

// Every start of a multi-start search failed.
class FittingFailedError : public Error {
 public:
  explicit FittingFailedError(std::vector<std::string> reasons)
      : Error(join(reasons)), reasons_(std::move(reasons)) {}

  const std::vector<std::string>& reasons() const noexcept { return reasons_; }

 private:
  static std::string join(const std::vector<std::string>& reasons) {
    std::string msg = "fitting failed for every start";
    for (std::size_t i = 0; i < reasons.size(); ++i)
      msg += "\n  start " + std::to_string(i) + ": " + reasons[i];
    return msg;
  }

  std::vector<std::string> reasons_;
};

// Method-of-moments complier share is not positive.
class MonotonicityViolation : public Error {
 public:
  using Error::Error;
};

}  // namespace mixturelab
