#pragma once

#include <functional>
#include <string>

#include "dasmil/autodiff.hpp"

namespace dasmil {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t coordinates = 0;
};

/// Builds a scalar on the given tape from the current parameter values.
using ForwardClosure = std::function<Var(Tape&)>;

/// Compares reverse-mode gradients against central differences
/// (f(w+h) - f(w-h)) / 2h for every coordinate of every parameter. The
/// relative error of a coordinate is |a - n| / max(|a|, |n|, 1e-6).
///
/// Throws DeterminismError if two unperturbed evaluations disagree.
GradCheckResult grad_check(const ForwardClosure& forward, const ParameterList& params, double h = 1e-5);

}  // namespace dasmil
