#include "dasmil/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dasmil/errors.hpp"

namespace dasmil {

namespace {

double evaluate(const ForwardClosure& forward) {
  Tape tape;
  return forward(tape).value().item();
}

}  // namespace

GradCheckResult grad_check(const ForwardClosure& forward, const ParameterList& params, double h) {
  if (!(h > 0.0)) throw ConfigError("grad_check: step must be positive");

  std::vector<Tensor> analytic;
  {
    Tape tape;
    Var loss = forward(tape);
    for (Parameter* p : params) tape.param(*p);
    tape.backward(loss);
    for (const Parameter* p : params) analytic.push_back(p->grad);
  }

  const double first = evaluate(forward);
  const double second = evaluate(forward);
  if (first != second)
    throw DeterminismError("grad_check: forward closure is not deterministic (" + std::to_string(first) +
                           " vs " + std::to_string(second) + ")");

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    auto w = p.value.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double plus = evaluate(forward);
      w[i] = saved - h;
      const double minus = evaluate(forward);
      w[i] = saved;

      const double numeric = (plus - minus) / (2.0 * h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      const double rel = std::abs(a - numeric) / denom;
      ++result.coordinates;
      if (rel > result.max_relative_error || result.worst_parameter.empty()) {
        result.max_relative_error = std::max(rel, result.max_relative_error);
        result.worst_parameter = p.name;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace dasmil
