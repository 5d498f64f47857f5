#pragma once

// Test-only oracles shared by the unit and acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fmirl/nn/param_store.hpp"

namespace fmirl::test {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Central finite differences of `loss` (which must be a pure function of the
/// parameter values) against the analytic gradients already accumulated in
/// `params`. Relative error per element: |a - n| / max(|a|, |n|, floor).
inline GradCheck finite_difference_check(nn::ParamStore& params, const std::function<double()>& loss,
                                         double h = 1e-4, double floor = 1e-6) {
  GradCheck out;
  out.analytic = params.flat_grads();
  const std::size_t n = out.analytic.size();
  out.numeric.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    double& p = params.flat_value(k);
    const double saved = p;
    p = saved + h;
    const double up = loss();
    p = saved - h;
    const double down = loss();
    p = saved;
    out.numeric[k] = (up - down) / (2.0 * h);
    const double a = out.analytic[k], num = out.numeric[k];
    const double rel = std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor});
    if (rel > out.max_rel_error) {
      out.max_rel_error = rel;
      out.worst_index = k;
    }
  }
  return out;
}

}  // namespace fmirl::test
