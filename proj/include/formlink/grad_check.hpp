#pragma once

#include <cmath>
#include <functional>

#include "formlink/nd_array.hpp"

namespace formlink {

struct GradCheckResult {
  double max_rel_err = 0.0;
  int n_checked = 0;
  int n_excluded = 0;
};

/// Compares an analytic gradient with central finite differences, element by
/// element. `eval` must recompute the scalar output from the current contents
/// of `x`. Points where one-sided differences disagree (a kink of the
/// function, e.g. relu at zero) are reported as excluded rather than failed.
inline GradCheckResult grad_check(Tensor<double>& x, const std::function<double()>& eval,
                                  const Tensor<double>& analytic, double eps = 1e-5,
                                  double kink_tol = 0.05) {
  GradCheckResult res;
  const double f0 = eval();
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double saved = x.data[i];
    x.data[i] = saved + eps;
    const double fp = eval();
    x.data[i] = saved - eps;
    const double fm = eval();
    x.data[i] = saved;

    const double central = (fp - fm) / (2.0 * eps);
    const double fwd = (fp - f0) / eps;
    const double bwd = (f0 - fm) / eps;
    if (std::abs(fwd - bwd) > kink_tol * std::max(1.0, std::abs(central))) {
      ++res.n_excluded;
      continue;
    }
    const double a = analytic.data[i];
    const double denom = std::max(std::abs(a), std::abs(central));
    ++res.n_checked;
    if (denom < 1e-8) continue;
    const double rel = std::abs(a - central) / std::max(denom, 1e-6);
    res.max_rel_err = std::max(res.max_rel_err, rel);
  }
  return res;
}

}  // namespace formlink
