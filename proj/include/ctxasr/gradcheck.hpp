#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "ctxasr/tensor.hpp"

namespace ctxasr {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Central-difference check of d f(x) / dx against the tape. f must be a pure
// scalar-valued function of x (re-runnable); x must be a requires_grad leaf.
// Relative error uses max(|analytic|, |numeric|, 1e-8) as denominator.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor& x,
                                  double eps = 1e-5) {
  Tensor loss = f(x);
  if (loss.size() != 1) throw NumericError("grad_check: f must return a scalar");
  backward(loss);
  const std::vector<double> analytic = x.grad();

  GradCheckReport report;
  auto& data = x.mutable_data();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double orig = data[i];
    data[i] = orig + eps;
    const double fp = f(x).item();
    data[i] = orig - eps;
    const double fm = f(x).item();
    data[i] = orig;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), 1e-8});
    const double rel = std::fabs(analytic[i] - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.analytic_at_worst = analytic[i];
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

}  // namespace ctxasr
