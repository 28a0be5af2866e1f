#include "normlab/gradcheck.hpp"

#include <cmath>

#include "normlab/errors.hpp"

namespace normlab {

GradCheckReport finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                  const std::vector<double>& x,
                                  const std::vector<double>& analytic_grad, double tolerance,
                                  const std::vector<bool>& exclude_mask, double step) {
  if (analytic_grad.size() != x.size()) {
    throw UsageError("finite_diff_check: gradient length " + std::to_string(analytic_grad.size()) +
                     " != input length " + std::to_string(x.size()));
  }
  if (!exclude_mask.empty() && exclude_mask.size() != x.size()) {
    throw UsageError("finite_diff_check: mask length " + std::to_string(exclude_mask.size()) +
                     " != input length " + std::to_string(x.size()));
  }

  GradCheckReport report;
  std::vector<double> probe = x;
  for (size_t i = 0; i < x.size(); ++i) {
    if (!exclude_mask.empty() && exclude_mask[i]) continue;
    probe[i] = x[i] + step;
    const double fp = f(probe);
    probe[i] = x[i] - step;
    const double fm = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("finite_diff_check: non-finite function value at index " +
                         std::to_string(i));
    }
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic_grad[i]), 1.0});
    const double rel = std::abs(numeric - analytic_grad[i]) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
    }
    ++report.checked;
  }
  report.pass = report.max_rel_err <= tolerance;
  return report;
}

}  // namespace normlab
