#pragma once

#include <cstddef>
#include <functional>
#include <vector>

namespace normlab {

struct GradCheckReport {
  double max_rel_err = 0.0;
  size_t worst_index = 0;
  size_t checked = 0;
  bool pass = false;
};

// Central-difference check of an analytic gradient against a scalar function
// f(x).  Entries where exclude_mask is true are skipped (non-differentiable
// points, e.g. near a rectifier kink).  Relative error uses a unit floor in
// the denominator so tiny gradients are compared absolutely.
GradCheckReport finite_diff_check(const std::function<double(const std::vector<double>&)>& f,
                                  const std::vector<double>& x,
                                  const std::vector<double>& analytic_grad, double tolerance,
                                  const std::vector<bool>& exclude_mask = {}, double step = 1e-5);

}  // namespace normlab
