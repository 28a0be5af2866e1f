#pragma once

#include <string>
#include <vector>

namespace normlab {

struct GradSuiteEntry {
  std::string op;
  double max_rel_err = 0.0;
  double tolerance = 0.0;
  bool pass = false;
};

// Finite-difference verification of every analytic gradient in the library.
// `module` selects a family: all, tensor (conv/linear/pool/relu/loss),
// normalizers (plain norms + affine), or switchable.  `corrupt_op` perturbs
// that op's analytic gradient so its check must fail, which exercises the
// checker itself.  Unknown module or corrupt_op names are rejected.
std::vector<GradSuiteEntry> run_gradcheck_suite(const std::string& module = "all",
                                                const std::string& corrupt_op = "");

std::string gradcheck_report(const std::vector<GradSuiteEntry>& entries);
bool gradcheck_all_pass(const std::vector<GradSuiteEntry>& entries);

}  // namespace normlab
