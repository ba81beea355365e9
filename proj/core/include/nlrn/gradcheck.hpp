#pragma once

#include <functional>
#include <string>
#include <vector>

#include "nlrn/tensor.hpp"

namespace nlrn {

inline constexpr double kGradCheckTolerance = 1e-4;
inline constexpr double kGradCheckStep = 1e-5;

struct GradCheckResult {
  std::string name;
  double max_rel_error = 0;
  bool pass = false;
};

/// Central finite differences of `objective` against `analytic`, perturbing
/// every entry of `param` in place (restored afterwards). The error is
/// max|analytic - fd| relative to the largest finite-difference magnitude.
double fd_max_rel_error(DenseTensor<double>& param, const DenseTensor<double>& analytic,
                        const std::function<double()>& objective, double h = kGradCheckStep);

/// 64-bit finite-difference suites over the registered differentiable
/// operations. `module` is one of all | diff_ops | nonlocal | nlrn.
/// `corrupt` injects a deliberate error into one backward result (negative
/// control for the harness).
std::vector<GradCheckResult> run_gradcheck(const std::string& module, bool corrupt = false);

/// Names in registry order for the requested module selector.
std::vector<std::string> gradcheck_registry(const std::string& module);

}  // namespace nlrn
