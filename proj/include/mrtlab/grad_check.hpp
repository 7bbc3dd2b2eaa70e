#pragma once

#include <functional>
#include <string>

#include "mrtlab/param_store.hpp"

namespace mrtlab {

// Scalar loss as a plain function of the parameters; must be deterministic.
using LossFn = std::function<double(const ParamStore&)>;

struct CheckReport {
  double max_rel_error = 0.0;
  std::string worst_block;
  Eigen::Index worst_row = 0;
  Eigen::Index worst_col = 0;
  bool pass = false;
};

// Central-difference gradient estimate, one (f(x+h) - f(x-h)) / 2h per
// element. Re-evaluates the base point twice and throws ValidationError if
// loss_fn is not deterministic ("oracle-invalid").
GradBundle finite_diff_grad(const LossFn& loss_fn, const ParamStore& params,
                            double step);

// Compares analytic gradients against the finite-difference oracle with
// max over elements of |g_a - g_n| / (|g_a| + |g_n| + 1e-12).
CheckReport grad_check(const LossFn& loss_fn, const GradBundle& analytic,
                       const ParamStore& params, double rel_tol,
                       double fd_step = 1e-5);

}  // namespace mrtlab
