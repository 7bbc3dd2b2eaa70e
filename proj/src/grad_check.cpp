#include "mrtlab/grad_check.hpp"

#include <cmath>

#include "mrtlab/common.hpp"

namespace mrtlab {

GradBundle finite_diff_grad(const LossFn& loss_fn, const ParamStore& params,
                            double step) {
  if (!(step > 0.0)) {
    throw ContractError("finite_diff_grad: step must be > 0");
  }
  const double base = loss_fn(params);
  if (loss_fn(params) != base) {
    throw ValidationError(
        "finite_diff_grad: loss_fn is not deterministic, oracle invalid");
  }

  // A mutable copy is probed elementwise; the caller's store is untouched.
  ParamStore probe;
  for (const auto& [name, block] : params.blocks()) {
    probe.add(name, block.value, block.rank);
  }

  GradBundle out(params);
  for (const auto& [name, block] : params.blocks()) {
    Eigen::MatrixXd& b = probe.mutable_block(name);
    Eigen::MatrixXd& g = out[name];
    for (Eigen::Index c = 0; c < b.cols(); ++c) {
      for (Eigen::Index r = 0; r < b.rows(); ++r) {
        const double saved = b(r, c);
        b(r, c) = saved + step;
        const double up = loss_fn(probe);
        b(r, c) = saved - step;
        const double down = loss_fn(probe);
        b(r, c) = saved;
        g(r, c) = (up - down) / (2.0 * step);
      }
    }
  }
  return out;
}

CheckReport grad_check(const LossFn& loss_fn, const GradBundle& analytic,
                       const ParamStore& params, double rel_tol,
                       double fd_step) {
  if (!(rel_tol > 0.0 && rel_tol < 1.0)) {
    throw ContractError("grad_check: rel_tol must be in (0, 1)");
  }
  GradBundle numeric = finite_diff_grad(loss_fn, params, fd_step);

  CheckReport report;
  for (const auto& [name, block] : params.blocks()) {
    const Eigen::MatrixXd& ga = analytic.at(name);
    const Eigen::MatrixXd& gn = numeric.at(name);
    for (Eigen::Index c = 0; c < ga.cols(); ++c) {
      for (Eigen::Index r = 0; r < ga.rows(); ++r) {
        const double a = ga(r, c);
        const double n = gn(r, c);
        const double rel =
            std::abs(a - n) / (std::abs(a) + std::abs(n) + 1e-12);
        if (rel > report.max_rel_error) {
          report.max_rel_error = rel;
          report.worst_block = name;
          report.worst_row = r;
          report.worst_col = c;
        }
      }
    }
  }
  report.pass = report.max_rel_error <= rel_tol;
  return report;
}

}  // namespace mrtlab
