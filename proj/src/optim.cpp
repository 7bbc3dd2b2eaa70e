#include "mrtlab/optim.hpp"

#include <cmath>

#include "mrtlab/common.hpp"

namespace mrtlab {

void AdamConfig::validate() const {
  if (!(lr > 0.0)) throw ValidationError("Adam: lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) {
    throw ValidationError("Adam: betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ValidationError("Adam: eps must be positive");
  if (schedule && warmup < 1) throw ValidationError("Adam: warmup must be >= 1");
}

Adam::Adam(const ParamStore& shapes, AdamConfig cfg)
    : cfg_(cfg), m_(shapes), v_(shapes) {
  cfg_.validate();
}

double Adam::lr_at(long t) const {
  if (!cfg_.schedule) return cfg_.lr;
  const double w = static_cast<double>(cfg_.warmup);
  const double td = static_cast<double>(t);
  return cfg_.lr * std::sqrt(w) *
         std::min(1.0 / std::sqrt(td), td / (w * std::sqrt(w)));
}

void Adam::step(ParamStore& params, const GradBundle& grads) {
  ++t_;
  const double lr = lr_at(t_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& [name, m] : m_.blocks()) {
    const Eigen::MatrixXd& g = grads.at(name);
    Eigen::MatrixXd& v = v_[name];
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * g;
    v.array() = cfg_.beta2 * v.array() + (1.0 - cfg_.beta2) * g.array().square();
    params.mutable_block(name).array() -=
        lr * (m.array() / bc1) / ((v.array() / bc2).sqrt() + cfg_.eps);
  }
}

}  // namespace mrtlab
