#pragma once

#include "mrtlab/param_store.hpp"

namespace mrtlab {

// Adam with the inverse-sqrt warmup schedule. The factor
// sqrt(warmup) * min(t^-1/2, t * warmup^-3/2) peaks at 1 when t == warmup,
// so lr is the peak learning rate. schedule=false gives constant-lr Adam.
struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int warmup = 200;
  bool schedule = true;

  void validate() const;  // throws ValidationError
};

class Adam {
 public:
  Adam(const ParamStore& shapes, AdamConfig cfg);

  // One update in-place; increments the step counter.
  void step(ParamStore& params, const GradBundle& grads);

  long steps_taken() const { return t_; }
  double lr_at(long t) const;  // schedule value for step t >= 1

 private:
  AdamConfig cfg_;
  long t_ = 0;
  GradBundle m_;
  GradBundle v_;
};

}  // namespace mrtlab
