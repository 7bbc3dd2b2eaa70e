#include "mrtlab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "mrtlab/common.hpp"

namespace mrtlab {

Var Tape::param(const std::string& name) {
  if (!params_) {
    throw ContractError("Tape: no ParamStore bound");
  }
  auto it = param_nodes_.find(name);
  if (it != param_nodes_.end()) {
    return it->second;
  }
  Var v = push((*params_)[name], true, nullptr);
  param_nodes_[name] = v;
  return v;
}

Var Tape::constant(Eigen::MatrixXd value) {
  return push(std::move(value), false, nullptr);
}

Var Tape::constant_scalar(double value) {
  Eigen::MatrixXd m(1, 1);
  m(0, 0) = value;
  return push(std::move(m), false, nullptr);
}

double Tape::scalar(Var v) const {
  const auto& m = nodes_[v].value;
  if (m.rows() != 1 || m.cols() != 1) {
    throw ContractError("Tape::scalar: node is not 1x1");
  }
  return m(0, 0);
}

Var Tape::push(Eigen::MatrixXd value, bool needs_grad, BackFn back) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return static_cast<Var>(nodes_.size() - 1);
}

Eigen::MatrixXd& Tape::grad(Var v) {
  Node& n = nodes_[v];
  if (n.grad.size() == 0) {
    n.grad = Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  }
  return n.grad;
}

void Tape::accumulate(Var v, const Eigen::MatrixXd& g) {
  if (!nodes_[v].needs_grad) {
    return;
  }
  grad(v) += g;
}

void Tape::backward(Var loss) {
  const Node& ln = nodes_[loss];
  if (ln.value.rows() != 1 || ln.value.cols() != 1) {
    throw ContractError("backward: loss node is not a scalar");
  }
  if (!std::isfinite(ln.value(0, 0))) {
    throw NumericFault("backward: loss value is not finite");
  }
  grad(loss).setConstant(1.0);
  for (Var v = loss; v >= 0; --v) {
    Node& n = nodes_[v];
    if (!n.needs_grad || n.grad.size() == 0 || !n.back) {
      continue;
    }
    n.back(*this, v);
  }
  ran_backward_ = true;
  // Surface NaNs with the offending block named; they otherwise propagate
  // silently into the optimizer. Name order keeps the report deterministic.
  std::vector<std::pair<std::string, Var>> sorted(param_nodes_.begin(),
                                                  param_nodes_.end());
  std::sort(sorted.begin(), sorted.end());
  for (const auto& [name, var] : sorted) {
    if (has_grad(var) && !nodes_[var].grad.allFinite()) {
      throw NumericFault("backward: non-finite gradient for block '" + name + "'");
    }
  }
}

GradBundle Tape::grads() const {
  if (!params_) {
    throw ContractError("Tape::grads: no ParamStore bound");
  }
  if (!ran_backward_) {
    throw ContractError("Tape::grads: backward() not run");
  }
  GradBundle out(*params_);
  for (const auto& [name, var] : param_nodes_) {
    if (nodes_[var].grad.size() != 0) {
      out[name] = nodes_[var].grad;
    }
  }
  return out;
}

void Tape::reset() {
  nodes_.clear();
  param_nodes_.clear();
  ran_backward_ = false;
}

namespace {

inline bool either_grad(const Tape& t, Var a, Var b) {
  return t.needs_grad(a) || t.needs_grad(b);
}

}  // namespace

Var add(Tape& t, Var a, Var b) {
  return t.push(t.value(a) + t.value(b), either_grad(t, a, b),
                [a, b](Tape& t, Var self) {
                  const auto& g = t.grad(self);
                  t.accumulate(a, g);
                  t.accumulate(b, g);
                });
}

Var sub(Tape& t, Var a, Var b) {
  return t.push(t.value(a) - t.value(b), either_grad(t, a, b),
                [a, b](Tape& t, Var self) {
                  const auto& g = t.grad(self);
                  t.accumulate(a, g);
                  t.accumulate(b, -g);
                });
}

Var mul(Tape& t, Var a, Var b) {
  return t.push(t.value(a).cwiseProduct(t.value(b)), either_grad(t, a, b),
                [a, b](Tape& t, Var self) {
                  const auto& g = t.grad(self);
                  t.accumulate(a, g.cwiseProduct(t.value(b)));
                  t.accumulate(b, g.cwiseProduct(t.value(a)));
                });
}

Var matmul(Tape& t, Var a, Var b) {
  return t.push(t.value(a) * t.value(b), either_grad(t, a, b),
                [a, b](Tape& t, Var self) {
                  const auto& g = t.grad(self);
                  t.accumulate(a, g * t.value(b).transpose());
                  t.accumulate(b, t.value(a).transpose() * g);
                });
}

Var scale(Tape& t, Var a, double k) {
  return t.push(t.value(a) * k, t.needs_grad(a), [a, k](Tape& t, Var self) {
    t.accumulate(a, t.grad(self) * k);
  });
}

Var add_scalar(Tape& t, Var a, double k) {
  return t.push(t.value(a).array() + k, t.needs_grad(a),
                [a](Tape& t, Var self) { t.accumulate(a, t.grad(self)); });
}

Var tanh_of(Tape& t, Var a) {
  Eigen::MatrixXd y = t.value(a).array().tanh();
  return t.push(std::move(y), t.needs_grad(a), [a](Tape& t, Var self) {
    const auto& y = t.value(self);
    t.accumulate(a, t.grad(self).cwiseProduct(
                        (1.0 - y.array().square()).matrix()));
  });
}

Var relu(Tape& t, Var a) {
  Eigen::MatrixXd y = t.value(a).cwiseMax(0.0);
  return t.push(std::move(y), t.needs_grad(a), [a](Tape& t, Var self) {
    Eigen::MatrixXd mask =
        (t.value(a).array() > 0.0).cast<double>().matrix();
    t.accumulate(a, t.grad(self).cwiseProduct(mask));
  });
}

Var square(Tape& t, Var a) {
  return t.push(t.value(a).array().square(), t.needs_grad(a),
                [a](Tape& t, Var self) {
                  t.accumulate(a, 2.0 * t.grad(self).cwiseProduct(t.value(a)));
                });
}

Var col(Tape& t, Var m, Eigen::Index c) {
  if (c < 0 || c >= t.value(m).cols()) {
    throw ContractError("col: index out of range");
  }
  return t.push(t.value(m).col(c), t.needs_grad(m), [m, c](Tape& t, Var self) {
    t.grad(m).col(c) += t.grad(self);
  });
}

Var row_range(Tape& t, Var m, Eigen::Index r0, Eigen::Index nrows) {
  return t.push(t.value(m).middleRows(r0, nrows), t.needs_grad(m),
                [m, r0, nrows](Tape& t, Var self) {
                  t.grad(m).middleRows(r0, nrows) += t.grad(self);
                });
}

Var transpose(Tape& t, Var a) {
  return t.push(t.value(a).transpose(), t.needs_grad(a),
                [a](Tape& t, Var self) {
                  t.accumulate(a, t.grad(self).transpose());
                });
}

Var hstack(Tape& t, std::span<const Var> cols) {
  if (cols.empty()) {
    throw ContractError("hstack: empty input");
  }
  const Eigen::Index rows = t.value(cols[0]).rows();
  Eigen::MatrixXd out(rows, static_cast<Eigen::Index>(cols.size()));
  bool any_grad = false;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    out.col(static_cast<Eigen::Index>(i)) = t.value(cols[i]);
    any_grad = any_grad || t.needs_grad(cols[i]);
  }
  std::vector<Var> saved(cols.begin(), cols.end());
  return t.push(std::move(out), any_grad,
                [saved = std::move(saved)](Tape& t, Var self) {
                  const auto& g = t.grad(self);
                  for (std::size_t i = 0; i < saved.size(); ++i) {
                    t.accumulate(saved[i], g.col(static_cast<Eigen::Index>(i)));
                  }
                });
}

Var vstack(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) {
    throw ContractError("vstack: empty input");
  }
  Eigen::Index rows = 0;
  const Eigen::Index colc = t.value(parts[0]).cols();
  bool any_grad = false;
  for (Var p : parts) {
    rows += t.value(p).rows();
    any_grad = any_grad || t.needs_grad(p);
  }
  Eigen::MatrixXd out(rows, colc);
  Eigen::Index at = 0;
  for (Var p : parts) {
    out.middleRows(at, t.value(p).rows()) = t.value(p);
    at += t.value(p).rows();
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return t.push(std::move(out), any_grad,
                [saved = std::move(saved)](Tape& t, Var self) {
                  const auto& g = t.grad(self);
                  Eigen::Index at = 0;
                  for (Var p : saved) {
                    const Eigen::Index n = t.value(p).rows();
                    t.accumulate(p, g.middleRows(at, n));
                    at += n;
                  }
                });
}

Var sum(Tape& t, Var a) {
  Eigen::MatrixXd s(1, 1);
  s(0, 0) = t.value(a).sum();
  return t.push(std::move(s), t.needs_grad(a), [a](Tape& t, Var self) {
    const double g = t.grad(self)(0, 0);
    t.grad(a).array() += g;
  });
}

Var mean(Tape& t, Var a) {
  const double n = static_cast<double>(t.value(a).size());
  Eigen::MatrixXd s(1, 1);
  s(0, 0) = t.value(a).sum() / n;
  return t.push(std::move(s), t.needs_grad(a), [a, n](Tape& t, Var self) {
    const double g = t.grad(self)(0, 0) / n;
    t.grad(a).array() += g;
  });
}

Var pick(Tape& t, Var v, Eigen::Index i) {
  const auto& x = t.value(v);
  if (x.cols() != 1) {
    throw ContractError("pick: expects a column vector");
  }
  if (i < 0 || i >= x.rows()) {
    throw ContractError("pick: index out of range");
  }
  Eigen::MatrixXd s(1, 1);
  s(0, 0) = x(i, 0);
  return t.push(std::move(s), t.needs_grad(v), [v, i](Tape& t, Var self) {
    t.grad(v)(i, 0) += t.grad(self)(0, 0);
  });
}

Var softmax_col(Tape& t, Var v) {
  const auto& x = t.value(v);
  if (x.cols() != 1) {
    throw ContractError("softmax_col: expects a column vector");
  }
  // Max-subtraction keeps exp() in range at low temperatures.
  const double m = x.maxCoeff();
  Eigen::ArrayXd e = (x.col(0).array() - m).exp();
  Eigen::MatrixXd p = (e / e.sum()).matrix();
  return t.push(std::move(p), t.needs_grad(v), [v](Tape& t, Var self) {
    const auto& p = t.value(self);
    const auto& g = t.grad(self);
    const double pg = (p.array() * g.array()).sum();
    t.accumulate(v, (p.array() * (g.array() - pg)).matrix());
  });
}

Var log_softmax_col(Tape& t, Var v) {
  const auto& x = t.value(v);
  if (x.cols() != 1) {
    throw ContractError("log_softmax_col: expects a column vector");
  }
  const double m = x.maxCoeff();
  Eigen::ArrayXd shifted = x.col(0).array() - m;
  const double lse = std::log(shifted.exp().sum());
  Eigen::MatrixXd y = (shifted - lse).matrix();
  return t.push(std::move(y), t.needs_grad(v), [v](Tape& t, Var self) {
    const auto& y = t.value(self);
    const auto& g = t.grad(self);
    const double gsum = g.sum();
    t.accumulate(v, (g.array() - y.array().exp() * gsum).matrix());
  });
}

Var dot(Tape& t, Var a, Var b) {
  const auto& x = t.value(a);
  const auto& y = t.value(b);
  if (x.cols() != 1 || y.cols() != 1 || x.rows() != y.rows()) {
    throw ContractError("dot: expects matching column vectors");
  }
  Eigen::MatrixXd s(1, 1);
  s(0, 0) = x.col(0).dot(y.col(0));
  return t.push(std::move(s), either_grad(t, a, b), [a, b](Tape& t, Var self) {
    const double g = t.grad(self)(0, 0);
    t.accumulate(a, g * t.value(b));
    t.accumulate(b, g * t.value(a));
  });
}

Var weighted_sum(Tape& t, std::span<const Var> xs, std::span<const double> ws) {
  if (xs.size() != ws.size() || xs.empty()) {
    throw ContractError("weighted_sum: mismatched or empty inputs");
  }
  double total = 0.0;
  bool any_grad = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    total += ws[i] * t.scalar(xs[i]);
    any_grad = any_grad || t.needs_grad(xs[i]);
  }
  Eigen::MatrixXd s(1, 1);
  s(0, 0) = total;
  std::vector<Var> saved(xs.begin(), xs.end());
  std::vector<double> wsaved(ws.begin(), ws.end());
  return t.push(std::move(s), any_grad,
                [saved = std::move(saved), wsaved = std::move(wsaved)](
                    Tape& t, Var self) {
                  const double g = t.grad(self)(0, 0);
                  Eigen::MatrixXd gi(1, 1);
                  for (std::size_t i = 0; i < saved.size(); ++i) {
                    gi(0, 0) = g * wsaved[i];
                    t.accumulate(saved[i], gi);
                  }
                });
}

Var stack_scalars(Tape& t, std::span<const Var> xs) {
  if (xs.empty()) {
    throw ContractError("stack_scalars: empty input");
  }
  Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), 1);
  bool any_grad = false;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out(static_cast<Eigen::Index>(i), 0) = t.scalar(xs[i]);
    any_grad = any_grad || t.needs_grad(xs[i]);
  }
  std::vector<Var> saved(xs.begin(), xs.end());
  return t.push(std::move(out), any_grad,
                [saved = std::move(saved)](Tape& t, Var self) {
                  const auto& g = t.grad(self);
                  Eigen::MatrixXd gi(1, 1);
                  for (std::size_t i = 0; i < saved.size(); ++i) {
                    gi(0, 0) = g(static_cast<Eigen::Index>(i), 0);
                    t.accumulate(saved[i], gi);
                  }
                });
}

}  // namespace mrtlab
