#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mrtlab/param_store.hpp"

namespace mrtlab {

// Reverse-mode autodiff over dense f64 matrices/vectors.
//
// A Tape owns the computation graph of one forward evaluation. Nodes are
// created in topological order by the free functions below, so backward() is
// a single reverse sweep. Parameter leaves are bound by name to a ParamStore;
// after backward() the per-block gradients are exported as a GradBundle
// (zero for blocks the loss never touched).
//
// Tapes are single-threaded; independent evaluations use independent tapes.
class Tape {
 public:
  using Var = std::int32_t;

  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}

  // Leaf bound to a parameter block; repeated calls for the same name return
  // the same node so gradient contributions accumulate.
  Var param(const std::string& name);

  // Constant leaf (no gradient flows into it).
  Var constant(Eigen::MatrixXd value);
  Var constant_scalar(double value);

  const Eigen::MatrixXd& value(Var v) const { return nodes_[v].value; }
  double scalar(Var v) const;

  // Reverse sweep from a scalar loss node. Throws ContractError if the node
  // is not 1x1 and NumericFault (naming the block) if a parameter gradient
  // comes out non-finite.
  void backward(Var loss);

  // Gradients for every block of the bound store; requires backward() first.
  GradBundle grads() const;

  // Reuse the arena for a fresh evaluation.
  void reset();

  std::size_t size() const { return nodes_.size(); }

  // --- internal, used by the op free functions ---
  using BackFn = std::function<void(Tape&, Var)>;
  Var push(Eigen::MatrixXd value, bool needs_grad, BackFn back);
  bool needs_grad(Var v) const { return nodes_[v].needs_grad; }
  Eigen::MatrixXd& grad(Var v);
  bool has_grad(Var v) const { return nodes_[v].grad.size() != 0; }
  void accumulate(Var v, const Eigen::MatrixXd& g);

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;  // empty until touched by backward
    BackFn back;           // null for leaves
    bool needs_grad = false;
  };

  const ParamStore* params_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, Var> param_nodes_;
  bool ran_backward_ = false;
};

using Var = Tape::Var;

// ----- graph-building free functions -----
// All of them produce a new node whose value is computed eagerly.

Var add(Tape& t, Var a, Var b);                 // same shape
Var sub(Tape& t, Var a, Var b);
Var mul(Tape& t, Var a, Var b);                 // elementwise
Var matmul(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double k);
Var add_scalar(Tape& t, Var a, double k);
Var tanh_of(Tape& t, Var a);
Var relu(Tape& t, Var a);
Var square(Tape& t, Var a);
Var col(Tape& t, Var m, Eigen::Index c);        // column slice (embedding lookup)
Var row_range(Tape& t, Var m, Eigen::Index r0, Eigen::Index nrows);
Var transpose(Tape& t, Var a);
Var hstack(Tape& t, std::span<const Var> cols);
Var vstack(Tape& t, std::span<const Var> parts);
Var sum(Tape& t, Var a);                        // scalar
Var mean(Tape& t, Var a);                       // scalar
Var pick(Tape& t, Var v, Eigen::Index i);       // scalar element of a column vector
Var softmax_col(Tape& t, Var v);                // stable, column vector
Var log_softmax_col(Tape& t, Var v);            // stable, column vector
Var dot(Tape& t, Var a, Var b);                 // scalar, column vectors

// Scalar-weighted sum of scalar nodes: sum_i w_i * x_i.
Var weighted_sum(Tape& t, std::span<const Var> xs, std::span<const double> ws);

// Column vector [x_0, ..., x_{n-1}] from scalar nodes.
Var stack_scalars(Tape& t, std::span<const Var> xs);

}  // namespace mrtlab
