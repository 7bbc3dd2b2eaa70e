#include "mrtlab/param_store.hpp"

#include "mrtlab/common.hpp"

namespace mrtlab {

void ParamStore::add(const std::string& name, Eigen::MatrixXd value, int rank) {
  if (blocks_.count(name)) {
    throw ValidationError("ParamStore: duplicate block name '" + name + "'");
  }
  if (rank != 1 && rank != 2) {
    throw ValidationError("ParamStore: rank must be 1 or 2 for block '" + name + "'");
  }
  if (rank == 1 && value.cols() != 1) {
    throw ValidationError("ParamStore: rank-1 block '" + name + "' must be a column vector");
  }
  if (!value.allFinite()) {
    throw NumericFault("ParamStore: non-finite values in block '" + name + "'");
  }
  blocks_[name] = ParamBlock{std::move(value), rank};
}

void ParamStore::add_vector(const std::string& name, Eigen::VectorXd value) {
  add(name, std::move(value), 1);
}

const Eigen::MatrixXd& ParamStore::operator[](const std::string& name) const {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) {
    throw ContractError("ParamStore: unknown block '" + name + "'");
  }
  return it->second.value;
}

Eigen::MatrixXd& ParamStore::mutable_block(const std::string& name) {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) {
    throw ContractError("ParamStore: unknown block '" + name + "'");
  }
  return it->second.value;
}

int ParamStore::rank(const std::string& name) const {
  auto it = blocks_.find(name);
  if (it == blocks_.end()) {
    throw ContractError("ParamStore: unknown block '" + name + "'");
  }
  return it->second.rank;
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(blocks_.size());
  for (const auto& [name, block] : blocks_) {
    out.push_back(name);
  }
  return out;
}

std::size_t ParamStore::element_count() const {
  std::size_t n = 0;
  for (const auto& [name, block] : blocks_) {
    n += static_cast<std::size_t>(block.value.size());
  }
  return n;
}

void ParamStore::check_finite() const {
  for (const auto& [name, block] : blocks_) {
    if (!block.value.allFinite()) {
      throw NumericFault("ParamStore: non-finite values in block '" + name + "'");
    }
  }
}

GradBundle::GradBundle(const ParamStore& params) {
  for (const auto& [name, block] : params.blocks()) {
    grads_[name] = Eigen::MatrixXd::Zero(block.value.rows(), block.value.cols());
  }
}

Eigen::MatrixXd& GradBundle::operator[](const std::string& name) {
  return grads_[name];
}

const Eigen::MatrixXd& GradBundle::at(const std::string& name) const {
  auto it = grads_.find(name);
  if (it == grads_.end()) {
    throw ContractError("GradBundle: unknown block '" + name + "'");
  }
  return it->second;
}

void GradBundle::add(const GradBundle& other) {
  for (const auto& [name, grad] : other.grads_) {
    auto it = grads_.find(name);
    if (it == grads_.end()) {
      grads_[name] = grad;
    } else {
      it->second += grad;
    }
  }
}

void GradBundle::scale(double factor) {
  for (auto& [name, grad] : grads_) {
    grad *= factor;
  }
}

void GradBundle::check_finite() const {
  for (const auto& [name, grad] : grads_) {
    if (!grad.allFinite()) {
      throw NumericFault("GradBundle: non-finite gradient in block '" + name + "'");
    }
  }
}

}  // namespace mrtlab
