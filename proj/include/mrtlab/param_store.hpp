#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace mrtlab {

// A named dense block of f64 parameters. Rank 1 blocks are stored as
// column vectors; rank 2 blocks as rows x cols matrices. Shapes are fixed
// at creation.
struct ParamBlock {
  Eigen::MatrixXd value;
  int rank = 2;  // 1 or 2
};

// Named parameter blocks; houses model and learned-metric weights.
// Block names are unique and iteration order is the name order, which keeps
// serialization and gradient reductions deterministic.
class ParamStore {
 public:
  ParamStore() = default;

  // Adds a block. Throws ValidationError on duplicate name or non-finite
  // initial values.
  void add(const std::string& name, Eigen::MatrixXd value, int rank = 2);
  void add_vector(const std::string& name, Eigen::VectorXd value);

  bool has(const std::string& name) const { return blocks_.count(name) > 0; }
  const Eigen::MatrixXd& operator[](const std::string& name) const;
  Eigen::MatrixXd& mutable_block(const std::string& name);
  int rank(const std::string& name) const;

  std::vector<std::string> names() const;
  std::size_t block_count() const { return blocks_.size(); }
  std::size_t element_count() const;

  // Throws NumericFault naming the first non-finite block.
  void check_finite() const;

  const std::map<std::string, ParamBlock>& blocks() const { return blocks_; }

 private:
  std::map<std::string, ParamBlock> blocks_;
};

// Per-block gradients, shape-matched to a ParamStore. Blocks untouched by a
// backward pass stay zero.
class GradBundle {
 public:
  GradBundle() = default;
  explicit GradBundle(const ParamStore& params);  // zero-filled

  Eigen::MatrixXd& operator[](const std::string& name);
  const Eigen::MatrixXd& at(const std::string& name) const;
  bool has(const std::string& name) const { return grads_.count(name) > 0; }

  void add(const GradBundle& other);  // this += other
  void scale(double factor);
  void check_finite() const;  // NumericFault naming first offending block

  const std::map<std::string, Eigen::MatrixXd>& blocks() const { return grads_; }
  std::map<std::string, Eigen::MatrixXd>& blocks() { return grads_; }

 private:
  std::map<std::string, Eigen::MatrixXd> grads_;
};

}  // namespace mrtlab
