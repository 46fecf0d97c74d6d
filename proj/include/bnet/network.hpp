#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace bnet {

struct Dense {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;

  Dense() = default;
  Dense(int in, int out) : W(Eigen::MatrixXd::Zero(out, in)), b(Eigen::VectorXd::Zero(out)) {}
  int in() const { return static_cast<int>(W.cols()); }
  int out() const { return static_cast<int>(W.rows()); }
};

struct HeadSpec {
  /// Trunk depth the head reads from: 0 = input, k = output of hidden layer k.
  int tap = 0;
  int outputs = 0;
  /// Multiplies the Glorot range at init; 0 gives zero weights.
  double init_scale = 1.0;
};

/// tanh trunk with linear heads branching at arbitrary depths.
class Mlp {
 public:
  struct Cache {
    std::vector<Eigen::VectorXd> acts;  // acts[0] = input, acts[k] = tanh output of layer k
    std::vector<Eigen::VectorXd> heads;
  };

  Mlp() = default;
  Mlp(int input_dim, std::vector<int> hidden, std::vector<HeadSpec> heads, std::uint64_t seed);

  int input_dim() const { return input_dim_; }
  const std::vector<int>& hidden() const { return hidden_; }
  const std::vector<HeadSpec>& head_specs() const { return head_specs_; }
  std::vector<Dense>& trunk() { return trunk_; }
  const std::vector<Dense>& trunk() const { return trunk_; }
  std::vector<Dense>& heads() { return heads_; }
  const std::vector<Dense>& heads() const { return heads_; }

  Cache forward(const Eigen::VectorXd& x) const;
  /// Accumulates parameter gradients (same layout as `flat()`) into `grad`.
  void backward(const Cache& cache, const std::vector<Eigen::VectorXd>& head_grads, Eigen::VectorXd& grad) const;

  int num_params() const;
  Eigen::VectorXd flat() const;
  void set_flat(const Eigen::VectorXd& theta);
  /// Offset and size in the flat vector of head `i`'s parameters.
  std::pair<int, int> head_range(int i) const;

 private:
  int input_dim_ = 0;
  std::vector<int> hidden_;
  std::vector<HeadSpec> head_specs_;
  std::vector<Dense> trunk_;
  std::vector<Dense> heads_;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(int n, AdamConfig cfg = {});
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);

 private:
  AdamConfig cfg_;
  Eigen::VectorXd m_, v_;
  long t_ = 0;
};

}  // namespace bnet
