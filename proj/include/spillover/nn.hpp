#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace spillover {

/// Batches are stored row-major so each sample's feature row is contiguous.
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Fully connected network with softsign hidden layers (x / (1 + |x|), a
/// cheap smooth saturating unit) and a linear output. Parameters live in one
/// flat vector with matrix views over it, so optimizers and the
/// finite-difference oracle address every weight directly; gradients are
/// hand-derived and exact.
class Mlp {
 public:
  Mlp() = default;
  /// sizes = {in, hidden..., out}; weights ~ N(0, 1/sqrt(fan_in)), biases 0.
  /// with_skip adds a direct linear input-to-output path, which learns the
  /// dominant linear structure without the attenuation a saturating hidden
  /// stack imposes.
  Mlp(const std::vector<int>& sizes, std::uint64_t seed, bool with_skip = false);

  int input_dim() const { return sizes_.empty() ? 0 : sizes_.front(); }
  int output_dim() const { return sizes_.empty() ? 0 : sizes_.back(); }

  /// Rows are samples.
  RowMatrixXd forward(const RowMatrixXd& x) const;

  struct Workspace {
    std::vector<RowMatrixXd> activations;  // per layer input, incl. x
    RowMatrixXd output;
    std::vector<RowMatrixXd> delta;        // backprop scratch per layer
  };
  void forward_cached(const RowMatrixXd& x, Workspace& ws) const;

  /// Backprop of dLoss/dOutput through the cached forward pass, accumulated
  /// into a flat gradient vector laid out like parameters().
  void backward(Workspace& ws, const RowMatrixXd& grad_output, Eigen::VectorXd& grad_flat) const;

  std::size_t parameter_count() const { return static_cast<std::size_t>(theta_.size()); }
  const Eigen::VectorXd& parameters() const { return theta_; }
  Eigen::VectorXd parameters_flat() const { return theta_; }
  void set_parameters_flat(const Eigen::VectorXd& theta);

  const std::vector<int>& layer_sizes() const { return sizes_; }
  bool has_skip() const { return skip_; }

 private:
  Eigen::Map<const Eigen::MatrixXd> weight(std::size_t l) const;
  Eigen::Map<const Eigen::VectorXd> bias_view(std::size_t l) const;
  Eigen::Map<const Eigen::MatrixXd> skip_weight() const;

  std::vector<int> sizes_;
  std::vector<Eigen::Index> w_offset_;
  std::vector<Eigen::Index> b_offset_;
  Eigen::Index skip_offset_ = -1;
  bool skip_ = false;
  Eigen::VectorXd theta_;
};

/// Adam with a mutable learning rate; state lives alongside the flat
/// parameter vector.
class Adam {
 public:
  Adam() = default;
  Adam(std::size_t n_params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);
  void set_lr(double lr) { lr_ = lr; }
  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);

 private:
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
  Eigen::VectorXd m_, v_;
};

}  // namespace spillover
