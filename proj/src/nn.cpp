#include "spillover/nn.hpp"

#include <cmath>

#include "spillover/errors.hpp"
#include "spillover/rng.hpp"

namespace spillover {

Mlp::Mlp(const std::vector<int>& sizes, std::uint64_t seed, bool with_skip)
    : sizes_(sizes), skip_(with_skip) {
  if (sizes.size() < 2) throw InvalidParameter("Mlp needs at least input and output sizes");
  Eigen::Index total = 0;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    w_offset_.push_back(total);
    total += static_cast<Eigen::Index>(sizes[l]) * sizes[l + 1];
    b_offset_.push_back(total);
    total += sizes[l + 1];
  }
  if (skip_) {
    skip_offset_ = total;
    total += static_cast<Eigen::Index>(sizes.front()) * sizes.back();
  }
  theta_.resize(total);
  Rng rng(seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(sizes[l]));
    double* w = theta_.data() + w_offset_[l];
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(sizes[l]) * sizes[l + 1]; ++i)
      w[i] = scale * rng.normal();
    double* b = theta_.data() + b_offset_[l];
    for (int i = 0; i < sizes[l + 1]; ++i) b[i] = 0.0;
  }
  if (skip_) {
    double* w = theta_.data() + skip_offset_;
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(sizes.front()) * sizes.back(); ++i)
      w[i] = 0.0;  // the skip starts silent
  }
}

Eigen::Map<const Eigen::MatrixXd> Mlp::weight(std::size_t l) const {
  return {theta_.data() + w_offset_[l], sizes_[l], sizes_[l + 1]};
}

Eigen::Map<const Eigen::VectorXd> Mlp::bias_view(std::size_t l) const {
  return {theta_.data() + b_offset_[l], sizes_[l + 1]};
}

Eigen::Map<const Eigen::MatrixXd> Mlp::skip_weight() const {
  return {theta_.data() + skip_offset_, sizes_.front(), sizes_.back()};
}

namespace {

inline void softsign_inplace(RowMatrixXd& h) {
  double* p = h.data();
  const Eigen::Index n = h.size();
  for (Eigen::Index i = 0; i < n; ++i) p[i] = p[i] / (1.0 + std::fabs(p[i]));
}

}  // namespace

RowMatrixXd Mlp::forward(const RowMatrixXd& x) const {
  Workspace ws;
  forward_cached(x, ws);
  return ws.output;
}

void Mlp::forward_cached(const RowMatrixXd& x, Workspace& ws) const {
  const std::size_t n_layers = sizes_.size() - 1;
  ws.activations.resize(n_layers);
  ws.activations[0] = x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    RowMatrixXd& out = (l + 1 < n_layers) ? ws.activations[l + 1] : ws.output;
    out.resize(ws.activations[l].rows(), sizes_[l + 1]);
    out.noalias() = ws.activations[l] * weight(l);
    out.rowwise() += bias_view(l).transpose();
    if (l + 1 < n_layers) softsign_inplace(out);
  }
  if (skip_) ws.output.noalias() += ws.activations[0] * skip_weight();
}

void Mlp::backward(Workspace& ws, const RowMatrixXd& grad_output,
                   Eigen::VectorXd& grad_flat) const {
  const std::size_t n_layers = sizes_.size() - 1;
  if (grad_flat.size() != theta_.size()) {
    grad_flat.setZero(theta_.size());
  }
  ws.delta.resize(n_layers);
  ws.delta[n_layers - 1] = grad_output;
  if (skip_) {
    Eigen::Map<Eigen::MatrixXd> gs(grad_flat.data() + skip_offset_, sizes_.front(), sizes_.back());
    gs.noalias() += ws.activations[0].transpose() * grad_output;
  }
  for (std::size_t l = n_layers; l-- > 0;) {
    const RowMatrixXd& a_in = ws.activations[l];
    const RowMatrixXd& delta = ws.delta[l];
    Eigen::Map<Eigen::MatrixXd> gw(grad_flat.data() + w_offset_[l], sizes_[l], sizes_[l + 1]);
    gw.noalias() += a_in.transpose() * delta;
    Eigen::Map<Eigen::VectorXd> gb(grad_flat.data() + b_offset_[l], sizes_[l + 1]);
    gb += delta.colwise().sum().transpose();
    if (l > 0) {
      // softsign'(z) = (1 - |softsign(z)|)^2, recoverable from the stored
      // activation a = softsign(z).
      RowMatrixXd& next = ws.delta[l - 1];
      next.resize(delta.rows(), sizes_[l]);
      next.noalias() = delta * weight(l).transpose();
      const double* a = ws.activations[l].data();
      double* d = next.data();
      for (Eigen::Index i = 0; i < next.size(); ++i) {
        const double g = 1.0 - std::fabs(a[i]);
        d[i] *= g * g;
      }
    }
  }
}

void Mlp::set_parameters_flat(const Eigen::VectorXd& theta) {
  if (theta.size() != theta_.size()) throw InvalidParameter("parameter size mismatch");
  theta_ = theta;
}

Adam::Adam(std::size_t n_params, double lr, double beta1, double beta2, double eps)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params));
  v_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_params));
}

void Adam::step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad) {
  ++t_;
  const double b1 = beta1_, b2 = beta2_;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  const double step_scale = lr_ / bc1;
  double* th = theta.data();
  double* m = m_.data();
  double* v = v_.data();
  const double* g = grad.data();
  const Eigen::Index n = theta.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    th[i] -= step_scale * m[i] / (std::sqrt(v[i] / bc2) + eps_);
  }
}

}  // namespace spillover
