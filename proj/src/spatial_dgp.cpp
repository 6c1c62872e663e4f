#include "spillover/spatial_dgp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "spillover/errors.hpp"
#include "spillover/rng.hpp"

namespace spillover {

void WeightsParams::validate() const {
  if (!std::isfinite(theta_d) || !std::isfinite(theta_e))
    throw InvalidParameter("weight decay parameters must be finite");
}

void SpatialNetwork::validate() const {
  if (n < 2) throw InvalidParameter("network needs at least 2 locations");
  for (int i = 0; i < n; ++i) {
    if (weights(i, i) != 0.0) throw InvalidParameter("weights diagonal must be zero");
    const double row = weights.row(i).sum();
    if (std::fabs(row - 1.0) > 1e-10) throw InvalidParameter("weights rows must sum to 1");
    if (weights.row(i).minCoeff() < 0.0) throw InvalidParameter("weights must be non-negative");
  }
}

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& coordinates) {
  const int n = static_cast<int>(coordinates.rows());
  Eigen::MatrixXd d(n, n);
  for (int i = 0; i < n; ++i) {
    d(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      const double dist = (coordinates.row(i) - coordinates.row(j)).norm();
      d(i, j) = dist;
      d(j, i) = dist;
    }
  }
  return d;
}

Eigen::MatrixXd build_weights(const Eigen::MatrixXd& coordinates,
                              const Eigen::MatrixXd& econ_distance, const WeightsParams& params) {
  params.validate();
  const int n = static_cast<int>(coordinates.rows());
  if (n < 2) throw InvalidParameter("build_weights needs N >= 2");
  const Eigen::MatrixXd geo = pairwise_distances(coordinates);
  if (econ_distance.rows() != n || econ_distance.cols() != n)
    throw InvalidParameter("econ_distance must be N x N");
  if (econ_distance.minCoeff() < 0.0) throw InvalidParameter("distances must be non-negative");

  Eigen::MatrixXd w(n, n);
  for (int i = 0; i < n; ++i) {
    double row_sum = 0.0;
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        w(i, j) = 0.0;
        continue;
      }
      const double expo = -params.theta_d * geo(i, j) - params.theta_e * econ_distance(i, j);
      w(i, j) = std::exp(expo);
      row_sum += w(i, j);
    }
    if (!(row_sum > 0.0) || !std::isfinite(row_sum))
      throw NumericalError("degenerate weights row: all neighbours at infinite distance");
    w.row(i) /= row_sum;
  }
  return w;
}

SpatialNetwork generate_network(int n, NetworkKind kind, std::uint64_t seed,
                                const WeightsParams& kernel_params) {
  if (n < 5) throw InvalidParameter("generate_network needs n >= 5");
  Rng rng(derive_seed(seed, 0xA11));
  SpatialNetwork net;
  net.n = n;
  net.kind = kind;
  net.coordinates.resize(n, 2);
  for (int i = 0; i < n; ++i) {
    net.coordinates(i, 0) = rng.uniform(0.0, 100.0);
    net.coordinates(i, 1) = rng.uniform(0.0, 100.0);
  }
  const Eigen::MatrixXd dist = pairwise_distances(net.coordinates);
  net.econ_distance = dist;

  if (kind == NetworkKind::Kernel) {
    // Kernel base A is the symmetric decay matrix itself.
    Eigen::MatrixXd a(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        a(i, j) = (i == j) ? 0.0
                           : std::exp(-kernel_params.theta_d * dist(i, j) -
                                      kernel_params.theta_e * net.econ_distance(i, j));
    net.sym_degree = a.rowwise().sum();
    net.weights = build_weights(net.coordinates, net.econ_distance, kernel_params);
    net.validate();
    return net;
  }

  const int k = (kind == NetworkKind::Sparse) ? 4 : 12;
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) {
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int p, int q) {
      if (dist(i, p) != dist(i, q)) return dist(i, p) < dist(i, q);
      return p < q;
    });
    int added = 0;
    for (int j : order) {
      if (j == i) continue;
      a(i, j) = 1.0;
      if (++added == k) break;
    }
  }
  // Symmetrize: an edge either way links both.
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (a(i, j) > 0.0 || a(j, i) > 0.0) {
        a(i, j) = 1.0;
        a(j, i) = 1.0;
      }
  net.sym_degree = a.rowwise().sum();
  net.weights.resize(n, n);
  for (int i = 0; i < n; ++i) net.weights.row(i) = a.row(i) / net.sym_degree(i);
  net.validate();
  return net;
}

SarOperator::SarOperator(const Eigen::MatrixXd& weights, const Eigen::VectorXd& sym_degree) {
  const int n = static_cast<int>(weights.rows());
  if (sym_degree.size() != n) throw InvalidParameter("sym_degree size mismatch");
  sqrt_deg_ = sym_degree.array().sqrt();
  inv_sqrt_deg_ = sqrt_deg_.array().inverse();
  // S = D^1/2 W D^-1/2 must be symmetric; this is the contract that the
  // network was built as D^-1 A with A = A^T.
  Eigen::MatrixXd s(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) s(i, j) = sqrt_deg_(i) * weights(i, j) * inv_sqrt_deg_(j);
  const double asym = (s - s.transpose()).cwiseAbs().maxCoeff();
  if (asym > 1e-8) throw NumericalError("weights are not similar to a symmetric matrix");
  s = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(s);
  if (es.info() != Eigen::Success) throw NumericalError("eigendecomposition failed");
  q_ = es.eigenvectors();
  lambda_ = es.eigenvalues();
}

double SarOperator::log_det(double rho) const {
  double acc = 0.0;
  for (int i = 0; i < lambda_.size(); ++i) {
    const double v = 1.0 - rho * lambda_(i);
    if (!(v > 0.0)) return -std::numeric_limits<double>::infinity();
    acc += std::log(v);
  }
  return acc;
}

Eigen::VectorXd SarOperator::solve(double rho, const Eigen::VectorXd& v) const {
  Eigen::VectorXd y = q_.transpose() * (sqrt_deg_.asDiagonal() * v);
  for (int i = 0; i < lambda_.size(); ++i) {
    const double denom = 1.0 - rho * lambda_(i);
    if (std::fabs(denom) < 1e-14) throw NumericalError("singular (I - rho W)");
    y(i) /= denom;
  }
  return inv_sqrt_deg_.asDiagonal() * (q_ * y);
}

Eigen::MatrixXd SarOperator::solve(double rho, const Eigen::MatrixXd& v) const {
  Eigen::MatrixXd y = q_.transpose() * (sqrt_deg_.asDiagonal() * v);
  for (int i = 0; i < lambda_.size(); ++i) {
    const double denom = 1.0 - rho * lambda_(i);
    if (std::fabs(denom) < 1e-14) throw NumericalError("singular (I - rho W)");
    y.row(i) /= denom;
  }
  return inv_sqrt_deg_.asDiagonal() * (q_ * y);
}

DgpConfig::DgpConfig() {
  // Spillover defaults: slow upward drift plus moderate diffusion starting
  // below the boundary; jump intensity is the scenario knob. Calibrated so
  // that moderate jump rates cross the boundary mid-sample in nearly every
  // seed while the no-jump configuration crosses only occasionally.
  spillover_params.s0 = 0.2;
  spillover_params.drift_a = 0.01;
  spillover_params.drift_b = 0.0;
  spillover_params.sigma = 0.08;
  spillover_params.jump_intensity_lambda0 = 0.0;
  spillover_params.jump_mean = 0.15;
  spillover_params.compensated = false;
}

void DgpConfig::validate() const {
  if (n_locations < 5) throw InvalidParameter("n_locations must be >= 5");
  if (n_periods < 2) throw InvalidParameter("n_periods must be >= 2");
  if (std::fabs(rho_pe) >= 1.0 || std::fabs(rho_ge) >= 1.0)
    throw InvalidParameter("spillover intensities must satisfy |rho| < 1");
  if (!(treated_fraction > 0.0) || treated_fraction >= 1.0)
    throw InvalidParameter("treated_fraction must be in (0,1)");
  if (noise_sd < 0.0 || alpha_sd < 0.0) throw InvalidParameter("sds must be >= 0");
  if (!(period_dt > 0.0)) throw InvalidParameter("period_dt must be > 0");
  spillover_params.validate();
}

RegimeEffect regime_effect(double s, const DgpConfig& config) {
  if (s >= config.s_star) return {config.tau_pe + config.delta_ge, config.rho_ge};
  return {config.tau_pe, config.rho_pe};
}

Eigen::VectorXi assign_treatment(const SpatialNetwork& network, double fraction,
                                 AssignmentKind kind, std::uint64_t seed) {
  const int n = network.n;
  const int m = std::max(1, static_cast<int>(std::floor(fraction * n)));
  Rng rng(seed);
  Eigen::VectorXi d = Eigen::VectorXi::Zero(n);
  if (kind == AssignmentKind::Random) {
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    // Fisher-Yates prefix
    for (int i = 0; i < m; ++i) {
      const int j = i + static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n - i)));
      std::swap(idx[i], idx[j]);
      d(idx[i]) = 1;
    }
    return d;
  }
  const Eigen::MatrixXd dist = pairwise_distances(network.coordinates);
  if (kind == AssignmentKind::Clustered) {
    const int center = static_cast<int>(rng.uniform_index(n));
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int p, int q) {
      if (dist(center, p) != dist(center, q)) return dist(center, p) < dist(center, q);
      return p < q;
    });
    for (int i = 0; i < m; ++i) d(order[i]) = 1;
    return d;
  }
  // Dispersed: a staged rollout that alternates farthest-point picks
  // (spreading pilots over the map) with uniform random picks. The random
  // half keeps the treated and untreated exposure distributions overlapping,
  // which conditional estimators need, while the spread half still tilts
  // treated units away from each other.
  std::vector<double> min_dist(n, std::numeric_limits<double>::infinity());
  int current = static_cast<int>(rng.uniform_index(n));
  d(current) = 1;
  for (int picked = 1; picked < m; ++picked) {
    for (int i = 0; i < n; ++i)
      if (!d(i)) min_dist[i] = std::min(min_dist[i], dist(current, i));
    int best = -1;
    if (picked % 4 == 0) {
      const int target = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(n - picked)));
      int seen = 0;
      for (int i = 0; i < n; ++i) {
        if (d(i)) continue;
        if (seen++ == target) {
          best = i;
          break;
        }
      }
    } else {
      double best_val = -1.0;
      for (int i = 0; i < n; ++i) {
        if (d(i)) continue;
        if (min_dist[i] > best_val) {
          best_val = min_dist[i];
          best = i;
        }
      }
    }
    d(best) = 1;
    current = best;
  }
  return d;
}

bool SpatialPanel::treatment_time_invariant() const {
  for (int i = 0; i < treatment.rows(); ++i)
    for (int t = 1; t < treatment.cols(); ++t)
      if (treatment(i, t) != treatment(i, 0)) return false;
  return true;
}

SpatialPanel simulate_panel_on_network(const DgpConfig& config, const SpatialNetwork& network) {
  config.validate();
  const int n = network.n;
  const int t_periods = config.n_periods;
  const int k = static_cast<int>(config.beta.size());

  SpatialPanel panel;
  panel.network = network;
  panel.outcomes.resize(n, t_periods);
  panel.treatment.resize(n, t_periods);
  panel.covariates.resize(static_cast<std::size_t>(t_periods));
  panel.true_regime.resize(static_cast<std::size_t>(t_periods));
  panel.true_tau_series.resize(static_cast<std::size_t>(t_periods));
  panel.state_at_period.resize(static_cast<std::size_t>(t_periods));

  // Substreams: 1 = spillover path, 2 = assignment, 3 = location effects,
  // 10 + t = period shocks. Fixed labels keep the panel identical however
  // the surrounding loops are scheduled.
  const int steps_per_period = 32;
  const double dt = config.period_dt / steps_per_period;
  const double horizon = config.period_dt * t_periods;
  SpilloverPath path =
      simulate_path(config.spillover_params, horizon, dt, derive_seed(config.seed, 1));

  const Eigen::VectorXi d0 = assign_treatment(network, config.treated_fraction, config.assignment,
                                              derive_seed(config.seed, 2));
  for (int t = 0; t < t_periods; ++t) panel.treatment.col(t) = d0;

  Rng alpha_rng(derive_seed(config.seed, 3));
  Eigen::VectorXd alpha(n);
  for (int i = 0; i < n; ++i) alpha(i) = config.alpha_sd > 0.0 ? alpha_rng.normal(0.0, config.alpha_sd) : 0.0;

  const SarOperator op(network);
  const Eigen::VectorXd d0d = d0.cast<double>();

  for (int t = 0; t < t_periods; ++t) {
    // State sampled at the start of the period: the regime driving period t
    // is predetermined when the period begins.
    const std::size_t path_idx = static_cast<std::size_t>(t * steps_per_period);
    const double s_t = path.values.at(path_idx);
    panel.state_at_period[static_cast<std::size_t>(t)] = s_t;
    const RegimeEffect eff = regime_effect(s_t, config);
    panel.true_regime[static_cast<std::size_t>(t)] = (s_t >= config.s_star) ? 1 : 0;
    panel.true_tau_series[static_cast<std::size_t>(t)] = eff.tau;

    Rng rng(derive_seed(config.seed, 10 + static_cast<std::uint64_t>(t)));
    Eigen::MatrixXd x(n, k);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) x(i, j) = rng.normal();
    Eigen::VectorXd eps(n);
    for (int i = 0; i < n; ++i) eps(i) = config.noise_sd > 0.0 ? rng.normal(0.0, config.noise_sd) : 0.0;

    Eigen::VectorXd rhs = alpha + eff.tau * d0d + x * config.beta + eps;
    panel.outcomes.col(t) = (eff.rho == 0.0) ? rhs : op.solve(eff.rho, rhs);
    panel.covariates[static_cast<std::size_t>(t)] = std::move(x);
  }
  panel.true_state = std::move(path);
  return panel;
}

SpatialPanel simulate_panel(const DgpConfig& config) {
  const SpatialNetwork network =
      generate_network(config.n_locations, config.network_kind, derive_seed(config.seed, 0));
  return simulate_panel_on_network(config, network);
}

namespace {

struct PooledDesign {
  // Pooled regression pieces reused across rho candidates:
  // residual sum of squares of (Y - rho WY) on Z is quadratic in rho.
  Eigen::MatrixXd ztz_inv;
  Eigen::MatrixXd zty;   // Z' y   (stacked)
  Eigen::MatrixXd ztwy;  // Z' Wy
  double yy = 0.0, ywy = 0.0, wywy = 0.0;
  double n_total = 0.0;
};

PooledDesign build_pooled_design(const SpatialPanel& panel, const Eigen::MatrixXd& w) {
  const int n = panel.n();
  const int t_periods = panel.t();
  const int k = panel.k();
  const int p = 2 + k;  // intercept, treatment, covariates
  Eigen::MatrixXd ztz = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd zty = Eigen::VectorXd::Zero(p);
  Eigen::VectorXd ztwy = Eigen::VectorXd::Zero(p);
  double yy = 0.0, ywy = 0.0, wywy = 0.0;
  Eigen::MatrixXd z(n, p);
  for (int t = 0; t < t_periods; ++t) {
    z.col(0).setOnes();
    z.col(1) = panel.treatment.col(t).cast<double>();
    for (int j = 0; j < k; ++j) z.col(2 + j) = panel.covariates[static_cast<std::size_t>(t)].col(j);
    const Eigen::VectorXd y = panel.outcomes.col(t);
    const Eigen::VectorXd wy = w * y;
    ztz.noalias() += z.transpose() * z;
    zty.noalias() += z.transpose() * y;
    ztwy.noalias() += z.transpose() * wy;
    yy += y.squaredNorm();
    ywy += y.dot(wy);
    wywy += wy.squaredNorm();
  }
  PooledDesign d;
  d.ztz_inv = ztz.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  d.zty = zty;
  d.ztwy = ztwy;
  d.yy = yy;
  d.ywy = ywy;
  d.wywy = wywy;
  d.n_total = static_cast<double>(n) * t_periods;
  return d;
}

double pooled_sigma2(const PooledDesign& d, double rho) {
  // ||y_r - Z b||^2 with y_r = y - rho Wy and b the OLS coefficient.
  const Eigen::VectorXd zty_r = d.zty - rho * d.ztwy;
  const double yryr = d.yy - 2.0 * rho * d.ywy + rho * rho * d.wywy;
  const double fitted = zty_r.dot(d.ztz_inv * zty_r);
  return std::max((yryr - fitted) / d.n_total, 1e-300);
}

}  // namespace

SarConcentratedFit sar_concentrated_fit(const SpatialPanel& panel, const Eigen::MatrixXd& weights,
                                        const SarOperator& op, double rho_lo, double rho_hi) {
  const PooledDesign design = build_pooled_design(panel, weights);
  const double t_periods = panel.t();
  auto loglik = [&](double rho) {
    return t_periods * op.log_det(rho) - 0.5 * design.n_total * std::log(pooled_sigma2(design, rho));
  };
  // Golden-section on the concentrated likelihood.
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double a = rho_lo, b = rho_hi;
  double c = b - gr * (b - a), d = a + gr * (b - a);
  double fc = loglik(c), fd = loglik(d);
  for (int it = 0; it < 200 && (b - a) > 1e-10; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = loglik(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = loglik(d);
    }
  }
  SarConcentratedFit fit;
  fit.rho = 0.5 * (a + b);
  fit.loglik = loglik(fit.rho);
  // Bracketing sanity: interior optimum should beat the edges.
  fit.bracket_ok = fit.loglik >= loglik(rho_lo) - 1e-9 && fit.loglik >= loglik(rho_hi) - 1e-9;
  const Eigen::VectorXd zty_r = design.zty - fit.rho * design.ztwy;
  fit.coef = design.ztz_inv * zty_r;
  fit.sigma2 = pooled_sigma2(design, fit.rho);
  return fit;
}

WeightsParams estimate_weight_params(const SpatialPanel& panel,
                                     const std::vector<WeightsParams>& grid) {
  if (grid.empty()) throw InvalidParameter("estimate_weight_params needs a non-empty grid");
  double best_ll = -std::numeric_limits<double>::infinity();
  WeightsParams best = grid.front();
  const Eigen::MatrixXd geo = pairwise_distances(panel.network.coordinates);
  for (const auto& cand : grid) {
    Eigen::MatrixXd w = build_weights(panel.network.coordinates, panel.network.econ_distance, cand);
    // The kernel base exp(-theta_d d - theta_e e) is symmetric; its row sums
    // are the degrees the SarOperator needs.
    Eigen::VectorXd degree(panel.network.n);
    for (int i = 0; i < panel.network.n; ++i) {
      double acc = 0.0;
      for (int j = 0; j < panel.network.n; ++j) {
        if (i == j) continue;
        acc += std::exp(-cand.theta_d * geo(i, j) - cand.theta_e * panel.network.econ_distance(i, j));
      }
      degree(i) = acc;
    }
    SarOperator op(w, degree);
    const SarConcentratedFit fit = sar_concentrated_fit(panel, w, op);
    const bool better =
        fit.loglik > best_ll + 1e-9 ||
        (std::fabs(fit.loglik - best_ll) <= 1e-9 &&
         (cand.theta_d < best.theta_d ||
          (cand.theta_d == best.theta_d && cand.theta_e < best.theta_e)));
    if (better) {
      best_ll = fit.loglik;
      best = cand;
    }
  }
  return best;
}

}  // namespace spillover
