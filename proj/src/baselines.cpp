#include "spillover/baselines.hpp"

#include <cmath>

#include "spillover/errors.hpp"

namespace spillover {

namespace {

constexpr double kZ975 = 1.959963984540054;

struct StackedDesign {
  Eigen::MatrixXd z;  // (N*T) x p
  Eigen::VectorXd y;  // N*T
  std::vector<int> location;  // row -> location, for clustering
};

// Stacks [1, D, X] period by period.
StackedDesign stack_panel(const SpatialPanel& panel, bool include_intercept) {
  const int n = panel.n(), t_periods = panel.t(), k = panel.k();
  const int p = (include_intercept ? 1 : 0) + 1 + k;
  StackedDesign d;
  d.z.resize(n * t_periods, p);
  d.y.resize(n * t_periods);
  d.location.resize(static_cast<std::size_t>(n) * t_periods);
  int row = 0;
  for (int t = 0; t < t_periods; ++t) {
    for (int i = 0; i < n; ++i, ++row) {
      int c = 0;
      if (include_intercept) d.z(row, c++) = 1.0;
      d.z(row, c++) = panel.treatment(i, t);
      for (int j = 0; j < k; ++j) d.z(row, c++) = panel.covariates[static_cast<std::size_t>(t)](i, j);
      d.y(row) = panel.outcomes(i, t);
      d.location[static_cast<std::size_t>(row)] = i;
    }
  }
  return d;
}

struct OlsFit {
  Eigen::VectorXd coef;
  Eigen::MatrixXd ztz_inv;
  Eigen::VectorXd resid;
};

OlsFit ols_fit(const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  const Eigen::MatrixXd ztz = z.transpose() * z;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(ztz);
  if (lu.rank() < ztz.rows()) throw EstimationFailure("singular design matrix");
  OlsFit fit;
  fit.ztz_inv = lu.inverse();
  fit.coef = fit.ztz_inv * (z.transpose() * y);
  fit.resid = y - z * fit.coef;
  return fit;
}

// HC1 sandwich variance for one coefficient.
double hc1_variance(const Eigen::MatrixXd& z, const OlsFit& fit, int coef_index) {
  const Eigen::Index n = z.rows();
  const Eigen::Index p = z.cols();
  const Eigen::VectorXd a = fit.ztz_inv.col(coef_index);  // symmetric inverse
  // var = a' Z' diag(e^2) Z a * n/(n-p)
  const Eigen::VectorXd za = z * a;
  const double meat = (za.array().square() * fit.resid.array().square()).sum();
  return meat * static_cast<double>(n) / static_cast<double>(n - p);
}

// Cluster-robust sandwich variance for one coefficient.
double cluster_variance(const Eigen::MatrixXd& z, const OlsFit& fit,
                        const std::vector<int>& cluster, int n_clusters, int coef_index) {
  const Eigen::VectorXd a = fit.ztz_inv.col(coef_index);
  const Eigen::VectorXd za = z * a;
  std::vector<double> cluster_sum(static_cast<std::size_t>(n_clusters), 0.0);
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    cluster_sum[static_cast<std::size_t>(cluster[static_cast<std::size_t>(r)])] +=
        za(r) * fit.resid(r);
  double meat = 0.0;
  for (double s : cluster_sum) meat += s * s;
  const double g = static_cast<double>(n_clusters);
  const double n = static_cast<double>(z.rows());
  const double p = static_cast<double>(z.cols());
  const double correction = (g / (g - 1.0)) * ((n - 1.0) / (n - p));
  return meat * correction;
}

BaselineResult finish(const std::string& method, double tau, double var) {
  if (!(var > 0.0) || !std::isfinite(var)) throw EstimationFailure(method + ": degenerate variance");
  BaselineResult res;
  res.method = method;
  res.tau_hat = tau;
  res.std_error = std::sqrt(var);
  res.ci_low = tau - kZ975 * res.std_error;
  res.ci_high = tau + kZ975 * res.std_error;
  return res;
}

}  // namespace

BaselineResult ols(const SpatialPanel& panel) {
  const StackedDesign d = stack_panel(panel, true);
  const OlsFit fit = ols_fit(d.z, d.y);
  return finish("ols", fit.coef(1), hc1_variance(d.z, fit, 1));
}

BaselineResult fixed_effects(const SpatialPanel& panel) {
  if (panel.t() < 2) throw InvalidParameter("fixed_effects needs T >= 2");
  // Degenerate treatment: no variation anywhere.
  const int treated = panel.treated_at0().sum();
  const bool varies_over_time = !panel.treatment_time_invariant();
  if (!varies_over_time && (treated == 0 || treated == panel.n())) {
    throw EstimationFailure(
        "fixed_effects: treatment has no variation; with a time-invariant "
        "one-shot assignment identification needs both treated and untreated "
        "locations");
  }
  const int n = panel.n(), t_periods = panel.t(), k = panel.k();
  // Demean by period (see header); intercept drops out.
  Eigen::MatrixXd z(n * t_periods, 1 + k);
  Eigen::VectorXd y(n * t_periods);
  std::vector<int> location(static_cast<std::size_t>(n) * t_periods);
  int row = 0;
  for (int t = 0; t < t_periods; ++t) {
    const double y_mean = panel.outcomes.col(t).mean();
    const double d_mean = panel.treatment.col(t).cast<double>().mean();
    Eigen::RowVectorXd x_mean = panel.covariates[static_cast<std::size_t>(t)].colwise().mean();
    for (int i = 0; i < n; ++i, ++row) {
      y(row) = panel.outcomes(i, t) - y_mean;
      z(row, 0) = panel.treatment(i, t) - d_mean;
      for (int j = 0; j < k; ++j)
        z(row, 1 + j) = panel.covariates[static_cast<std::size_t>(t)](i, j) - x_mean(j);
      location[static_cast<std::size_t>(row)] = i;
    }
  }
  const OlsFit fit = ols_fit(z, y);
  return finish("fe", fit.coef(0), cluster_variance(z, fit, location, n, 0));
}

BaselineResult sar_ml(const SpatialPanel& panel, const Eigen::MatrixXd& weights) {
  // Concentrated Gaussian ML per period, pooled by inverse variance. With
  // regime-switching spillovers a single static SAR is the wrong model; the
  // per-period fits keep that misspecification visible in the pooling
  // weights, which is the comparison the simulation study draws.
  const int n = panel.n(), t_periods = panel.t(), k = panel.k();
  // The caller's sym_degree must describe the weights passed in (the panel's
  // network carries both).
  const SarOperator op(weights, panel.network.sym_degree);
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  const int p = 2 + k;
  Eigen::MatrixXd z(n, p);
  double weight_sum = 0.0, tau_weighted = 0.0, rho_weighted = 0.0;
  for (int t = 0; t < t_periods; ++t) {
    const Eigen::VectorXd yt = panel.outcomes.col(t);
    const Eigen::VectorXd wyt = weights * yt;
    z.col(0).setOnes();
    z.col(1) = panel.treatment.col(t).cast<double>();
    for (int j = 0; j < k; ++j) z.col(2 + j) = panel.covariates[static_cast<std::size_t>(t)].col(j);
    const Eigen::MatrixXd ztz_inv =
        (z.transpose() * z).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::VectorXd zty = z.transpose() * yt;
    const Eigen::VectorXd ztwy = z.transpose() * wyt;
    const double yy = yt.squaredNorm(), ywy = yt.dot(wyt), wywy = wyt.squaredNorm();
    auto sigma2_at = [&](double rho) {
      const Eigen::VectorXd zty_r = zty - rho * ztwy;
      const double yryr = yy - 2.0 * rho * ywy + rho * rho * wywy;
      return std::max((yryr - zty_r.dot(ztz_inv * zty_r)) / n, 1e-300);
    };
    auto loglik = [&](double rho) { return op.log_det(rho) - 0.5 * n * std::log(sigma2_at(rho)); };
    double a = -0.98, b = 0.98;
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
    const double rho_t = 0.5 * (a + b);
    if (!(loglik(rho_t) >= loglik(-0.98) - 1e-9 && loglik(rho_t) >= loglik(0.98) - 1e-9))
      throw EstimationFailure("sar_ml: period likelihood maximised at the rho bracket edge");
    const Eigen::VectorXd coef = ztz_inv * (zty - rho_t * ztwy);
    // Robust (sandwich) variance of the treatment coefficient at rho_t.
    const Eigen::VectorXd resid = (yt - rho_t * wyt) - z * coef;
    const Eigen::VectorXd a_col = ztz_inv.col(1);
    const Eigen::VectorXd za = z * a_col;
    const double meat = (za.array().square() * resid.array().square()).sum();
    const double var_t = meat * static_cast<double>(n) / (n - p);
    if (!(var_t > 0.0) || !std::isfinite(var_t))
      throw EstimationFailure("sar_ml: degenerate period variance");
    const double w = 1.0 / var_t;
    weight_sum += w;
    tau_weighted += w * coef(1);
    rho_weighted += w * rho_t;
  }
  BaselineResult res;
  res.method = "sar";
  res.tau_hat = tau_weighted / weight_sum;
  res.std_error = std::sqrt(1.0 / weight_sum);
  res.ci_low = res.tau_hat - kZ975 * res.std_error;
  res.ci_high = res.tau_hat + kZ975 * res.std_error;
  res.rho_hat = rho_weighted / weight_sum;
  return res;
}

BaselineResult sar_ml(const SpatialPanel& panel) { return sar_ml(panel, panel.network.weights); }

}  // namespace spillover
