#include "spillover/inference.hpp"

#include <algorithm>
#include <cmath>

#include "spillover/errors.hpp"
#include "spillover/parallel.hpp"
#include "spillover/rng.hpp"

namespace spillover {

void BootstrapConfig::validate() const {
  if (b < 50) throw InvalidParameter("bootstrap needs b >= 50 for reported intervals");
  if (block_length < 1) throw InvalidParameter("block_length must be >= 1");
  if (!(lo_pct < hi_pct) || lo_pct <= 0.0 || hi_pct >= 100.0)
    throw InvalidParameter("percentiles must satisfy 0 < lo < hi < 100");
}

Interval percentile_interval(std::vector<double> draws, double lo_pct, double hi_pct) {
  Interval iv;
  if (draws.empty()) return iv;
  std::sort(draws.begin(), draws.end());
  const auto order_stat = [&](double pct) {
    const double rank = pct / 100.0 * static_cast<double>(draws.size());
    auto idx = static_cast<std::size_t>(std::ceil(rank));
    idx = std::clamp<std::size_t>(idx, 1, draws.size());
    return draws[idx - 1];
  };
  iv.lo = order_stat(lo_pct);
  iv.hi = order_stat(hi_pct);
  iv.defined = true;
  return iv;
}

SpatialPanel resample_locations(const SpatialPanel& panel, std::uint64_t seed) {
  const int n = panel.n(), t_periods = panel.t(), k = panel.k();
  Rng rng(seed);
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_index(n));

  SpatialPanel out;
  out.outcomes.resize(n, t_periods);
  out.treatment.resize(n, t_periods);
  out.covariates.resize(static_cast<std::size_t>(t_periods));
  for (auto& x : out.covariates) x.resize(n, k);
  for (int i = 0; i < n; ++i) {
    out.outcomes.row(i) = panel.outcomes.row(idx[static_cast<std::size_t>(i)]);
    out.treatment.row(i) = panel.treatment.row(idx[static_cast<std::size_t>(i)]);
  }
  for (int t = 0; t < t_periods; ++t)
    for (int i = 0; i < n; ++i)
      out.covariates[static_cast<std::size_t>(t)].row(i) =
          panel.covariates[static_cast<std::size_t>(t)].row(idx[static_cast<std::size_t>(i)]);

  // Re-index the symmetric weights base with repetition, then re-symmetrize
  // and renormalize so the resampled network is a valid D^-1 A again.
  out.network.n = n;
  out.network.kind = panel.network.kind;
  out.network.coordinates.resize(n, 2);
  out.network.econ_distance.resize(n, n);
  Eigen::MatrixXd base(n, n);
  for (int a = 0; a < n; ++a) {
    const int i = idx[static_cast<std::size_t>(a)];
    out.network.coordinates.row(a) = panel.network.coordinates.row(i);
    for (int b = 0; b < n; ++b) {
      const int j = idx[static_cast<std::size_t>(b)];
      out.network.econ_distance(a, b) = panel.network.econ_distance(i, j);
      base(a, b) = (a == b) ? 0.0 : panel.network.sym_degree(i) * panel.network.weights(i, j);
    }
  }
  base = 0.5 * (base + base.transpose());
  Eigen::VectorXd deg = base.rowwise().sum();
  out.network.weights.resize(n, n);
  for (int a = 0; a < n; ++a) {
    if (deg(a) > 0.0) {
      out.network.weights.row(a) = base.row(a) / deg(a);
    } else {
      // Isolated duplicate: fall back to uniform neighbours.
      out.network.weights.row(a).setConstant(1.0 / (n - 1));
      out.network.weights(a, a) = 0.0;
      deg(a) = 1.0;
      for (int b = 0; b < n; ++b) base(a, b) = (a == b) ? 0.0 : 1.0 / (n - 1);
    }
  }
  out.network.sym_degree = deg;

  out.true_state = panel.true_state;
  out.state_at_period = panel.state_at_period;
  out.true_regime = panel.true_regime;
  out.true_tau_series = panel.true_tau_series;
  return out;
}

SpatialPanel block_bootstrap_resample(const SpatialPanel& panel, int block_length,
                                      std::uint64_t seed) {
  const int t_periods = panel.t();
  if (block_length < 1 || block_length > t_periods)
    throw InvalidParameter("block_length must lie in [1, T]");
  Rng rng(seed);
  std::vector<int> pick;
  pick.reserve(static_cast<std::size_t>(t_periods));
  while (static_cast<int>(pick.size()) < t_periods) {
    const int start = static_cast<int>(rng.uniform_index(t_periods));
    for (int j = 0; j < block_length && static_cast<int>(pick.size()) < t_periods; ++j)
      pick.push_back((start + j) % t_periods);
  }

  SpatialPanel out;
  out.network = panel.network;
  out.outcomes.resize(panel.n(), t_periods);
  out.treatment.resize(panel.n(), t_periods);
  out.covariates.resize(static_cast<std::size_t>(t_periods));
  out.true_regime.resize(static_cast<std::size_t>(t_periods));
  out.true_tau_series.resize(static_cast<std::size_t>(t_periods));
  out.state_at_period.resize(static_cast<std::size_t>(t_periods));
  for (int t = 0; t < t_periods; ++t) {
    const int s = pick[static_cast<std::size_t>(t)];
    out.outcomes.col(t) = panel.outcomes.col(s);
    out.treatment.col(t) = panel.treatment.col(s);
    out.covariates[static_cast<std::size_t>(t)] = panel.covariates[static_cast<std::size_t>(s)];
    if (!panel.true_regime.empty())
      out.true_regime[static_cast<std::size_t>(t)] = panel.true_regime[static_cast<std::size_t>(s)];
    if (!panel.true_tau_series.empty())
      out.true_tau_series[static_cast<std::size_t>(t)] =
          panel.true_tau_series[static_cast<std::size_t>(s)];
    if (!panel.state_at_period.empty())
      out.state_at_period[static_cast<std::size_t>(t)] =
          panel.state_at_period[static_cast<std::size_t>(s)];
  }
  return out;
}

BootstrapResult hierarchical_bootstrap(const SpatialPanel& panel, const Pipeline& pipeline,
                                       const BootstrapConfig& config) {
  config.validate();
  BootstrapResult result;
  result.draws.resize(static_cast<std::size_t>(config.b));
  std::vector<unsigned char> failed(static_cast<std::size_t>(config.b), 0);
  std::vector<std::string> errors(static_cast<std::size_t>(config.b));

  parallel_for(config.b, config.threads, [&](std::int64_t it) {
    const std::uint64_t it_seed = derive_seed(config.seed, static_cast<std::uint64_t>(it));
    try {
      SpatialPanel resampled = (config.mode == BootstrapMode::ResampleLocations)
                                   ? resample_locations(panel, derive_seed(it_seed, 1))
                                   : block_bootstrap_resample(panel, config.block_length,
                                                              derive_seed(it_seed, 1));
      result.draws[static_cast<std::size_t>(it)] = pipeline(resampled, derive_seed(it_seed, 2));
    } catch (const std::exception& e) {
      failed[static_cast<std::size_t>(it)] = 1;
      errors[static_cast<std::size_t>(it)] = e.what();
    }
  });

  std::vector<double> pe, ge, ss;
  for (int it = 0; it < config.b; ++it) {
    if (failed[static_cast<std::size_t>(it)]) {
      ++result.n_failures;
      if (result.failure_log.size() < 10)
        result.failure_log.push_back(errors[static_cast<std::size_t>(it)]);
      continue;
    }
    const auto& d = result.draws[static_cast<std::size_t>(it)];
    if (d.tau_pe) pe.push_back(*d.tau_pe);
    if (d.tau_ge) ge.push_back(*d.tau_ge);
    if (d.s_star) ss.push_back(*d.s_star);
  }
  if (result.n_failures * 5 > config.b) {
    std::string msg = "bootstrap-unstable: " + std::to_string(result.n_failures) + "/" +
                      std::to_string(config.b) + " iterations failed";
    for (const auto& e : result.failure_log) msg += "\n  " + e;
    throw EstimationFailure(msg);
  }
  result.tau_pe = percentile_interval(pe, config.lo_pct, config.hi_pct);
  result.tau_ge = percentile_interval(ge, config.lo_pct, config.hi_pct);
  result.s_star = percentile_interval(ss, config.lo_pct, config.hi_pct);
  return result;
}

ContrastIntervals contrast_cluster_bootstrap(const Eigen::MatrixXd& contrasts,
                                             const std::vector<int>& regime, int b,
                                             int block_length, std::uint64_t seed, double lo_pct,
                                             double hi_pct) {
  const int n = static_cast<int>(contrasts.rows());
  const int t_periods = static_cast<int>(contrasts.cols());
  if (static_cast<int>(regime.size()) != t_periods)
    throw InvalidParameter("regime labels must match the number of periods");
  block_length = std::clamp(block_length, 1, t_periods);

  std::vector<double> pe_draws, ge_draws, agg_draws, delta_draws;
  pe_draws.reserve(static_cast<std::size_t>(b));
  ge_draws.reserve(static_cast<std::size_t>(b));
  agg_draws.reserve(static_cast<std::size_t>(b));
  delta_draws.reserve(static_cast<std::size_t>(b));

  std::vector<int> loc(static_cast<std::size_t>(n));
  std::vector<int> per(static_cast<std::size_t>(t_periods));
  for (int it = 0; it < b; ++it) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(it)));
    for (int i = 0; i < n; ++i) loc[static_cast<std::size_t>(i)] = static_cast<int>(rng.uniform_index(n));
    int filled = 0;
    while (filled < t_periods) {
      const int start = static_cast<int>(rng.uniform_index(t_periods));
      for (int j = 0; j < block_length && filled < t_periods; ++j)
        per[static_cast<std::size_t>(filled++)] = (start + j) % t_periods;
    }
    double pe_sum = 0.0, ge_sum = 0.0;
    long pe_n = 0, ge_n = 0;
    for (int tt = 0; tt < t_periods; ++tt) {
      const int t = per[static_cast<std::size_t>(tt)];
      const bool ge = regime[static_cast<std::size_t>(t)] == 1;
      double col = 0.0;
      for (int ii = 0; ii < n; ++ii) col += contrasts(loc[static_cast<std::size_t>(ii)], t);
      if (ge) {
        ge_sum += col;
        ge_n += n;
      } else {
        pe_sum += col;
        pe_n += n;
      }
    }
    const double total = pe_sum + ge_sum;
    agg_draws.push_back(total / static_cast<double>(pe_n + ge_n));
    if (pe_n > 0) pe_draws.push_back(pe_sum / pe_n);
    if (ge_n > 0) ge_draws.push_back(ge_sum / ge_n);
    if (pe_n > 0 && ge_n > 0) delta_draws.push_back(ge_sum / ge_n - pe_sum / pe_n);
  }

  ContrastIntervals out;
  out.tau_pe = percentile_interval(pe_draws, lo_pct, hi_pct);
  out.tau_ge = percentile_interval(ge_draws, lo_pct, hi_pct);
  out.tau_aggregate = percentile_interval(agg_draws, lo_pct, hi_pct);
  out.delta_ge = percentile_interval(delta_draws, lo_pct, hi_pct);
  return out;
}

}  // namespace spillover
