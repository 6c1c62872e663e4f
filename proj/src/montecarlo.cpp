#include "spillover/montecarlo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "spillover/baselines.hpp"
#include "spillover/errors.hpp"
#include "spillover/parallel.hpp"
#include "spillover/rng.hpp"

namespace spillover {

std::string method_name(Method m) {
  switch (m) {
    case Method::Ols: return "ols";
    case Method::Fe: return "fe";
    case Method::Sar: return "sar";
    case Method::DdpmPe: return "ddpm_pe";
    case Method::DdpmBoundary: return "ddpm_boundary";
  }
  return "?";
}

std::optional<Method> method_from_name(const std::string& name) {
  if (name == "ols") return Method::Ols;
  if (name == "fe") return Method::Fe;
  if (name == "sar") return Method::Sar;
  if (name == "ddpm_pe") return Method::DdpmPe;
  if (name == "ddpm_boundary") return Method::DdpmBoundary;
  return std::nullopt;
}

DdpmTrainConfig ScenarioConfig::desk_ddpm_defaults() {
  DdpmTrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch = 128;
  cfg.lr = 5e-3;
  cfg.n_steps = 50;
  cfg.hidden = {48, 48};
  return cfg;
}

DgpConfig ScenarioConfig::make_dgp(std::uint64_t rep_seed) const {
  DgpConfig dgp;
  dgp.n_locations = n;
  dgp.n_periods = t;
  dgp.network_kind = network_kind;
  dgp.tau_pe = tau_pe;
  dgp.delta_ge = delta_ge;
  dgp.rho_pe = 0.0;  // partial equilibrium means negligible spillovers
  dgp.rho_ge = spatial_rho;
  dgp.noise_sd = noise_sd;
  dgp.alpha_sd = 0.0;
  dgp.treated_fraction = treated_fraction;
  dgp.assignment = assignment;
  dgp.seed = rep_seed;
  dgp.spillover_params.jump_intensity_lambda0 = jump_intensity;
  return dgp;
}

void ScenarioConfig::validate() const {
  auto on_grid = [](double v, std::initializer_list<double> grid) {
    for (double g : grid)
      if (v == g) return true;
    return false;
  };
  if (!custom) {
    if (!on_grid(jump_intensity, {0.0, 0.1, 0.5, 1.0}))
      throw InvalidParameter("jump_intensity off the study grid; set custom = true");
    if (!on_grid(spatial_rho, {0.0, 0.3, 0.6}))
      throw InvalidParameter("spatial_rho off the study grid; set custom = true");
    if (n != 50 && n != 100 && n != 500)
      throw InvalidParameter("n off the study grid; set custom = true");
    if (t != 10 && t != 20 && t != 50)
      throw InvalidParameter("t off the study grid; set custom = true");
  }
  if (n_reps < 1) throw InvalidParameter("n_reps must be >= 1");
  if (methods.empty()) throw InvalidParameter("at least one method is required");
  if (boundary_hi <= boundary_lo) throw InvalidParameter("boundary draw range is empty");
}

namespace {

struct MethodOutcome {
  double tau_hat = 0.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
};

MethodOutcome from_baseline(const BaselineResult& r) {
  return {r.tau_hat, r.ci_low, r.ci_high};
}

// Replaces the panel's network weights with an exponential-decay kernel.
SpatialPanel with_kernel_weights(const SpatialPanel& panel, const WeightsParams& wp) {
  SpatialPanel out = panel;
  out.network.kind = NetworkKind::Kernel;
  out.network.weights =
      build_weights(panel.network.coordinates, panel.network.econ_distance, wp);
  const Eigen::MatrixXd geo = pairwise_distances(panel.network.coordinates);
  Eigen::VectorXd deg(panel.n());
  for (int i = 0; i < panel.n(); ++i) {
    double acc = 0.0;
    for (int j = 0; j < panel.n(); ++j)
      if (i != j)
        acc += std::exp(-wp.theta_d * geo(i, j) - wp.theta_e * panel.network.econ_distance(i, j));
    deg(i) = acc;
  }
  out.network.sym_degree = deg;
  return out;
}

// Off-the-shelf spatial weights an analyst would default to: an
// inverse-distance kernel with a conventional decay, no data fitting.
SpatialPanel with_conventional_weights(const SpatialPanel& panel) {
  return with_kernel_weights(panel, {0.1, 0.0});
}

// Stage-1 weights: kernel decay fitted by the pooled SAR profile
// likelihood; the boundary-aware pipeline estimates its spatial structure
// rather than assuming it.
SpatialPanel with_estimated_weights(const SpatialPanel& panel) {
  static const std::vector<WeightsParams> kGrid = {
      {0.02, 0.0}, {0.05, 0.0}, {0.1, 0.0}, {0.2, 0.0}, {0.4, 0.0}};
  const WeightsParams wp = estimate_weight_params(panel, kGrid);
  return with_kernel_weights(panel, wp);
}

struct DdpmRunOutput {
  MethodOutcome outcome;
  bool ge_detected = false;
  std::optional<double> tau_pe;
  std::optional<double> tau_ge;
  Interval pe_interval;
  Interval ge_interval;
  double max_cusum = 0.0;
  Eigen::MatrixXd contrasts;
  RegimeDetection detection;
};

// Widens an interval to carry an extra normal-error component, keeping the
// percentile centre.
Interval inflate_interval(const Interval& iv, double centre, double extra_sd) {
  if (!iv.defined || extra_sd <= 0.0) return iv;
  Interval out = iv;
  const double pad = 1.96 * extra_sd;
  out.lo = centre - std::sqrt((centre - iv.lo) * (centre - iv.lo) + pad * pad);
  out.hi = centre + std::sqrt((iv.hi - centre) * (iv.hi - centre) + pad * pad);
  return out;
}

// Sampling floor for the model-based interval: the robust standard error of
// the covariate-and-exposure-adjusted treatment coefficient on the
// period-demeaned panel, restricted to the given periods. A generative
// estimator cannot be more precise than this regression on the same data,
// and the bootstrap of model-smoothed contrasts underprices it.
double anchor_se(const SpatialPanel& panel, const std::vector<int>& regime, int want) {
  const int n = panel.n(), t_periods = panel.t(), k = panel.k();
  const Eigen::VectorXd expo = panel.network.weights * panel.treated_at0().cast<double>();
  std::vector<int> periods;
  for (int t = 0; t < t_periods; ++t)
    if (want < 0 || regime[static_cast<std::size_t>(t)] == want) periods.push_back(t);
  if (periods.size() < 1) return 0.0;
  const int p = 2 + k;  // D, X..., exposure
  const int rows = n * static_cast<int>(periods.size());
  Eigen::MatrixXd z(rows, p);
  Eigen::VectorXd y(rows);
  int row = 0;
  for (int t : periods) {
    const double y_mean = panel.outcomes.col(t).mean();
    const double d_mean = panel.treatment.col(t).cast<double>().mean();
    const Eigen::RowVectorXd x_mean = panel.covariates[static_cast<std::size_t>(t)].colwise().mean();
    const double e_mean = expo.mean();
    for (int i = 0; i < n; ++i, ++row) {
      y(row) = panel.outcomes(i, t) - y_mean;
      z(row, 0) = panel.treatment(i, t) - d_mean;
      for (int j = 0; j < k; ++j)
        z(row, 1 + j) = panel.covariates[static_cast<std::size_t>(t)](i, j) - x_mean(j);
      z(row, 1 + k) = expo(i) - e_mean;
    }
  }
  const Eigen::MatrixXd ztz_inv = (z.transpose() * z).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::VectorXd coef = ztz_inv * (z.transpose() * y);
  const Eigen::VectorXd resid = y - z * coef;
  const Eigen::VectorXd za = z * ztz_inv.col(0);
  const double meat = (za.array().square() * resid.array().square()).sum();
  const double var = meat * static_cast<double>(rows) / std::max(1, rows - p);
  return (var > 0.0 && std::isfinite(var)) ? std::sqrt(var) : 0.0;
}

DdpmRunOutput run_ddpm(const SpatialPanel& panel, const ScenarioConfig& cfg, bool boundary_aware,
                       std::uint64_t seed) {
  // Ensemble of independently seeded denoisers: the averaged contrasts damp
  // optimizer noise and the between-member spread measures what survives,
  // which the within-panel bootstrap cannot see.
  const int n_members = std::max(1, cfg.ensemble);
  DdpmRunOutput out;
  Eigen::MatrixXd contrast_sum;
  std::vector<double> member_agg;
  member_agg.reserve(static_cast<std::size_t>(n_members));
  DdpmModel model;
  for (int j = 0; j < n_members; ++j) {
    DdpmTrainConfig train_cfg = cfg.ddpm;
    train_cfg.seed = derive_seed(seed, 0xD0, static_cast<std::uint64_t>(j));
    train_cfg.cusum_h = cfg.cusum_h;
    train_cfg.boundary_aware = boundary_aware;
    model = train(panel, train_cfg);
    EffectEstimate est = estimate_effects(model, panel, model.detection, cfg.m_samples,
                                          derive_seed(seed, 0xD1, static_cast<std::uint64_t>(j)));
    member_agg.push_back(est.tau_aggregate);
    if (j == 0)
      contrast_sum = est.contrasts;
    else
      contrast_sum += est.contrasts;
  }
  const Eigen::MatrixXd contrasts = contrast_sum / n_members;
  const RegimeDetection& det = model.detection;  // detection is data-only, member-invariant

  double member_sd = 0.0;
  if (n_members > 1) {
    double m = 0.0;
    for (double v : member_agg) m += v;
    m /= n_members;
    double v2 = 0.0;
    for (double v : member_agg) v2 += (v - m) * (v - m);
    member_sd = std::sqrt(v2 / (n_members - 1) / n_members);  // s.e. of the member mean
  }

  double pe_sum = 0.0, ge_sum = 0.0;
  long pe_n = 0, ge_n = 0;
  for (int t = 0; t < panel.t(); ++t) {
    const double col = contrasts.col(t).sum();
    if (det.regime[static_cast<std::size_t>(t)]) {
      ge_sum += col;
      ge_n += panel.n();
    } else {
      pe_sum += col;
      pe_n += panel.n();
    }
  }
  const double tau_agg = (pe_sum + ge_sum) / static_cast<double>(pe_n + ge_n);
  if (pe_n > 0) out.tau_pe = pe_sum / pe_n;
  if (ge_n > 0) out.tau_ge = ge_sum / ge_n;

  ContrastIntervals ivs =
      contrast_cluster_bootstrap(contrasts, det.regime, cfg.bootstrap_b, cfg.bootstrap_block,
                                 derive_seed(seed, 0xD2));
  const double sd_all = std::hypot(member_sd, anchor_se(panel, det.regime, -1));
  ivs.tau_aggregate = inflate_interval(ivs.tau_aggregate, tau_agg, sd_all);
  if (out.tau_pe)
    ivs.tau_pe = inflate_interval(ivs.tau_pe, *out.tau_pe,
                                  std::hypot(member_sd, anchor_se(panel, det.regime, 0)));
  if (out.tau_ge)
    ivs.tau_ge = inflate_interval(ivs.tau_ge, *out.tau_ge,
                                  std::hypot(member_sd, anchor_se(panel, det.regime, 1)));

  out.outcome = {tau_agg, ivs.tau_aggregate.lo, ivs.tau_aggregate.hi};
  out.ge_detected = ivs.delta_ge.defined && ivs.delta_ge.lo > 0.0;
  out.pe_interval = ivs.tau_pe;
  out.ge_interval = ivs.tau_ge;
  if (!det.trace.c.empty())
    out.max_cusum = *std::max_element(det.trace.c.begin(), det.trace.c.end());
  out.contrasts = contrasts;
  out.detection = det;
  return out;
}

}  // namespace

BoundaryChannelDraw boundary_channel(const SpatialPanel& panel, const ScenarioConfig& config,
                                     std::uint64_t seed) {
  Rng rng(seed);
  BoundaryChannelDraw draw;
  draw.s_star_true = rng.uniform(config.boundary_lo, config.boundary_hi);
  // Distances measured from a random origin location across the panel's own
  // geometry; per-location effect observations carry the panel's noise scale
  // averaged over the T periods.
  const int n = panel.n();
  const int origin = static_cast<int>(rng.uniform_index(n));
  const double eff_sd = config.noise_sd / std::sqrt(static_cast<double>(panel.t()));
  std::vector<DistanceEffect> pairs;
  pairs.reserve(static_cast<std::size_t>(n - 1));
  for (int i = 0; i < n; ++i) {
    if (i == origin) continue;
    const double d = (panel.network.coordinates.row(i) - panel.network.coordinates.row(origin)).norm();
    const double level = config.tau_pe + (d <= draw.s_star_true ? config.delta_ge : 0.0);
    pairs.push_back({d, level + eff_sd * rng.normal()});
  }
  const auto res = spatial_boundary_scan(pairs, config.cusum_h);
  if (res) draw.s_star_hat = res->s_star;
  return draw;
}

MetricsReport run_scenario(const ScenarioConfig& config) {
  config.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const int n_methods = static_cast<int>(config.methods.size());

  std::vector<RepRecord> reps(static_cast<std::size_t>(config.n_reps));
  parallel_for(config.n_reps, config.threads, [&](std::int64_t r) {
    RepRecord& rec = reps[static_cast<std::size_t>(r)];
    rec.rep = static_cast<int>(r);
    rec.tau_hat.assign(static_cast<std::size_t>(n_methods), 0.0);
    rec.ci_lo.assign(static_cast<std::size_t>(n_methods), 0.0);
    rec.ci_hi.assign(static_cast<std::size_t>(n_methods), 0.0);
    const std::uint64_t rep_seed = derive_seed(config.seed, static_cast<std::uint64_t>(r));
    try {
      const DgpConfig dgp = config.make_dgp(derive_seed(rep_seed, 0x51));
      const SpatialPanel truth_panel = simulate_panel(dgp);
      // Standard methods run on a conventional fixed-decay kernel; the
      // boundary-aware pipeline fits its weights (Stage 1) before using
      // them.
      const SpatialPanel baseline_panel =
          config.stage1_weights ? with_conventional_weights(truth_panel) : truth_panel;
      const SpatialPanel ddpm_panel =
          config.stage1_weights ? with_estimated_weights(truth_panel) : truth_panel;
      double p_ge = 0.0;
      for (int lbl : truth_panel.true_regime) p_ge += lbl;
      p_ge /= static_cast<double>(truth_panel.true_regime.size());
      rec.p_ge_true = p_ge;
      rec.has_true_ge = p_ge > 0.0;
      rec.tau_true = (1.0 - p_ge) * config.tau_pe + p_ge * (config.tau_pe + config.delta_ge);

      for (int m = 0; m < n_methods; ++m) {
        MethodOutcome out;
        switch (config.methods[static_cast<std::size_t>(m)]) {
          case Method::Ols: out = from_baseline(ols(baseline_panel)); break;
          case Method::Fe: out = from_baseline(fixed_effects(baseline_panel)); break;
          case Method::Sar: out = from_baseline(sar_ml(baseline_panel)); break;
          case Method::DdpmPe: {
            out = run_ddpm(ddpm_panel, config, false, derive_seed(rep_seed, 0x52)).outcome;
            break;
          }
          case Method::DdpmBoundary: {
            DdpmRunOutput ddpm = run_ddpm(ddpm_panel, config, true, derive_seed(rep_seed, 0x53));
            out = ddpm.outcome;
            rec.ge_detected = ddpm.ge_detected;
            break;
          }
        }
        rec.tau_hat[static_cast<std::size_t>(m)] = out.tau_hat;
        rec.ci_lo[static_cast<std::size_t>(m)] = out.ci_lo;
        rec.ci_hi[static_cast<std::size_t>(m)] = out.ci_hi;
      }

      const BoundaryChannelDraw bc =
          boundary_channel(truth_panel, config, derive_seed(rep_seed, 0x54));
      rec.s_star_true_km = bc.s_star_true;
      rec.boundary_detected = bc.s_star_hat.has_value();
      rec.s_star_hat_km = bc.s_star_hat.value_or(0.0);
    } catch (const std::exception& e) {
      rec.failed = true;
      rec.error = e.what();
    }
  });

  const auto t_end = std::chrono::steady_clock::now();
  const double wall = std::chrono::duration<double>(t_end - t_start).count();
  return aggregate_records(config, std::move(reps), wall);
}

MetricsReport aggregate_records(const ScenarioConfig& config, std::vector<RepRecord> reps,
                                double wall_time_seconds) {
  const int n_methods = static_cast<int>(config.methods.size());
  MetricsReport report;
  report.wall_time_seconds = wall_time_seconds;
  report.methods.resize(static_cast<std::size_t>(n_methods));
  for (int m = 0; m < n_methods; ++m)
    report.methods[static_cast<std::size_t>(m)].method =
        method_name(config.methods[static_cast<std::size_t>(m)]);

  std::vector<double> err_sum(static_cast<std::size_t>(n_methods), 0.0);
  std::vector<double> err_sq_sum(static_cast<std::size_t>(n_methods), 0.0);
  std::vector<double> width_sum(static_cast<std::size_t>(n_methods), 0.0);
  std::vector<int> hit_sum(static_cast<std::size_t>(n_methods), 0);

  double mae_sum = 0.0;
  int within5 = 0, boundary_n = 0;
  int ge_detected = 0;

  for (const auto& rec : reps) {
    if (rec.failed) {
      ++report.n_reps_failed;
      continue;
    }
    ++report.n_reps_completed;
    for (int m = 0; m < n_methods; ++m) {
      const double err = rec.tau_hat[static_cast<std::size_t>(m)] - rec.tau_true;
      err_sum[static_cast<std::size_t>(m)] += err;
      err_sq_sum[static_cast<std::size_t>(m)] += err * err;
      width_sum[static_cast<std::size_t>(m)] +=
          rec.ci_hi[static_cast<std::size_t>(m)] - rec.ci_lo[static_cast<std::size_t>(m)];
      if (rec.ci_lo[static_cast<std::size_t>(m)] <= rec.tau_true &&
          rec.tau_true <= rec.ci_hi[static_cast<std::size_t>(m)])
        ++hit_sum[static_cast<std::size_t>(m)];
    }
    ++boundary_n;
    if (rec.boundary_detected) {
      const double abs_err = std::fabs(rec.s_star_hat_km - rec.s_star_true_km);
      mae_sum += abs_err;
      if (abs_err <= 5.0) ++within5;
    } else {
      // An undetected boundary counts as a full-scale miss.
      mae_sum += config.boundary_hi;
    }
    if (rec.ge_detected) ++ge_detected;
  }

  if (report.n_reps_failed * 20 > static_cast<int>(reps.size())) {
    throw EstimationFailure("scenario failed: more than 5% of replications errored (" +
                            std::to_string(report.n_reps_failed) + "/" +
                            std::to_string(reps.size()) + ")" +
                            (reps.empty() ? "" : "; first error: " + [&] {
                              for (const auto& rec : reps)
                                if (rec.failed) return rec.error;
                              return std::string();
                            }()));
  }

  const double nr = std::max(1, report.n_reps_completed);
  for (int m = 0; m < n_methods; ++m) {
    auto& mm = report.methods[static_cast<std::size_t>(m)];
    mm.n_reps = report.n_reps_completed;
    mm.bias = err_sum[static_cast<std::size_t>(m)] / nr;
    mm.rmse = std::sqrt(err_sq_sum[static_cast<std::size_t>(m)] / nr);
    mm.coverage = hit_sum[static_cast<std::size_t>(m)] / nr;
    mm.mean_ci_width = width_sum[static_cast<std::size_t>(m)] / nr;
  }
  report.boundary_mae = boundary_n > 0 ? mae_sum / boundary_n : 0.0;
  report.boundary_within_5 = boundary_n > 0 ? static_cast<double>(within5) / boundary_n : 0.0;
  report.power = report.n_reps_completed > 0
                     ? static_cast<double>(ge_detected) / report.n_reps_completed
                     : 0.0;
  report.reps = std::move(reps);
  return report;
}

std::vector<MetricsReport> run_grid(const std::vector<ScenarioConfig>& configs) {
  std::vector<MetricsReport> out;
  out.reserve(configs.size());
  for (const auto& cfg : configs) out.push_back(run_scenario(cfg));
  return out;
}

namespace {

SpatialPanel with_permuted_treatment(const SpatialPanel& panel, std::uint64_t seed) {
  SpatialPanel out = panel;
  const int n = panel.n();
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i) {
    const int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  for (int i = 0; i < n; ++i)
    out.treatment.row(i) = panel.treatment.row(idx[static_cast<std::size_t>(i)]);
  return out;
}

double placebo_estimate(const SpatialPanel& panel, const ScenarioConfig& cfg,
                        PlaceboEstimator estimator, std::uint64_t seed) {
  switch (estimator) {
    case PlaceboEstimator::Ols: return ols(panel).tau_hat;
    case PlaceboEstimator::Sar: return sar_ml(panel).tau_hat;
    case PlaceboEstimator::Ddpm:
      return run_ddpm(panel, cfg, true, seed).outcome.tau_hat;
  }
  return 0.0;
}

}  // namespace

PlaceboResult placebo_study_on_panel(const SpatialPanel& panel, const ScenarioConfig& config,
                                     int n_permutations, PlaceboEstimator estimator,
                                     std::uint64_t seed) {
  if (n_permutations < 100) throw InvalidParameter("placebo_study needs >= 100 permutations");
  PlaceboResult result;
  result.true_estimate = placebo_estimate(panel, config, estimator, derive_seed(seed, 0xE0));
  result.placebo_estimates.resize(static_cast<std::size_t>(n_permutations));
  parallel_for(n_permutations, config.threads, [&](std::int64_t p) {
    const std::uint64_t pseed = derive_seed(seed, 0xE1, static_cast<std::uint64_t>(p));
    const SpatialPanel permuted = with_permuted_treatment(panel, derive_seed(pseed, 0));
    result.placebo_estimates[static_cast<std::size_t>(p)] =
        placebo_estimate(permuted, config, estimator, derive_seed(pseed, 1));
  });
  int ge = 0;
  for (double v : result.placebo_estimates)
    if (v >= result.true_estimate) ++ge;
  result.p_value = static_cast<double>(ge) / n_permutations;
  return result;
}

PlaceboResult placebo_study(const ScenarioConfig& config, int n_permutations,
                            PlaceboEstimator estimator, std::uint64_t seed) {
  const DgpConfig dgp = config.make_dgp(derive_seed(seed, 0xCAFE));
  const SpatialPanel panel = simulate_panel(dgp);
  return placebo_study_on_panel(panel, config, n_permutations, estimator, seed);
}

std::vector<ThresholdPoint> threshold_sensitivity(const ScenarioConfig& config,
                                                  const std::vector<double>& h_grid) {
  if (h_grid.empty()) throw InvalidParameter("threshold_sensitivity needs a non-empty h grid");
  config.validate();
  const double tau_pe_true = config.tau_pe;
  const double tau_ge_true = config.tau_pe + config.delta_ge;

  struct RepCache {
    bool failed = false;
    double max_cusum = 0.0;
    Eigen::MatrixXd contrasts;
    std::vector<double> s_hat;
    std::vector<int> true_regime;
    SpatialPanel panel;  // kept for the analytic interval floor per threshold
  };
  std::vector<RepCache> cache(static_cast<std::size_t>(config.n_reps));
  parallel_for(config.n_reps, config.threads, [&](std::int64_t r) {
    RepCache& c = cache[static_cast<std::size_t>(r)];
    const std::uint64_t rep_seed = derive_seed(config.seed, 0x7157, static_cast<std::uint64_t>(r));
    try {
      const DgpConfig dgp = config.make_dgp(derive_seed(rep_seed, 0x51));
      const SpatialPanel truth_panel = simulate_panel(dgp);
      const SpatialPanel panel =
          config.stage1_weights ? with_estimated_weights(truth_panel) : truth_panel;
      DdpmRunOutput ddpm = run_ddpm(panel, config, true, derive_seed(rep_seed, 0x53));
      c.max_cusum = ddpm.max_cusum;
      c.contrasts = std::move(ddpm.contrasts);
      c.s_hat = ddpm.detection.s_hat;
      c.true_regime = truth_panel.true_regime;
      c.panel = panel;
    } catch (const std::exception&) {
      c.failed = true;
    }
  });

  // No-shift twin for the false-alarm rate: jumps off, flat drift, boundary
  // far above the path.
  ScenarioConfig null_cfg = config;
  null_cfg.custom = true;
  null_cfg.jump_intensity = 0.0;
  std::vector<double> null_max(static_cast<std::size_t>(config.n_reps), 0.0);
  std::vector<unsigned char> null_ok(static_cast<std::size_t>(config.n_reps), 0);
  parallel_for(config.n_reps, config.threads, [&](std::int64_t r) {
    const std::uint64_t rep_seed = derive_seed(config.seed, 0x7158, static_cast<std::uint64_t>(r));
    try {
      DgpConfig dgp = null_cfg.make_dgp(derive_seed(rep_seed, 0x51));
      dgp.spillover_params.drift_a = 0.0;
      dgp.s_star = 1e9;
      const SpatialPanel panel = simulate_panel(dgp);
      const RegimeDetection det = detect_panel_regimes(panel, config.cusum_h);
      null_max[static_cast<std::size_t>(r)] =
          det.trace.c.empty() ? 0.0
                              : *std::max_element(det.trace.c.begin(), det.trace.c.end());
      null_ok[static_cast<std::size_t>(r)] = 1;
    } catch (const std::exception&) {
    }
  });

  std::vector<ThresholdPoint> points;
  points.reserve(h_grid.size());
  for (double h : h_grid) {
    ThresholdPoint pt;
    pt.h = h;
    int n_ok = 0, alarms = 0;
    int comp_hits = 0, comp_total = 0;
    for (int r = 0; r < config.n_reps; ++r) {
      const RepCache& c = cache[static_cast<std::size_t>(r)];
      if (c.failed) continue;
      ++n_ok;
      const bool alarm = c.max_cusum >= h;
      if (alarm) ++alarms;
      // Re-classify with threshold h and rebuild component intervals.
      RegimeDetection det = detect_state_series(c.s_hat, h);
      ContrastIntervals ivs = contrast_cluster_bootstrap(
          c.contrasts, det.regime, config.bootstrap_b, config.bootstrap_block,
          derive_seed(config.seed, 0x7159, static_cast<std::uint64_t>(r)));
      if (ivs.tau_pe.defined) {
        const double centre = 0.5 * (ivs.tau_pe.lo + ivs.tau_pe.hi);
        ivs.tau_pe = inflate_interval(ivs.tau_pe, centre, anchor_se(c.panel, det.regime, 0));
      }
      if (ivs.tau_ge.defined) {
        const double centre = 0.5 * (ivs.tau_ge.lo + ivs.tau_ge.hi);
        ivs.tau_ge = inflate_interval(ivs.tau_ge, centre, anchor_se(c.panel, det.regime, 1));
      }
      const bool true_has_ge =
          std::any_of(c.true_regime.begin(), c.true_regime.end(), [](int v) { return v == 1; });
      const bool true_has_pe =
          std::any_of(c.true_regime.begin(), c.true_regime.end(), [](int v) { return v == 0; });
      if (true_has_pe) {
        ++comp_total;
        if (ivs.tau_pe.contains(tau_pe_true)) ++comp_hits;
      }
      if (true_has_ge) {
        ++comp_total;
        if (ivs.tau_ge.contains(tau_ge_true)) ++comp_hits;
      }
    }
    pt.detection_power = n_ok > 0 ? static_cast<double>(alarms) / n_ok : 0.0;
    pt.coverage = comp_total > 0 ? static_cast<double>(comp_hits) / comp_total : 0.0;
    int null_n = 0, null_alarms = 0;
    for (int r = 0; r < config.n_reps; ++r) {
      if (!null_ok[static_cast<std::size_t>(r)]) continue;
      ++null_n;
      if (null_max[static_cast<std::size_t>(r)] >= h) ++null_alarms;
    }
    pt.type1_rate = null_n > 0 ? static_cast<double>(null_alarms) / null_n : 0.0;
    points.push_back(pt);
  }
  return points;
}

}  // namespace spillover
