#include "spillover/ddpm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "spillover/errors.hpp"
#include "spillover/rng.hpp"

using nlohmann::json;

namespace spillover {

NoiseSchedule NoiseSchedule::linear(int n_steps) {
  if (n_steps < 2) throw InvalidParameter("schedule needs at least 2 steps");
  NoiseSchedule s;
  s.n_steps = n_steps;
  s.beta.resize(n_steps);
  s.alpha_bar.resize(n_steps);
  const double scale = 1000.0 / n_steps;
  const double b0 = 1e-4 * scale;
  const double b1 = 0.02 * scale;
  double prod = 1.0;
  for (int t = 0; t < n_steps; ++t) {
    double b = b0 + (b1 - b0) * (n_steps == 1 ? 0.0 : static_cast<double>(t) / (n_steps - 1));
    b = std::min(b, 0.999);
    s.beta(t) = b;
    prod *= (1.0 - b);
    s.alpha_bar(t) = prod;
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  if (beta.size() != n_steps || alpha_bar.size() != n_steps)
    throw InvalidParameter("schedule arrays must have n_steps entries");
  for (int t = 0; t < n_steps; ++t) {
    if (!(beta(t) > 0.0 && beta(t) < 1.0)) throw InvalidParameter("beta_t must lie in (0,1)");
    if (t > 0 && !(alpha_bar(t) < alpha_bar(t - 1)))
      throw InvalidParameter("alpha_bar must be strictly decreasing");
  }
}

void TreatmentEncodingParams::validate() const {
  if (!std::isfinite(gamma_pe) || !std::isfinite(gamma_ge) || !std::isfinite(phi) ||
      !std::isfinite(s_star))
    throw InvalidParameter("encoding parameters must be finite");
}

double psi(double d, double s, const TreatmentEncodingParams& params) {
  if (s < params.s_star) return params.gamma_pe * d;
  return params.gamma_ge * d + params.phi * (s - params.s_star);
}

ForwardSample forward_sample(double x0, int t, const NoiseSchedule& schedule, double eps) {
  if (t < 1 || t > schedule.n_steps) throw InvalidParameter("diffusion step t out of range");
  const double ab = schedule.alpha_bar(t - 1);
  ForwardSample out;
  out.x_t = std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
  out.target_eps = eps;
  return out;
}

double RegimeDetection::p_ge() const {
  if (regime.empty()) return 0.0;
  double acc = 0.0;
  for (int r : regime) acc += r;
  return acc / static_cast<double>(regime.size());
}

namespace {

// Reference models for the temporal detector. A head-window fit breaks down
// when the regime shift lands inside the head, so the null model is fitted
// on the prefix up to a preliminary change-point estimate (the classic
// at-most-one-change statistic), with the noise scale taken robustly from
// the differenced series so a single level shift cannot inflate it.
CusumConfig panel_detector_models(const std::vector<double>& state, double h) {
  const std::size_t n = state.size();
  const double grand = std::accumulate(state.begin(), state.end(), 0.0) / n;
  double best_stat = -1.0;
  std::size_t split = std::max<std::size_t>(3, n / 5);
  double cum = 0.0;
  for (std::size_t c = 1; c + 1 < n; ++c) {
    cum += state[c - 1] - grand;
    const double frac = static_cast<double>(c) / n;
    const double stat = std::fabs(cum) / std::sqrt(frac * (1.0 - frac));
    if (c >= 2 && stat > best_stat) {
      best_stat = stat;
      split = c;
    }
  }
  split = std::max<std::size_t>(3, std::min(split, n - 2));

  double mu0 = 0.0;
  for (std::size_t t = 0; t < split; ++t) mu0 += state[t];
  mu0 /= static_cast<double>(split);

  std::vector<double> adiff;
  adiff.reserve(n - 1);
  for (std::size_t t = 1; t < n; ++t) adiff.push_back(std::fabs(state[t] - state[t - 1]));
  std::nth_element(adiff.begin(), adiff.begin() + adiff.size() / 2, adiff.end());
  const double mad = adiff[adiff.size() / 2];
  const double sd = std::max(1.4826 * mad / std::sqrt(2.0), 1e-9);

  return CusumConfig::from_models({mu0, sd}, {mu0 + sd, sd}, h);
}

}  // namespace

RegimeDetection detect_state_series(const std::vector<double>& state, double h) {
  RegimeDetection det;
  det.s_hat = state;
  det.regime.assign(state.size(), 0);
  if (state.size() < 5) return det;

  const CusumConfig cfg = panel_detector_models(state, h);
  det.trace = trace_series(state, cfg);
  if (!det.trace.crossed_at) {
    det.s_star_hat = *std::max_element(state.begin(), state.end()) + 1.0;  // above the data
    return det;
  }
  // Change-point estimate: last zero of the statistic before the alarm.
  const std::size_t alarm = *det.trace.crossed_at - 1;  // 0-based index
  std::size_t onset = 0;
  for (std::size_t i = alarm; i-- > 0;) {
    if (det.trace.c[i] == 0.0) {
      onset = i + 1;
      break;
    }
  }
  det.onset = onset;
  for (std::size_t t = onset; t < state.size(); ++t) det.regime[t] = 1;
  // Boundary value: midpoint of the regime means in state units.
  double pre = 0.0, post = 0.0;
  std::size_t n_pre = 0, n_post = 0;
  for (std::size_t t = 0; t < state.size(); ++t) {
    if (det.regime[t]) {
      post += state[t];
      ++n_post;
    } else {
      pre += state[t];
      ++n_pre;
    }
  }
  if (n_pre > 0 && n_post > 0) {
    det.s_star_hat = 0.5 * (pre / n_pre + post / n_post);
  } else {
    det.s_star_hat = state[onset];
  }
  return det;
}

RegimeDetection detect_panel_regimes(const SpatialPanel& panel, double h) {
  const int n = panel.n(), t_periods = panel.t(), k = panel.k();
  // Per-period state summary: cross-sectional mean outcome with the
  // covariate signal regressed out (pooled OLS on [1, D, X]), so the
  // regime shift is not swamped by covariate sampling noise.
  Eigen::VectorXd beta_x = Eigen::VectorXd::Zero(k);
  if (k > 0) {
    const int p = 2 + k;
    Eigen::MatrixXd ztz = Eigen::MatrixXd::Zero(p, p);
    Eigen::VectorXd zty = Eigen::VectorXd::Zero(p);
    Eigen::VectorXd zrow(p);
    for (int t = 0; t < t_periods; ++t)
      for (int i = 0; i < n; ++i) {
        zrow(0) = 1.0;
        zrow(1) = panel.treatment(i, t);
        for (int j = 0; j < k; ++j) zrow(2 + j) = panel.covariates[static_cast<std::size_t>(t)](i, j);
        ztz.noalias() += zrow * zrow.transpose();
        zty.noalias() += zrow * panel.outcomes(i, t);
      }
    const Eigen::VectorXd coef = ztz.ldlt().solve(zty);
    beta_x = coef.tail(k);
  }
  std::vector<double> m(static_cast<std::size_t>(t_periods));
  for (int t = 0; t < t_periods; ++t) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      double adj = panel.outcomes(i, t);
      for (int j = 0; j < k; ++j)
        adj -= beta_x(j) * panel.covariates[static_cast<std::size_t>(t)](i, j);
      acc += adj;
    }
    m[static_cast<std::size_t>(t)] = acc / n;
  }
  // Standardize so the state feature is scale-free.
  double mean = std::accumulate(m.begin(), m.end(), 0.0) / m.size();
  double var = 0.0;
  for (double v : m) var += (v - mean) * (v - mean);
  var /= std::max<std::size_t>(1, m.size() - 1);
  const double sd = std::sqrt(std::max(var, 1e-24));
  for (double& v : m) v = (v - mean) / sd;
  return detect_state_series(m, h);
}

Eigen::VectorXd treatment_exposure(const SpatialPanel& panel) {
  return panel.network.weights * panel.treated_at0().cast<double>();
}

Standardizer Standardizer::fit(const Eigen::VectorXd& values) {
  Standardizer s;
  s.mean = values.mean();
  const double var =
      (values.array() - s.mean).square().sum() / std::max<Eigen::Index>(1, values.size() - 1);
  s.sd = std::sqrt(std::max(var, 1e-24));
  return s;
}

void DdpmModel::fill_features(double* row, double x_t, int t, double d,
                              const double* z_standardized, double exposure, double s_hat) const {
  const double tf = static_cast<double>(t) / schedule.n_steps;
  row[0] = x_t;
  row[1] = tf;
  row[2] = std::sin(2.0 * M_PI * tf);
  row[3] = std::cos(2.0 * M_PI * tf);
  row[4] = d;
  for (int j = 0; j < n_covariates; ++j) row[5 + j] = z_standardized[j];
  row[5 + n_covariates] = exposure;
  row[6 + n_covariates] = s_hat;
  row[7 + n_covariates] = psi(d, s_hat, encoding);
}

namespace {

struct ObsTable {
  Eigen::VectorXd x0;        // standardized outcomes
  Eigen::VectorXd d;
  RowMatrixXd z;             // standardized covariates
  Eigen::VectorXd exposure;
  Eigen::VectorXd s_hat;     // per-obs state feature
  std::vector<int> period;   // period of each observation
  int n_obs() const { return static_cast<int>(x0.size()); }
};

ObsTable build_obs_table(const SpatialPanel& panel, const DdpmModel& model,
                         const RegimeDetection& det) {
  const int n = panel.n(), t_periods = panel.t(), k = panel.k();
  ObsTable tab;
  const int total = n * t_periods;
  tab.x0.resize(total);
  tab.d.resize(total);
  tab.z.resize(total, k);
  tab.exposure.resize(total);
  tab.s_hat.resize(total);
  tab.period.resize(static_cast<std::size_t>(total));
  const Eigen::VectorXd expo = treatment_exposure(panel);
  int row = 0;
  for (int t = 0; t < t_periods; ++t) {
    for (int i = 0; i < n; ++i, ++row) {
      tab.x0(row) = model.x_std.fwd(panel.outcomes(i, t) - model.period_offset(t));
      tab.d(row) = panel.treatment(i, t);
      for (int j = 0; j < k; ++j)
        tab.z(row, j) = model.z_std[static_cast<std::size_t>(j)].fwd(
            panel.covariates[static_cast<std::size_t>(t)](i, j));
      tab.exposure(row) = expo(i);
      tab.s_hat(row) = det.s_hat[static_cast<std::size_t>(t)];
      tab.period[static_cast<std::size_t>(row)] = t;
    }
  }
  return tab;
}

double snr_weight(const NoiseSchedule& s, int t, double lo, double hi) {
  const double ab = s.alpha_bar(t - 1);
  return std::clamp(ab / (1.0 - ab), lo, hi);
}

}  // namespace

DdpmModel train(const SpatialPanel& panel, const DdpmTrainConfig& config) {
  if (panel.n() == 0 || panel.t() == 0) throw InvalidParameter("train: empty panel");
  if (config.batch < 1 || config.epochs < 0) throw InvalidParameter("train: bad budget");

  DdpmModel model;
  model.schedule = NoiseSchedule::linear(config.n_steps);
  model.n_covariates = panel.k();

  // Period means are removed first (they cancel in all contrasts and strip
  // the regime-level shift the denoiser would otherwise have to carry), then
  // the centered outcomes set the scale.
  model.period_offset.resize(panel.t());
  for (int t = 0; t < panel.t(); ++t) model.period_offset(t) = panel.outcomes.col(t).mean();
  Eigen::VectorXd centered(panel.outcomes.size());
  {
    int pos = 0;
    for (int t = 0; t < panel.t(); ++t)
      for (int i = 0; i < panel.n(); ++i)
        centered(pos++) = panel.outcomes(i, t) - model.period_offset(t);
  }
  model.x_std = Standardizer::fit(centered);
  model.z_std.resize(static_cast<std::size_t>(panel.k()));
  for (int j = 0; j < panel.k(); ++j) {
    Eigen::VectorXd col(panel.n() * panel.t());
    int pos = 0;
    for (int t = 0; t < panel.t(); ++t)
      for (int i = 0; i < panel.n(); ++i)
        col(pos++) = panel.covariates[static_cast<std::size_t>(t)](i, j);
    model.z_std[static_cast<std::size_t>(j)] = Standardizer::fit(col);
  }

  model.detection = detect_panel_regimes(panel, config.cusum_h);
  if (!config.boundary_aware) {
    // PE-only variant: the state stays as a covariate but the encoding never
    // switches and every period is classified partial-equilibrium.
    std::fill(model.detection.regime.begin(), model.detection.regime.end(), 0);
    model.detection.onset.reset();
    if (!model.detection.s_hat.empty())
      model.detection.s_star_hat =
          *std::max_element(model.detection.s_hat.begin(), model.detection.s_hat.end()) + 1.0;
  }
  model.encoding.s_star = model.detection.s_star_hat;

  const ObsTable tab = build_obs_table(panel, model, model.detection);
  const int n_obs = tab.n_obs();

  std::vector<int> layers;
  layers.push_back(model.feature_dim());
  for (int hsz : config.hidden) layers.push_back(hsz);
  layers.push_back(1);
  model.denoiser = Mlp(layers, derive_seed(config.seed, 0xDD01), true);

  Rng rng(derive_seed(config.seed, 0xDD02));
  const int batch = std::min(config.batch, n_obs);

  // The denoised outcome is parameterized as
  //   f = sqrt(ab) x_t + (1 - ab) h(x_t, t, conditioning).
  // sqrt(ab) x_t is the posterior mean under the standardized marginal
  // prior, and (1 - ab) is the conjugate posterior loading of the
  // conditional mean, so a t-flat network output h = E[x0 | conditioning]
  // is already the exact solution for Gaussian data; the network only
  // refines it. The noise prediction eps_hat = (x_t - sqrt(ab) f) /
  // sqrt(1 - ab) stays analytic and the spec loss
  // lambda(t) ||eps - eps_hat||^2 equals lambda(t) SNR(t) ||x0 - f||^2.
  // An underfit h collapses draws toward the data marginal instead of
  // amplifying noise through the chain.
  auto eval_loss = [&](std::uint64_t eval_seed) {
    // Deterministic held-in loss probe over the whole table.
    Rng erng(eval_seed);
    RowMatrixXd input(n_obs, model.feature_dim());
    Eigen::VectorXd target_x0(n_obs), weight(n_obs);
    for (int r = 0; r < n_obs; ++r) {
      const int t = 1 + static_cast<int>(erng.uniform_index(model.schedule.n_steps));
      const double eps = erng.normal();
      const ForwardSample fs = forward_sample(tab.x0(r), t, model.schedule, eps);
      model.fill_features(&input(r, 0), fs.x_t, t, tab.d(r), &tab.z(r, 0), tab.exposure(r),
                          tab.s_hat(r));
      const double ab = model.schedule.alpha_bar(t - 1);
      // Work in h-space: f - x0 = (1 - ab) (h - target_h).
      target_x0(r) = (tab.x0(r) - std::sqrt(ab) * fs.x_t) / (1.0 - ab);
      weight(r) = snr_weight(model.schedule, t, config.snr_clip_lo, config.snr_clip_hi) * ab *
                  (1.0 - ab);
    }
    const Eigen::VectorXd pred = model.denoiser.forward(input).col(0);
    return (weight.array() * (pred - target_x0).array().square()).mean();
  };
  const std::uint64_t probe_seed = derive_seed(config.seed, 0xDD03);
  model.training_log.initial_loss = eval_loss(probe_seed);

  Eigen::VectorXd theta = model.denoiser.parameters_flat();
  Adam opt(model.denoiser.parameter_count(), config.lr);
  const int total_epochs = std::max(config.epochs, 1);
  // Tail averaging over the last quarter of training damps optimizer noise.
  Eigen::VectorXd theta_tail = Eigen::VectorXd::Zero(theta.size());
  long tail_count = 0;
  const int tail_start = config.epochs - std::max(1, config.epochs / 4);

  // Per-batch mean-residual monitor (the boundary detector running inside
  // training). Models are fitted on the leading batches.
  std::vector<double> monitor_stream;
  std::optional<CusumConfig> monitor_cfg;
  CusumState monitor_state;
  std::size_t batch_counter = 0;
  const std::size_t monitor_warmup = 20;

  std::vector<int> order(static_cast<std::size_t>(n_obs));
  std::iota(order.begin(), order.end(), 0);

  RowMatrixXd input(batch, model.feature_dim());
  Eigen::VectorXd target(batch), weight(batch);
  Eigen::VectorXd grad(theta.size());
  RowMatrixXd grad_out;
  Mlp::Workspace ws;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    // Cosine decay to a tenth of the base rate settles the late epochs.
    const double progress = static_cast<double>(epoch) / total_epochs;
    opt.set_lr(config.lr * (0.55 + 0.45 * std::cos(M_PI * progress)));
    // Fisher-Yates shuffle with the run rng.
    for (int i = n_obs - 1; i > 0; --i) {
      const int j = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(i + 1)));
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }
    double epoch_loss = 0.0;
    int n_batches = 0;
    for (int start = 0; start + batch <= n_obs; start += batch, ++n_batches) {
      for (int b = 0; b < batch; ++b) {
        const int r = order[static_cast<std::size_t>(start + b)];
        const int t = 1 + static_cast<int>(rng.uniform_index(model.schedule.n_steps));
        const double eps = rng.normal();
        const ForwardSample fs = forward_sample(tab.x0(r), t, model.schedule, eps);
        model.fill_features(&input(b, 0), fs.x_t, t, tab.d(r), &tab.z(r, 0), tab.exposure(r),
                            tab.s_hat(r));
        const double ab = model.schedule.alpha_bar(t - 1);
        target(b) = (tab.x0(r) - std::sqrt(ab) * fs.x_t) / (1.0 - ab);
        weight(b) = snr_weight(model.schedule, t, config.snr_clip_lo, config.snr_clip_hi) * ab *
                    (1.0 - ab);
      }
      model.denoiser.forward_cached(input, ws);
      const Eigen::VectorXd resid = ws.output.col(0) - target;
      const double loss = (weight.array() * resid.array().square()).mean();
      if (!std::isfinite(loss)) {
        std::ostringstream oss;
        oss << "ddpm training diverged: non-finite loss at epoch " << epoch << ", batch "
            << n_batches << " (lr=" << config.lr << ", batch=" << batch << ")";
        throw EstimationFailure(oss.str());
      }
      epoch_loss += loss;

      grad.setZero();
      grad_out = (2.0 / batch) * (weight.array() * resid.array()).matrix();
      model.denoiser.backward(ws, grad_out, grad);
      opt.step(theta, grad);
      model.denoiser.set_parameters_flat(theta);
      if (epoch >= tail_start) {
        theta_tail += theta;
        ++tail_count;
      }

      // Boundary monitor over the raw residual mean.
      const double batch_resid_mean = resid.mean();
      ++batch_counter;
      if (!monitor_cfg) {
        monitor_stream.push_back(batch_resid_mean);
        if (monitor_stream.size() >= monitor_warmup) {
          monitor_cfg = CusumConfig::estimate_from_stream(monitor_stream, config.cusum_h, 1.0,
                                                          monitor_warmup);
        }
      } else {
        monitor_state = update(monitor_state, batch_resid_mean, *monitor_cfg);
        if (monitor_state.crossed_at && model.training_log.boundary_crossings.empty()) {
          model.training_log.boundary_crossings.push_back(batch_counter);
        }
      }
    }
    model.training_log.epoch_loss.push_back(n_batches > 0 ? epoch_loss / n_batches : 0.0);
  }
  if (tail_count > 0) model.denoiser.set_parameters_flat(theta_tail / tail_count);
  model.training_log.final_loss = config.epochs > 0 ? eval_loss(probe_seed)
                                                    : model.training_log.initial_loss;
  model.trained = true;
  return model;
}

Eigen::VectorXd sample_counterfactual(const DdpmModel& model, double d, const Eigen::VectorXd& z,
                                      double exposure, double s_hat, int m_samples,
                                      std::uint64_t seed) {
  if (!model.trained) throw InvalidParameter("sample_counterfactual: model is not trained");
  if (m_samples < 1) throw InvalidParameter("m_samples must be >= 1");
  if (z.size() != model.n_covariates) throw InvalidParameter("covariate dimension mismatch");

  Eigen::VectorXd zs(model.n_covariates);
  for (int j = 0; j < model.n_covariates; ++j)
    zs(j) = model.z_std[static_cast<std::size_t>(j)].fwd(z(j));

  const int t_steps = model.schedule.n_steps;
  Eigen::VectorXd draws(m_samples);
  RowMatrixXd input(1, model.feature_dim());
  for (int m = 0; m < m_samples; ++m) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(m)));
    double x = rng.normal();
    for (int t = t_steps; t >= 1; --t) {
      model.fill_features(&input(0, 0), x, t, d, zs.data(), exposure, s_hat);
      const double ab = model.schedule.alpha_bar(t - 1);
      const double x0_hat = std::clamp(
          std::sqrt(ab) * x + (1.0 - ab) * model.denoiser.forward(input)(0, 0), -8.0, 8.0);
      const double beta = model.schedule.beta(t - 1);
      const double ab_prev = (t > 1) ? model.schedule.alpha_bar(t - 2) : 1.0;
      // Posterior mean given (x_t, x0_hat); variance beta_t, final step
      // noiseless.
      x = (std::sqrt(ab_prev) * beta * x0_hat +
           std::sqrt(1.0 - beta) * (1.0 - ab_prev) * x) /
          (1.0 - ab);
      if (t > 1) x += std::sqrt(beta) * rng.normal();
    }
    draws(m) = model.x_std.inv(x) + model.period_offset.mean();
  }
  return draws;
}

EffectEstimate estimate_effects(const DdpmModel& model, const SpatialPanel& panel,
                                const RegimeDetection& detection, int m_samples,
                                std::uint64_t seed) {
  if (!model.trained) throw InvalidParameter("estimate_effects: model is not trained");
  if (m_samples < 1) throw InvalidParameter("m_samples must be >= 1");
  const int n = panel.n(), t_periods = panel.t(), k = panel.k();
  const int n_obs = n * t_periods;
  const int t_steps = model.schedule.n_steps;

  // Standardized conditioning per observation.
  RowMatrixXd zs(n_obs, k);
  Eigen::VectorXd expo_obs(n_obs), s_obs(n_obs);
  std::vector<int> period(static_cast<std::size_t>(n_obs));
  const Eigen::VectorXd expo = treatment_exposure(panel);
  {
    int row = 0;
    for (int t = 0; t < t_periods; ++t)
      for (int i = 0; i < n; ++i, ++row) {
        for (int j = 0; j < k; ++j)
          zs(row, j) = model.z_std[static_cast<std::size_t>(j)].fwd(
              panel.covariates[static_cast<std::size_t>(t)](i, j));
        expo_obs(row) = expo(i);
        s_obs(row) = detection.s_hat[static_cast<std::size_t>(t)];
        period[static_cast<std::size_t>(row)] = t;
      }
  }

  // Batched reverse chains for both arms with common random numbers: the
  // initial noise and every reverse kick are shared across d = 1 and d = 0.
  // Both arms ride in one stacked batch; the conditioning columns are
  // assembled once and only the noisy outcome and time embedding move.
  Eigen::VectorXd contrast_sum = Eigen::VectorXd::Zero(n_obs);
  RowMatrixXd input(2 * n_obs, model.feature_dim());
  for (int r = 0; r < n_obs; ++r) {
    model.fill_features(&input(r, 0), 0.0, 1, 1.0, &zs(r, 0), expo_obs(r), s_obs(r));
    model.fill_features(&input(n_obs + r, 0), 0.0, 1, 0.0, &zs(r, 0), expo_obs(r), s_obs(r));
  }
  Eigen::VectorXd kick(n_obs);
  Mlp::Workspace ws;
  for (int m = 0; m < m_samples; ++m) {
    Rng rng(derive_seed(seed, 0xCF00, static_cast<std::uint64_t>(m)));
    for (int r = 0; r < n_obs; ++r) {
      const double z0 = rng.normal();
      input(r, 0) = z0;
      input(n_obs + r, 0) = z0;
    }
    for (int t = t_steps; t >= 1; --t) {
      const double beta = model.schedule.beta(t - 1);
      const double ab = model.schedule.alpha_bar(t - 1);
      const double ab_prev = (t > 1) ? model.schedule.alpha_bar(t - 2) : 1.0;
      const double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
      const double cx = std::sqrt(1.0 - beta) * (1.0 - ab_prev) / (1.0 - ab);
      const double tf = static_cast<double>(t) / t_steps;
      const double temb1 = std::sin(2.0 * M_PI * tf);
      const double temb2 = std::cos(2.0 * M_PI * tf);
      for (int r = 0; r < 2 * n_obs; ++r) {
        input(r, 1) = tf;
        input(r, 2) = temb1;
        input(r, 3) = temb2;
      }
      model.denoiser.forward_cached(input, ws);
      const double sb = (t > 1) ? std::sqrt(beta) : 0.0;
      if (t > 1)
        for (int r = 0; r < n_obs; ++r) kick(r) = rng.normal();
      const double sq_ab = std::sqrt(ab);
      const double load = 1.0 - ab;
      for (int r = 0; r < 2 * n_obs; ++r) {
        const double f = std::clamp(sq_ab * input(r, 0) + load * ws.output(r, 0), -8.0, 8.0);
        const double k2 = (t > 1) ? sb * kick(r < n_obs ? r : r - n_obs) : 0.0;
        input(r, 0) = c0 * f + cx * input(r, 0) + k2;
      }
    }
    for (int r = 0; r < n_obs; ++r)
      contrast_sum(r) += model.x_std.sd * (input(r, 0) - input(n_obs + r, 0));
  }

  EffectEstimate est;
  est.m_samples = m_samples;
  est.contrasts.resize(n, t_periods);
  {
    int row = 0;
    for (int t = 0; t < t_periods; ++t)
      for (int i = 0; i < n; ++i, ++row) est.contrasts(i, t) = contrast_sum(row) / m_samples;
  }
  est.per_unit = est.contrasts.rowwise().mean();

  double pe_sum = 0.0, ge_sum = 0.0;
  long pe_n = 0, ge_n = 0;
  for (int t = 0; t < t_periods; ++t) {
    const bool ge = detection.regime[static_cast<std::size_t>(t)] == 1;
    const double col_sum = est.contrasts.col(t).sum();
    if (ge) {
      ge_sum += col_sum;
      ge_n += n;
    } else {
      pe_sum += col_sum;
      pe_n += n;
    }
  }
  if (pe_n > 0) est.tau_pe = pe_sum / pe_n;
  if (ge_n > 0) est.tau_ge = ge_sum / ge_n;
  est.p_ge = static_cast<double>(ge_n) / (pe_n + ge_n);
  if (est.tau_pe && est.tau_ge) {
    est.tau_aggregate = (1.0 - est.p_ge) * *est.tau_pe + est.p_ge * *est.tau_ge;
  } else if (est.tau_pe) {
    est.tau_aggregate = *est.tau_pe;
    est.single_regime_fallback = true;
  } else {
    est.tau_aggregate = est.tau_ge.value_or(0.0);
    est.single_regime_fallback = true;
  }
  return est;
}

std::string save_model_json(const DdpmModel& model) {
  json j;
  j["format_version"] = 1;
  j["layer_sizes"] = model.denoiser.layer_sizes();
  j["skip"] = model.denoiser.has_skip();
  const Eigen::VectorXd theta = model.denoiser.parameters_flat();
  j["parameters"] = std::vector<double>(theta.data(), theta.data() + theta.size());
  j["schedule"]["n_steps"] = model.schedule.n_steps;
  j["schedule"]["beta"] =
      std::vector<double>(model.schedule.beta.data(),
                          model.schedule.beta.data() + model.schedule.beta.size());
  j["encoding"] = {{"gamma_pe", model.encoding.gamma_pe},
                   {"gamma_ge", model.encoding.gamma_ge},
                   {"phi", model.encoding.phi},
                   {"s_star", model.encoding.s_star}};
  j["x_std"] = {{"mean", model.x_std.mean}, {"sd", model.x_std.sd}};
  j["period_offset"] = std::vector<double>(model.period_offset.data(),
                                           model.period_offset.data() + model.period_offset.size());
  json zj = json::array();
  for (const auto& s : model.z_std) zj.push_back({{"mean", s.mean}, {"sd", s.sd}});
  j["z_std"] = zj;
  j["n_covariates"] = model.n_covariates;
  j["trained"] = model.trained;
  j["detection"] = {{"s_hat", model.detection.s_hat},
                    {"regime", model.detection.regime},
                    {"s_star_hat", model.detection.s_star_hat}};
  return j.dump(2);
}

DdpmModel load_model_json(const std::string& text) {
  json j = json::parse(text);
  if (j.at("format_version").get<int>() != 1)
    throw InvalidParameter("unsupported model format version");
  DdpmModel model;
  const auto sizes = j.at("layer_sizes").get<std::vector<int>>();
  model.denoiser = Mlp(sizes, 0, j.value("skip", false));
  const auto params = j.at("parameters").get<std::vector<double>>();
  model.denoiser.set_parameters_flat(
      Eigen::Map<const Eigen::VectorXd>(params.data(), static_cast<Eigen::Index>(params.size())));
  model.schedule.n_steps = j.at("schedule").at("n_steps").get<int>();
  const auto beta = j.at("schedule").at("beta").get<std::vector<double>>();
  model.schedule.beta =
      Eigen::Map<const Eigen::VectorXd>(beta.data(), static_cast<Eigen::Index>(beta.size()));
  model.schedule.alpha_bar.resize(model.schedule.n_steps);
  double prod = 1.0;
  for (int t = 0; t < model.schedule.n_steps; ++t) {
    prod *= 1.0 - model.schedule.beta(t);
    model.schedule.alpha_bar(t) = prod;
  }
  model.encoding.gamma_pe = j.at("encoding").at("gamma_pe").get<double>();
  model.encoding.gamma_ge = j.at("encoding").at("gamma_ge").get<double>();
  model.encoding.phi = j.at("encoding").at("phi").get<double>();
  model.encoding.s_star = j.at("encoding").at("s_star").get<double>();
  model.x_std.mean = j.at("x_std").at("mean").get<double>();
  model.x_std.sd = j.at("x_std").at("sd").get<double>();
  const auto po = j.at("period_offset").get<std::vector<double>>();
  model.period_offset =
      Eigen::Map<const Eigen::VectorXd>(po.data(), static_cast<Eigen::Index>(po.size()));
  for (const auto& sj : j.at("z_std")) {
    Standardizer s;
    s.mean = sj.at("mean").get<double>();
    s.sd = sj.at("sd").get<double>();
    model.z_std.push_back(s);
  }
  model.n_covariates = j.at("n_covariates").get<int>();
  model.trained = j.at("trained").get<bool>();
  model.detection.s_hat = j.at("detection").at("s_hat").get<std::vector<double>>();
  model.detection.regime = j.at("detection").at("regime").get<std::vector<int>>();
  model.detection.s_star_hat = j.at("detection").at("s_star_hat").get<double>();
  return model;
}

}  // namespace spillover
