#include "spillover/stochastic_process.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "spillover/errors.hpp"
#include "spillover/parallel.hpp"
#include "spillover/rng.hpp"

namespace spillover {

void JumpDiffusionParams::validate() const {
  auto finite = [](double x) { return std::isfinite(x); };
  if (!finite(s0) || !finite(drift_a) || !finite(drift_b) || !finite(sigma) ||
      !finite(jump_intensity_lambda0) || !finite(jump_mean) || !finite(state_dep_exponent)) {
    throw InvalidParameter("jump-diffusion parameters must be finite");
  }
  if (sigma < 0.0) throw InvalidParameter("sigma must be >= 0");
  if (jump_intensity_lambda0 < 0.0) throw InvalidParameter("lambda0 must be >= 0");
  if (state_dep_exponent < 0.0) throw InvalidParameter("state_dep_exponent must be >= 0");
  if (jump_mean <= 0.0) throw InvalidParameter("jump mean must be > 0");
}

double JumpDiffusionParams::intensity(double s) const {
  if (jump_intensity_lambda0 == 0.0) return 0.0;
  if (state_dep_exponent == 0.0) return jump_intensity_lambda0;
  return jump_intensity_lambda0 * std::pow(1.0 + std::max(s, 0.0), state_dep_exponent);
}

void BoundarySpec::validate() const {
  if (!std::isfinite(s_star)) throw InvalidParameter("boundary s_star must be finite");
}

namespace {

double draw_jump_size(const JumpDiffusionParams& p, Rng& rng) {
  switch (p.jump_size_kind) {
    case JumpSizeKind::Exponential:
      return rng.exponential(p.jump_mean);
    case JumpSizeKind::Constant:
      return p.jump_mean;
  }
  return p.jump_mean;
}

// One Euler step shared by the path and first-passage kernels.
inline double em_step(const JumpDiffusionParams& p, double s, double dt, double sqrt_dt, Rng& rng,
                      double* jump_out) {
  double drift = p.drift(s);
  const double lam = p.intensity(s);
  if (p.compensated && lam > 0.0) drift -= lam * p.mean_jump();
  double next = s + drift * dt + p.sigma * sqrt_dt * rng.normal();
  if (jump_out) *jump_out = 0.0;
  if (lam > 0.0) {
    const double p_jump = std::min(1.0, lam * dt);
    if (rng.uniform() < p_jump) {
      const double size = draw_jump_size(p, rng);
      next += size;
      if (jump_out) *jump_out = size;
    }
  }
  return next;
}

}  // namespace

SpilloverPath simulate_path(const JumpDiffusionParams& params, double horizon, double dt,
                            std::uint64_t seed) {
  params.validate();
  if (!(horizon > 0.0) || !std::isfinite(horizon)) throw InvalidParameter("horizon must be > 0");
  if (!(dt > 0.0) || dt > horizon) throw InvalidParameter("need 0 < dt <= horizon");

  const auto n_steps = static_cast<std::size_t>(std::llround(horizon / dt));
  SpilloverPath path;
  path.seed = seed;
  path.times.reserve(n_steps + 1);
  path.values.reserve(n_steps + 1);
  path.times.push_back(0.0);
  path.values.push_back(params.s0);

  Rng rng(seed);
  const double sqrt_dt = std::sqrt(dt);
  double s = params.s0;
  for (std::size_t k = 1; k <= n_steps; ++k) {
    double jump = 0.0;
    s = em_step(params, s, dt, sqrt_dt, rng, &jump);
    const double t = static_cast<double>(k) * dt;
    path.times.push_back(t);
    path.values.push_back(s);
    if (jump > 0.0) {
      path.jump_times.push_back(t);
      path.jump_sizes.push_back(jump);
    }
  }
  return path;
}

std::optional<double> first_passage_time(const SpilloverPath& path, const BoundarySpec& boundary) {
  boundary.validate();
  for (std::size_t i = 0; i < path.values.size(); ++i) {
    if (path.values[i] >= boundary.s_star) return path.times[i];
  }
  return std::nullopt;
}

namespace {

// Streaming first-passage simulation: early exit at crossing, no path storage.
bool crosses_within(const JumpDiffusionParams& p, const BoundarySpec& b, double horizon, double dt,
                    std::uint64_t seed) {
  if (p.s0 >= b.s_star) return true;
  const auto n_steps = static_cast<std::size_t>(std::llround(horizon / dt));
  Rng rng(seed);
  const double sqrt_dt = std::sqrt(dt);
  double s = p.s0;
  for (std::size_t k = 1; k <= n_steps; ++k) {
    s = em_step(p, s, dt, sqrt_dt, rng, nullptr);
    if (s >= b.s_star) return true;
  }
  return false;
}

CrossingEstimate crossing_impl(const JumpDiffusionParams& params, const BoundarySpec& boundary,
                               double horizon, int n_paths, std::uint64_t seed, double dt,
                               int threads) {
  params.validate();
  boundary.validate();
  if (n_paths < 100) throw InvalidParameter("crossing_probability_mc needs n_paths >= 100");
  if (!(horizon > 0.0)) throw InvalidParameter("horizon must be > 0");
  if (!(dt > 0.0) || dt > horizon) throw InvalidParameter("need 0 < dt <= horizon");

  std::vector<unsigned char> hit(static_cast<std::size_t>(n_paths), 0);
  parallel_for(n_paths, threads, [&](std::int64_t i) {
    hit[static_cast<std::size_t>(i)] =
        crosses_within(params, boundary, horizon, dt, derive_seed(seed, static_cast<std::uint64_t>(i)))
            ? 1
            : 0;
  });
  std::size_t n_hit = 0;
  for (unsigned char h : hit) n_hit += h;
  CrossingEstimate est;
  est.probability = static_cast<double>(n_hit) / static_cast<double>(n_paths);
  est.std_error = std::sqrt(est.probability * (1.0 - est.probability) / static_cast<double>(n_paths));
  return est;
}

}  // namespace

CrossingEstimate crossing_probability_mc(const JumpDiffusionParams& params,
                                         const BoundarySpec& boundary, double horizon, int n_paths,
                                         std::uint64_t seed, double dt, int threads) {
  return crossing_impl(params, boundary, horizon, n_paths, seed, dt, threads);
}

CrossingEstimate crossing_probability_mc_serial(const JumpDiffusionParams& params,
                                                const BoundarySpec& boundary, double horizon,
                                                int n_paths, std::uint64_t seed, double dt) {
  return crossing_impl(params, boundary, horizon, n_paths, seed, dt, 1);
}

double drifted_brownian_passage_cdf(double s0, double mu, double sigma, double b, double t) {
  if (b <= s0) return 1.0;
  if (t <= 0.0) return 0.0;
  const double a = b - s0;
  if (sigma <= 0.0) {
    // Deterministic drift: crossing at a / mu when mu > 0.
    if (mu <= 0.0) return 0.0;
    return (mu * t >= a) ? 1.0 : 0.0;
  }
  const double sq = sigma * std::sqrt(t);
  const double term1 = normal_cdf((mu * t - a) / sq);
  // exp(2 mu a / sigma^2) can overflow for strongly negative drift; the
  // product with the tail CDF stays finite, so compute it in log space.
  const double log_term2 = 2.0 * mu * a / (sigma * sigma);
  const double phi = normal_cdf((-mu * t - a) / sq);
  double term2 = 0.0;
  if (phi > 0.0) {
    const double log_prod = log_term2 + std::log(phi);
    term2 = (log_prod < 700.0) ? std::exp(log_prod) : std::numeric_limits<double>::infinity();
  }
  const double p = term1 + term2;
  return std::clamp(p, 0.0, 1.0);
}

double crossing_probability_decomposed(const JumpDiffusionParams& params,
                                       const BoundarySpec& boundary, double horizon) {
  params.validate();
  boundary.validate();
  if (params.state_dep_exponent != 0.0 && params.jump_intensity_lambda0 > 0.0) {
    throw UnsupportedConfiguration(
        "crossing_probability_decomposed requires constant jump intensity");
  }
  if (params.drift_b != 0.0) {
    throw UnsupportedConfiguration(
        "crossing_probability_decomposed requires state-independent drift");
  }
  if (params.s0 >= boundary.s_star) return 1.0;
  double mu = params.drift_a;
  if (params.compensated && params.jump_intensity_lambda0 > 0.0) {
    mu -= params.jump_intensity_lambda0 * params.mean_jump();
  }
  const double surv_cont =
      1.0 - drifted_brownian_passage_cdf(params.s0, mu, params.sigma, boundary.s_star, horizon);
  return 1.0 - std::exp(-params.jump_intensity_lambda0 * horizon) * surv_cont;
}

}  // namespace spillover
