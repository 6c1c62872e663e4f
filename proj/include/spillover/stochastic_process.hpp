#pragma once

#include <cstdint>
#include <optional>
#include <vector>

namespace spillover {

/// Jump size distribution. Exponential with the given mean is the default;
/// a degenerate (constant) size is available for tests.
enum class JumpSizeKind { Exponential, Constant };

/// Parameters of the spillover process
///   dS = mu(S) dt + sigma dW + jump(dN),
/// with mu(S) = drift_a + drift_b * S, Poisson jump intensity
/// lambda(S) = lambda0 * (1 + max(S,0))^state_dep_exponent and positive jump
/// sizes. When `compensated` is set, lambda(S) * E[jump] * dt is subtracted
/// from the drift increment so jumps are mean-zero innovations.
struct JumpDiffusionParams {
  double s0 = 0.0;
  double drift_a = 0.0;
  double drift_b = 0.0;
  double sigma = 0.0;
  double jump_intensity_lambda0 = 0.0;
  JumpSizeKind jump_size_kind = JumpSizeKind::Exponential;
  double jump_mean = 1.0;  // mean of the jump size distribution
  double state_dep_exponent = 0.0;
  bool compensated = false;

  void validate() const;
  double drift(double s) const { return drift_a + drift_b * s; }
  double intensity(double s) const;
  double mean_jump() const { return jump_mean; }
};

struct SpilloverPath {
  std::vector<double> times;   // strictly increasing grid, starts at 0
  std::vector<double> values;  // S_t at each grid point
  std::vector<double> jump_times;
  std::vector<double> jump_sizes;
  std::uint64_t seed = 0;
};

/// Scalar threshold s* on the spillover state; S >= s* is the
/// general-equilibrium side.
struct BoundarySpec {
  double s_star = 0.0;
  void validate() const;
};

/// Euler-Maruyama discretization with per-step Bernoulli jump thinning.
/// Identical (params, horizon, dt, seed) gives a bit-identical path at any
/// thread count. The stream discipline consumes one normal per step plus, if
/// and only if lambda(S) > 0, one uniform (and one size draw on a jump), so
/// lambda0 = 0 is bit-identical to a pure Brownian-drift simulation.
SpilloverPath simulate_path(const JumpDiffusionParams& params, double horizon, double dt,
                            std::uint64_t seed);

/// Earliest grid time with S_t >= s_star; empty if never crossed.
std::optional<double> first_passage_time(const SpilloverPath& path, const BoundarySpec& boundary);

struct CrossingEstimate {
  double probability = 0.0;
  double std_error = 0.0;
};

/// Monte Carlo crossing probability over n_paths independent paths (path i
/// uses the substream derived from (seed, i)). `threads` as in parallel_for.
CrossingEstimate crossing_probability_mc(const JumpDiffusionParams& params,
                                         const BoundarySpec& boundary, double horizon,
                                         int n_paths, std::uint64_t seed, double dt = 0.01,
                                         int threads = 0);

/// Serial reference for the Monte Carlo kernel; tests assert it matches the
/// parallel version bit-for-bit.
CrossingEstimate crossing_probability_mc_serial(const JumpDiffusionParams& params,
                                                const BoundarySpec& boundary, double horizon,
                                                int n_paths, std::uint64_t seed, double dt = 0.01);

/// First-order decomposition of the crossing probability for constant jump
/// intensity: 1 - exp(-lambda0 * T) * P(tau_c > T), with the continuous-part
/// survival from the inverse-Gaussian law of drifted Brownian motion. This is
/// an O(lambda) approximation: jump size and post-jump diffusion interactions
/// are dropped, so it is only quantitatively tight for small lambda0 * T.
double crossing_probability_decomposed(const JumpDiffusionParams& params,
                                       const BoundarySpec& boundary, double horizon);

/// P(first passage of s0 + mu t + sigma W_t to level b <= t), b > s0.
/// Handles sigma = 0 (deterministic drift) as a step function.
double drifted_brownian_passage_cdf(double s0, double mu, double sigma, double b, double t);

}  // namespace spillover
