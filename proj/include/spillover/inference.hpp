#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "spillover/ddpm.hpp"
#include "spillover/spatial_dgp.hpp"

namespace spillover {

enum class BootstrapMode { ResampleLocations, TimeBlocks };

struct BootstrapConfig {
  int b = 200;            // bootstrap iterations
  int m = 2;              // diffusion samples per unit in inner refits
  BootstrapMode mode = BootstrapMode::ResampleLocations;
  int block_length = 4;   // time-blocks mode
  double lo_pct = 2.5;
  double hi_pct = 97.5;
  std::uint64_t seed = 0;
  std::optional<DdpmTrainConfig> budget;  // reduced-epoch inner refit config
  int threads = 0;
  void validate() const;
};

struct PipelineEstimate {
  std::optional<double> tau_pe;
  std::optional<double> tau_ge;
  std::optional<double> s_star;
};

/// End-to-end estimator applied to a (resampled) panel with a derived seed.
using Pipeline = std::function<PipelineEstimate(const SpatialPanel&, std::uint64_t)>;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool defined = false;
  bool contains(double x) const { return defined && lo <= x && x <= hi; }
  double width() const { return hi - lo; }
};

struct BootstrapResult {
  Interval tau_pe;
  Interval tau_ge;
  Interval s_star;
  std::vector<PipelineEstimate> draws;  // in iteration order
  int n_failures = 0;
  std::vector<std::string> failure_log;
};

/// Resamples N locations with replacement (each keeping its full time
/// series); the weights base is re-indexed with repetition, re-symmetrized
/// and row-normalized.
SpatialPanel resample_locations(const SpatialPanel& panel, std::uint64_t seed);

/// Concatenates randomly chosen circular time blocks of the given length up
/// to T periods, applied to all locations jointly. Ground-truth period
/// arrays are re-indexed alongside the data.
SpatialPanel block_bootstrap_resample(const SpatialPanel& panel, int block_length,
                                      std::uint64_t seed);

/// B iterations of resample -> refit -> re-detect -> re-estimate, with
/// percentile intervals taken as order statistics of the stored draws.
/// Fails (bootstrap-unstable) when more than 20% of iterations throw.
BootstrapResult hierarchical_bootstrap(const SpatialPanel& panel, const Pipeline& pipeline,
                                       const BootstrapConfig& config);

/// Percentile endpoints as order statistics (ceil rule) of the draws.
Interval percentile_interval(std::vector<double> draws, double lo_pct, double hi_pct);

struct ContrastIntervals {
  Interval tau_pe;
  Interval tau_ge;
  Interval tau_aggregate;
  Interval delta_ge;  // tau_ge - tau_pe
};

/// Within-replication interval for the diffusion estimator: cluster
/// resampling of locations crossed with circular time-block resampling of
/// periods (labels travel with their periods), recomputing the regime
/// averages from the cached per-observation contrasts. This propagates
/// sampling and regime-frequency uncertainty without refitting the model.
ContrastIntervals contrast_cluster_bootstrap(const Eigen::MatrixXd& contrasts,
                                             const std::vector<int>& regime, int b,
                                             int block_length, std::uint64_t seed,
                                             double lo_pct = 2.5, double hi_pct = 97.5);

}  // namespace spillover
