#pragma once

#include <cstddef>
#include <optional>
#include <vector>

namespace spillover {

struct GaussianModel {
  double mean = 0.0;
  double sd = 1.0;
};

/// One-sided CUSUM detector configuration. g is the log-likelihood ratio
/// between the ge_model (f1) and pe_model (f0); k is the drift allowance and
/// h the decision threshold, both in log-likelihood units.
struct CusumConfig {
  double k = 0.0;
  double h = 5.0;
  GaussianModel pe_model;  // f0
  GaussianModel ge_model;  // f1

  void validate() const;

  /// Classical allowance: half the mean llr gap between the two models.
  static CusumConfig from_models(const GaussianModel& f0, const GaussianModel& f1, double h = 5.0);

  /// Default model estimation when f0/f1 are not supplied: f0 is fit on the
  /// leading fraction of the stream (at least min_head points) and f1 is f0
  /// shifted up by one standard deviation.
  static CusumConfig estimate_from_stream(const std::vector<double>& series, double h = 5.0,
                                          double head_fraction = 0.2, std::size_t min_head = 5);
};

struct CusumState {
  double c = 0.0;       // current statistic, always >= 0
  std::size_t n = 0;    // observations consumed
  std::optional<std::size_t> crossed_at;  // latched 1-based index of first crossing
};

/// log f1(y) - log f0(y) for the configured Gaussian pair.
double llr(double y, const CusumConfig& config);

/// C_n = max(0, C_{n-1} + g(y) - k). The crossing (C_n >= h) latches
/// crossed_at on its first occurrence; the statistic keeps accumulating.
CusumState update(CusumState state, double y, const CusumConfig& config);

/// Folds update over the series; returns the latched crossing index (1-based).
std::optional<std::size_t> detect_series(const std::vector<double>& series,
                                         const CusumConfig& config);

/// Full statistic trace (C_1..C_n) alongside detection, for diagnostics.
struct CusumTrace {
  std::vector<double> c;
  std::optional<std::size_t> crossed_at;
};
CusumTrace trace_series(const std::vector<double>& series, const CusumConfig& config);

struct DistanceEffect {
  double distance = 0.0;
  double effect = 0.0;
};

struct SpatialBoundaryResult {
  double s_star = 0.0;          // distance at the crossing
  std::size_t crossing_index = 0;  // index into the distance-descending order
};

/// Scans effects ordered by distance descending (the far field is the PE
/// null) with a level-shift CUSUM and returns the distance at which the
/// detector fires. Models default to the far-field fit; supply a config to
/// override h (k and the models are re-derived from the data unless
/// `use_config_models` is set).
std::optional<SpatialBoundaryResult> spatial_boundary_scan(std::vector<DistanceEffect> pairs,
                                                           double h = 5.0);

}  // namespace spillover
