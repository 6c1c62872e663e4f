#include "spillover/cusum.hpp"

#include <algorithm>
#include <cmath>

#include "spillover/errors.hpp"

namespace spillover {

void CusumConfig::validate() const {
  if (!(h > 0.0)) throw InvalidParameter("cusum threshold h must be > 0");
  if (!(pe_model.sd > 0.0) || !(ge_model.sd > 0.0))
    throw InvalidParameter("cusum model sds must be > 0");
}

CusumConfig CusumConfig::from_models(const GaussianModel& f0, const GaussianModel& f1, double h) {
  CusumConfig cfg;
  cfg.pe_model = f0;
  cfg.ge_model = f1;
  cfg.h = h;
  // Allowance: half the mean llr under f1, i.e. 0.5 * KL(f1 || f0). For an
  // equal-sd mean shift this is delta^2 / (4 sd^2), the classical choice.
  const double dm = f1.mean - f0.mean;
  const double kl = std::log(f0.sd / f1.sd) +
                    (f1.sd * f1.sd + dm * dm) / (2.0 * f0.sd * f0.sd) - 0.5;
  cfg.k = 0.5 * std::max(kl, 0.0);
  return cfg;
}

CusumConfig CusumConfig::estimate_from_stream(const std::vector<double>& series, double h,
                                              double head_fraction, std::size_t min_head) {
  if (series.empty()) throw InvalidParameter("cannot estimate cusum models from empty series");
  std::size_t head = std::max<std::size_t>(
      min_head, static_cast<std::size_t>(std::ceil(head_fraction * static_cast<double>(series.size()))));
  head = std::min(head, series.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < head; ++i) mean += series[i];
  mean /= static_cast<double>(head);
  double var = 0.0;
  for (std::size_t i = 0; i < head; ++i) var += (series[i] - mean) * (series[i] - mean);
  var /= static_cast<double>(head > 1 ? head - 1 : 1);
  double sd = std::sqrt(var);
  if (!(sd > 1e-12)) sd = 1e-12;  // degenerate head: keep llr finite
  GaussianModel f0{mean, sd};
  GaussianModel f1{mean + sd, sd};
  return from_models(f0, f1, h);
}

double llr(double y, const CusumConfig& config) {
  const auto& f0 = config.pe_model;
  const auto& f1 = config.ge_model;
  if (f0.mean == f1.mean && f0.sd == f1.sd) return 0.0;  // no evidence either way
  const double z0 = (y - f0.mean) / f0.sd;
  const double z1 = (y - f1.mean) / f1.sd;
  return std::log(f0.sd) - std::log(f1.sd) + 0.5 * (z0 * z0 - z1 * z1);
}

CusumState update(CusumState state, double y, const CusumConfig& config) {
  config.validate();
  state.c = std::max(0.0, state.c + llr(y, config) - config.k);
  state.n += 1;
  // Inclusive crossing (C_n >= h) so that exact arithmetic hits like
  // C_n == h register at the expected index.
  if (!state.crossed_at && state.c >= config.h) state.crossed_at = state.n;
  return state;
}

std::optional<std::size_t> detect_series(const std::vector<double>& series,
                                         const CusumConfig& config) {
  CusumState state;
  for (double y : series) state = update(state, y, config);
  return state.crossed_at;
}

CusumTrace trace_series(const std::vector<double>& series, const CusumConfig& config) {
  CusumTrace trace;
  trace.c.reserve(series.size());
  CusumState state;
  for (double y : series) {
    state = update(state, y, config);
    trace.c.push_back(state.c);
  }
  trace.crossed_at = state.crossed_at;
  return trace;
}

std::optional<SpatialBoundaryResult> spatial_boundary_scan(std::vector<DistanceEffect> pairs,
                                                           double h) {
  if (pairs.size() < 10)
    throw InsufficientData("spatial_boundary_scan needs at least 10 distance-effect pairs");
  std::sort(pairs.begin(), pairs.end(), [](const DistanceEffect& a, const DistanceEffect& b) {
    if (a.distance != b.distance) return a.distance > b.distance;  // far field first
    return a.effect < b.effect;
  });
  std::vector<double> effects(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) effects[i] = pairs[i].effect;
  const CusumConfig cfg = CusumConfig::estimate_from_stream(effects, h);
  const auto crossed = detect_series(effects, cfg);
  if (!crossed) return std::nullopt;
  SpatialBoundaryResult res;
  res.crossing_index = *crossed - 1;
  res.s_star = pairs[res.crossing_index].distance;
  return res;
}

}  // namespace spillover
