#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spillover/errors.hpp"
#include "spillover/montecarlo.hpp"
#include "spillover/rng.hpp"

using namespace spillover;

namespace {

// Small, fast scenario used across the suite.
ScenarioConfig tiny_scenario(std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.n = 50;
  cfg.t = 10;
  cfg.n_reps = 4;
  cfg.jump_intensity = 0.5;
  cfg.methods = {Method::Ols, Method::Sar, Method::DdpmBoundary};
  cfg.ddpm.epochs = 40;
  cfg.ensemble = 1;
  cfg.seed = seed;
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("grid validation flags off-grid values unless custom") {
  ScenarioConfig cfg = tiny_scenario(1);
  cfg.jump_intensity = 0.7;
  CHECK_THROWS_AS(cfg.validate(), InvalidParameter);
  cfg.custom = true;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("single noiseless replication: bias equals the one-rep error and rmse its magnitude") {
  ScenarioConfig cfg = tiny_scenario(3);
  cfg.n_reps = 1;
  cfg.noise_sd = 0.0;
  cfg.custom = true;
  cfg.methods = {Method::Ols};
  const MetricsReport rep = run_scenario(cfg);
  REQUIRE(rep.n_reps_completed == 1);
  const double err = rep.reps[0].tau_hat[0] - rep.reps[0].tau_true;
  CHECK(rep.methods[0].bias == doctest::Approx(err).epsilon(1e-12));
  CHECK(rep.methods[0].rmse == doctest::Approx(std::fabs(err)).epsilon(1e-12));
}

TEST_CASE("rmse dominates the absolute bias") {
  const MetricsReport rep = run_scenario(tiny_scenario(5));
  for (const auto& m : rep.methods) CHECK(m.rmse >= std::fabs(m.bias) - 1e-12);
}

TEST_CASE("aggregates recompute exactly from the per-replication records") {
  ScenarioConfig cfg = tiny_scenario(7);
  const MetricsReport rep = run_scenario(cfg);
  const MetricsReport again = aggregate_records(cfg, rep.reps, rep.wall_time_seconds);
  for (std::size_t m = 0; m < rep.methods.size(); ++m) {
    CHECK(rep.methods[m].bias == again.methods[m].bias);
    CHECK(rep.methods[m].rmse == again.methods[m].rmse);
    CHECK(rep.methods[m].coverage == again.methods[m].coverage);
  }
  CHECK(rep.boundary_mae == again.boundary_mae);
  CHECK(rep.power == again.power);
}

TEST_CASE("reports are identical at any thread count") {
  ScenarioConfig cfg = tiny_scenario(9);
  cfg.threads = 1;
  const MetricsReport serial = run_scenario(cfg);
  cfg.threads = 2;
  const MetricsReport threaded = run_scenario(cfg);
  REQUIRE(serial.reps.size() == threaded.reps.size());
  for (std::size_t r = 0; r < serial.reps.size(); ++r) {
    CHECK(serial.reps[r].tau_hat == threaded.reps[r].tau_hat);
    CHECK(serial.reps[r].ci_lo == threaded.reps[r].ci_lo);
    CHECK(serial.reps[r].s_star_hat_km == threaded.reps[r].s_star_hat_km);
  }
}

TEST_CASE("seed stability: different seeds move metrics within Monte Carlo error") {
  ScenarioConfig a = tiny_scenario(11);
  a.n_reps = 12;
  a.methods = {Method::Ols};
  ScenarioConfig b = a;
  b.seed = 12;
  const MetricsReport ra = run_scenario(a);
  const MetricsReport rb = run_scenario(b);
  const double se = std::sqrt(ra.methods[0].rmse * ra.methods[0].rmse / 12 +
                              rb.methods[0].rmse * rb.methods[0].rmse / 12);
  CHECK(std::fabs(ra.methods[0].bias - rb.methods[0].bias) <= 3.0 * se + 1e-9);
}

TEST_CASE("empty grid gives an empty result set") {
  CHECK(run_grid({}).empty());
}

TEST_CASE("boundary channel recovers the drawn step location") {
  ScenarioConfig cfg = tiny_scenario(13);
  cfg.n = 100;
  DgpConfig dgp = cfg.make_dgp(17);
  const SpatialPanel panel = simulate_panel(dgp);
  int hits = 0;
  double mae = 0.0;
  const int draws = 40;
  for (int k = 0; k < draws; ++k) {
    const BoundaryChannelDraw d = boundary_channel(panel, cfg, derive_seed(19, k));
    REQUIRE(d.s_star_hat.has_value());
    const double err = std::fabs(*d.s_star_hat - d.s_star_true);
    mae += err;
    if (err <= 5.0) ++hits;
  }
  CHECK(static_cast<double>(hits) / draws >= 0.8);
  CHECK(mae / draws <= 10.0);
}

TEST_CASE("placebo: the null estimate sits inside its own permutation distribution") {
  ScenarioConfig cfg = tiny_scenario(21);
  cfg.tau_pe = 0.0;
  cfg.delta_ge = 0.0;
  cfg.custom = true;
  int inside = 0;
  const int metas = 20;
  for (int meta = 0; meta < metas; ++meta) {
    const PlaceboResult res =
        placebo_study(cfg, 100, PlaceboEstimator::Ols, derive_seed(23, meta));
    std::vector<double> draws = res.placebo_estimates;
    std::sort(draws.begin(), draws.end());
    const double lo = draws[static_cast<std::size_t>(0.05 * draws.size())];
    const double hi = draws[static_cast<std::size_t>(0.95 * draws.size()) - 1];
    if (res.true_estimate >= lo && res.true_estimate <= hi) ++inside;
  }
  CHECK(inside >= static_cast<int>(0.85 * metas) - 1);
}

TEST_CASE("placebo: a real effect lands in the far right tail") {
  ScenarioConfig cfg = tiny_scenario(29);
  cfg.n = 100;
  cfg.t = 20;
  const PlaceboResult res = placebo_study(cfg, 200, PlaceboEstimator::Ols, 31);
  CHECK(res.p_value <= 0.01);
}

TEST_CASE("placebo distribution is centred at zero under the null") {
  ScenarioConfig cfg = tiny_scenario(37);
  cfg.tau_pe = 0.0;
  cfg.delta_ge = 0.0;
  cfg.custom = true;
  const PlaceboResult res = placebo_study(cfg, 300, PlaceboEstimator::Ols, 41);
  double mean = 0.0;
  for (double v : res.placebo_estimates) mean += v;
  mean /= res.placebo_estimates.size();
  double var = 0.0;
  for (double v : res.placebo_estimates) var += (v - mean) * (v - mean);
  var /= (res.placebo_estimates.size() - 1);
  const double se = std::sqrt(var / res.placebo_estimates.size());
  CHECK(std::fabs(mean) <= 3.0 * se);
}

TEST_CASE("threshold sweep: detection power is non-increasing in h") {
  ScenarioConfig cfg = tiny_scenario(43);
  cfg.n_reps = 8;
  const auto points = threshold_sensitivity(cfg, {1.0, 3.0, 5.0, 7.0, 10.0});
  REQUIRE(points.size() == 5);
  for (std::size_t i = 1; i < points.size(); ++i) {
    CHECK(points[i].detection_power <= points[i - 1].detection_power + 1e-12);
    CHECK(points[i].type1_rate <= points[i - 1].type1_rate + 1e-12);
  }
}

TEST_CASE("scenario failure propagates only above the tolerated rate") {
  ScenarioConfig cfg = tiny_scenario(47);
  cfg.n = 4;  // too small for the network generator: every replication fails
  cfg.custom = true;
  CHECK_THROWS_AS(run_scenario(cfg), EstimationFailure);
}
