#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "spillover/parallel.hpp"
#include "spillover/rng.hpp"

using namespace spillover;

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derived seeds differ across indices") {
  CHECK(derive_seed(7, 0) != derive_seed(7, 1));
  CHECK(derive_seed(7, 0) != derive_seed(8, 0));
}

TEST_CASE("inverse normal cdf matches the normal cdf") {
  // Round trip through the closed-form CDF at a spread of quantiles.
  for (double p : {1e-10, 1e-6, 0.001, 0.025, 0.2, 0.5, 0.8, 0.975, 0.999, 1.0 - 1e-6}) {
    const double z = Rng::inverse_normal_cdf(p);
    CHECK(normal_cdf(z) == doctest::Approx(p).epsilon(1e-9));
  }
  CHECK(Rng::inverse_normal_cdf(0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK_THROWS(Rng::inverse_normal_cdf(0.0));
  CHECK_THROWS(Rng::inverse_normal_cdf(1.0));
}

TEST_CASE("normal draws have the right first two moments") {
  Rng rng(123);
  const int n = 200000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  CHECK(std::fabs(mean) < 3.0 / std::sqrt(static_cast<double>(n)));
  CHECK(var == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("exponential draws have the requested mean") {
  Rng rng(9);
  const int n = 100000;
  double sum = 0.0;
  for (int i = 0; i < n; ++i) sum += rng.exponential(2.5);
  CHECK(sum / n == doctest::Approx(2.5).epsilon(0.03));
}

TEST_CASE("parallel_for serial and threaded fills are identical") {
  const int n = 10000;
  std::vector<double> serial(n), threaded(n);
  parallel_for(n, 1, [&](std::int64_t i) {
    Rng rng(derive_seed(77, static_cast<std::uint64_t>(i)));
    serial[static_cast<std::size_t>(i)] = rng.normal() + rng.exponential(1.0);
  });
  parallel_for(n, 2, [&](std::int64_t i) {
    Rng rng(derive_seed(77, static_cast<std::uint64_t>(i)));
    threaded[static_cast<std::size_t>(i)] = rng.normal() + rng.exponential(1.0);
  });
  CHECK(serial == threaded);
}
