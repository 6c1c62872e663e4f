#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>

#include "spillover/spatial_dgp.hpp"

namespace spillover {

struct BaselineResult {
  std::string method;
  double tau_hat = 0.0;
  double std_error = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  std::optional<double> rho_hat;  // SAR only
};

/// Pooled regression of Y on [1, D, X] with HC1 heteroskedasticity-robust
/// standard errors.
BaselineResult ols(const SpatialPanel& panel);

/// Within transformation. Treatment is time-invariant in this data
/// generating process, so the op demeans by period (location demeaning would
/// annihilate D); errors are clustered by location.
BaselineResult fixed_effects(const SpatialPanel& panel);

/// Pooled Gaussian maximum likelihood for the single-regime SAR model
/// Y_t = rho W Y_t + tau D + X_t beta + eps_t, concentrated over rho with
/// log|I - rho W| from the network eigenvalues. The single (rho, tau) pair is
/// deliberately misspecified under regime switching; that is the comparison
/// the Monte Carlo study draws.
BaselineResult sar_ml(const SpatialPanel& panel, const Eigen::MatrixXd& weights);
BaselineResult sar_ml(const SpatialPanel& panel);

}  // namespace spillover
