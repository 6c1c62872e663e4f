#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "spillover/stochastic_process.hpp"

namespace spillover {

struct WeightsParams {
  double theta_d = 0.0;  // geographic decay per km
  double theta_e = 0.0;  // economic decay per unit economic distance
  void validate() const;
};

enum class NetworkKind { Sparse, Dense, Kernel };

/// Row-stochastic spatial weights with zero diagonal, built as W = D^-1 A
/// for a symmetric non-negative base A (k-nearest-neighbour adjacency or an
/// exponential-decay kernel). The symmetric base is what makes the fast
/// eigen-decomposed SAR solves below exact.
struct SpatialNetwork {
  int n = 0;
  Eigen::MatrixXd coordinates;    // n x 2, km
  Eigen::MatrixXd econ_distance;  // n x n, >= 0
  Eigen::MatrixXd weights;        // n x n row-stochastic, zero diagonal
  Eigen::VectorXd sym_degree;     // row sums of the symmetric base A
  NetworkKind kind = NetworkKind::Sparse;

  void validate() const;
};

/// W_ij = exp(-theta_d d_ij - theta_e e_ij) / sum_k exp(...), diagonal zero.
Eigen::MatrixXd build_weights(const Eigen::MatrixXd& coordinates,
                              const Eigen::MatrixXd& econ_distance, const WeightsParams& params);

/// Uniform coordinates on [0,100]^2, kNN adjacency (k = 4 sparse, 12 dense)
/// symmetrized and row-normalized; kernel kind uses build_weights with the
/// supplied decay parameters. econ_distance defaults to geographic distance.
SpatialNetwork generate_network(int n, NetworkKind kind, std::uint64_t seed,
                                const WeightsParams& kernel_params = {0.05, 0.0});

Eigen::MatrixXd pairwise_distances(const Eigen::MatrixXd& coordinates);

/// Spectral machinery for (I - rho W): W = D^-1 A with A symmetric is
/// similar to the symmetric D^-1/2 A D^-1/2, so solves and log-determinants
/// reduce to one symmetric eigendecomposition per network.
class SarOperator {
 public:
  SarOperator() = default;
  SarOperator(const Eigen::MatrixXd& weights, const Eigen::VectorXd& sym_degree);
  explicit SarOperator(const SpatialNetwork& network)
      : SarOperator(network.weights, network.sym_degree) {}

  int n() const { return static_cast<int>(lambda_.size()); }
  /// log |I - rho W| = sum log(1 - rho lambda_i).
  double log_det(double rho) const;
  /// (I - rho W)^-1 v.
  Eigen::VectorXd solve(double rho, const Eigen::VectorXd& v) const;
  Eigen::MatrixXd solve(double rho, const Eigen::MatrixXd& v) const;
  const Eigen::VectorXd& eigenvalues() const { return lambda_; }

 private:
  Eigen::MatrixXd q_;            // eigenvectors of D^-1/2 A D^-1/2
  Eigen::VectorXd lambda_;       // eigenvalues (real)
  Eigen::VectorXd sqrt_deg_;
  Eigen::VectorXd inv_sqrt_deg_;
};

enum class AssignmentKind {
  Random,     // uniform draw of floor(f N) locations
  Dispersed,  // farthest-point rollout: pilots spread to maximise coverage
  Clustered   // the f N locations nearest a random centre
};

struct DgpConfig {
  int n_locations = 100;
  int n_periods = 20;
  double tau_pe = 0.2;
  double delta_ge = 0.15;
  double rho_pe = 0.0;
  double rho_ge = 0.3;
  double s_star = 0.5;
  Eigen::VectorXd beta = (Eigen::VectorXd(2) << 0.5, 0.3).finished();
  double alpha_sd = 0.0;
  double noise_sd = 0.1;
  double treated_fraction = 0.3;
  AssignmentKind assignment = AssignmentKind::Dispersed;
  NetworkKind network_kind = NetworkKind::Sparse;
  double period_dt = 0.5;  // spillover-process time per panel period
  JumpDiffusionParams spillover_params;
  std::uint64_t seed = 0;

  DgpConfig();
  void validate() const;
};

struct SpatialPanel {
  Eigen::MatrixXd outcomes;             // N x T
  Eigen::MatrixXi treatment;            // N x T, 0/1
  std::vector<Eigen::MatrixXd> covariates;  // T matrices of N x K
  SpatialNetwork network;

  // Ground truth carried by synthetic panels.
  std::optional<SpilloverPath> true_state;
  std::vector<double> state_at_period;  // S at each period date
  std::vector<int> true_regime;         // 1 = general-equilibrium period
  std::vector<double> true_tau_series;  // tau(S_t) per period

  int n() const { return static_cast<int>(outcomes.rows()); }
  int t() const { return static_cast<int>(outcomes.cols()); }
  int k() const { return covariates.empty() ? 0 : static_cast<int>(covariates[0].cols()); }
  bool treatment_time_invariant() const;
  Eigen::VectorXi treated_at0() const { return treatment.col(0); }
};

struct RegimeEffect {
  double tau = 0.0;
  double rho = 0.0;
};

/// (tau_PE, rho_PE) below the boundary, (tau_PE + delta_GE, rho_GE) at or
/// above it (the boundary itself is general-equilibrium).
RegimeEffect regime_effect(double s, const DgpConfig& config);

/// Simulates the regime-switching panel: one economy-wide spillover path,
/// one-shot treatment assignment at t = 0, and an exact per-period solve of
/// Y_t = (I - rho(S_t) W)^-1 (alpha + tau(S_t) D + X_t beta + eps_t).
SpatialPanel simulate_panel(const DgpConfig& config);

/// As simulate_panel but on a caller-provided network (the config's
/// n_locations / network_kind are ignored).
SpatialPanel simulate_panel_on_network(const DgpConfig& config, const SpatialNetwork& network);

Eigen::VectorXi assign_treatment(const SpatialNetwork& network, double fraction,
                                 AssignmentKind kind, std::uint64_t seed);

/// Grid-search maximum of the pooled Gaussian SAR profile likelihood over
/// candidate decay parameters; ties break towards smaller theta_d, then
/// smaller theta_e.
WeightsParams estimate_weight_params(const SpatialPanel& panel,
                                     const std::vector<WeightsParams>& grid);

/// Concentrated pooled SAR log-likelihood machinery shared with baselines.
struct SarConcentratedFit {
  double rho = 0.0;
  double loglik = 0.0;
  Eigen::VectorXd coef;   // [intercept, tau, beta...]
  double sigma2 = 0.0;
  bool bracket_ok = true;
};
SarConcentratedFit sar_concentrated_fit(const SpatialPanel& panel, const Eigen::MatrixXd& weights,
                                        const SarOperator& op, double rho_lo = -0.98,
                                        double rho_hi = 0.98);

}  // namespace spillover
