#pragma once

#include <Eigen/Dense>
#include <vector>

namespace spillover {

struct PolicyInputs {
  Eigen::VectorXd tau_pe;         // per-location partial-equilibrium effect
  Eigen::VectorXd tau_ge;         // per-location general-equilibrium increment component
  Eigen::VectorXd crossing_prob;  // P(boundary crossed before the horizon), in [0,1]
  Eigen::MatrixXd phi;            // pairwise externalities, zero diagonal, >= 0
  double cost = 0.0;              // per-treatment cost
  int budget = 0;                 // maximum number of treatments

  int n() const { return static_cast<int>(tau_pe.size()); }
  void validate() const;
};

struct PolicyResult {
  std::vector<int> selected;                 // ascending location ids
  double total_welfare = 0.0;
  double shadow_price_mu = 0.0;              // marginal net benefit of the last admitted unit
  Eigen::VectorXd per_location_net_benefit;  // marginal benefit at admission (0 if never admitted)
};

/// Welfare of a treatment set: sum of direct probability-weighted benefits
/// net of cost plus all pairwise externalities inside the set.
double evaluate_welfare(const std::vector<int>& selected, const PolicyInputs& inputs);

/// Marginal net benefit of adding i to the current set:
/// tau_pe_i + tau_ge_i p_i + sum_{j in set} (phi_ij + phi_ji) - cost.
double net_benefit(int i, const std::vector<int>& selected, const PolicyInputs& inputs);

/// Greedy: repeatedly admit the highest positive marginal benefit until the
/// budget binds or no candidate helps; ties break to the lower index.
PolicyResult select_targets_greedy(const PolicyInputs& inputs);

/// Exhaustive search over feasible subsets (N <= 20).
PolicyResult select_targets_exact(const PolicyInputs& inputs);

struct TargetingComparison {
  PolicyResult pe_selection;   // crossing probabilities forced to zero
  PolicyResult ge_selection;   // true probabilities
  double pe_welfare_under_ge = 0.0;  // PE set evaluated under the true welfare
  double welfare_gain_ratio = 1.0;   // ge / pe under the true welfare
};

/// Runs the selection once with crossing probabilities zeroed (the PE view)
/// and once with the true probabilities; both sets are evaluated under the
/// true welfare. The GE-aware result also considers the PE set as a
/// candidate, so it never evaluates below it.
TargetingComparison compare_pe_vs_ge_targeting(const PolicyInputs& inputs);

}  // namespace spillover
