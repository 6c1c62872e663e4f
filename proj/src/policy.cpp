#include "spillover/policy.hpp"

#include <algorithm>
#include <cmath>

#include "spillover/errors.hpp"

namespace spillover {

void PolicyInputs::validate() const {
  const int m = n();
  if (m < 1) throw InvalidParameter("policy inputs need at least one location");
  if (tau_ge.size() != m || crossing_prob.size() != m)
    throw InvalidParameter("policy input vectors must share the location count");
  if (phi.rows() != m || phi.cols() != m) throw InvalidParameter("phi must be N x N");
  for (int i = 0; i < m; ++i) {
    if (crossing_prob(i) < 0.0 || crossing_prob(i) > 1.0)
      throw InvalidParameter("crossing probabilities must lie in [0,1]");
    if (phi(i, i) != 0.0) throw InvalidParameter("phi diagonal must be zero");
  }
  if (budget < 0) throw InvalidParameter("budget must be >= 0");
}

double evaluate_welfare(const std::vector<int>& selected, const PolicyInputs& inputs) {
  double w = 0.0;
  for (int i : selected)
    w += inputs.tau_pe(i) + inputs.tau_ge(i) * inputs.crossing_prob(i) - inputs.cost;
  for (std::size_t a = 0; a < selected.size(); ++a)
    for (std::size_t b = 0; b < selected.size(); ++b)
      if (a != b) w += inputs.phi(selected[a], selected[b]);
  return w;
}

double net_benefit(int i, const std::vector<int>& selected, const PolicyInputs& inputs) {
  double nb = inputs.tau_pe(i) + inputs.tau_ge(i) * inputs.crossing_prob(i) - inputs.cost;
  for (int j : selected) nb += inputs.phi(i, j) + inputs.phi(j, i);
  return nb;
}

PolicyResult select_targets_greedy(const PolicyInputs& inputs) {
  inputs.validate();
  const int m = inputs.n();
  PolicyResult res;
  res.per_location_net_benefit = Eigen::VectorXd::Zero(m);
  std::vector<bool> in(static_cast<std::size_t>(m), false);
  while (static_cast<int>(res.selected.size()) < inputs.budget) {
    int best = -1;
    double best_nb = 0.0;
    for (int i = 0; i < m; ++i) {
      if (in[static_cast<std::size_t>(i)]) continue;
      const double nb = net_benefit(i, res.selected, inputs);
      if (nb > best_nb) {  // strict: ties stay with the lower index
        best = i;
        best_nb = nb;
      }
    }
    if (best < 0 || best_nb <= 0.0) break;
    in[static_cast<std::size_t>(best)] = true;
    res.selected.push_back(best);
    res.per_location_net_benefit(best) = best_nb;
    res.shadow_price_mu = best_nb;
  }
  std::sort(res.selected.begin(), res.selected.end());
  res.total_welfare = evaluate_welfare(res.selected, inputs);
  return res;
}

namespace {

void enumerate_subsets(const PolicyInputs& inputs, std::vector<int>& current, int next,
                       std::vector<int>& best, double& best_welfare) {
  const double w = evaluate_welfare(current, inputs);
  if (w > best_welfare) {
    best_welfare = w;
    best = current;
  }
  if (static_cast<int>(current.size()) == inputs.budget) return;
  for (int i = next; i < inputs.n(); ++i) {
    current.push_back(i);
    enumerate_subsets(inputs, current, i + 1, best, best_welfare);
    current.pop_back();
  }
}

}  // namespace

PolicyResult select_targets_exact(const PolicyInputs& inputs) {
  inputs.validate();
  if (inputs.n() > 20) throw InvalidParameter("select_targets_exact supports N <= 20");
  std::vector<int> best;
  std::vector<int> current;
  double best_welfare = 0.0;  // empty set baseline
  enumerate_subsets(inputs, current, 0, best, best_welfare);
  PolicyResult res;
  res.selected = best;
  std::sort(res.selected.begin(), res.selected.end());
  res.total_welfare = best_welfare;
  res.per_location_net_benefit = Eigen::VectorXd::Zero(inputs.n());
  // Shadow price reported as the smallest marginal value inside the optimum.
  double mu = 0.0;
  for (std::size_t a = 0; a < res.selected.size(); ++a) {
    std::vector<int> without = res.selected;
    without.erase(without.begin() + static_cast<std::ptrdiff_t>(a));
    const double marginal = res.total_welfare - evaluate_welfare(without, inputs);
    res.per_location_net_benefit(res.selected[a]) = marginal;
    mu = (a == 0) ? marginal : std::min(mu, marginal);
  }
  res.shadow_price_mu = mu;
  return res;
}

TargetingComparison compare_pe_vs_ge_targeting(const PolicyInputs& inputs) {
  inputs.validate();
  TargetingComparison cmp;
  PolicyInputs pe_view = inputs;
  pe_view.crossing_prob.setZero();
  cmp.pe_selection = select_targets_greedy(pe_view);
  cmp.ge_selection = select_targets_greedy(inputs);

  cmp.pe_welfare_under_ge = evaluate_welfare(cmp.pe_selection.selected, inputs);
  // The GE-aware planner maximizes the true welfare, so the PE set is one of
  // its candidate portfolios; keep whichever evaluates higher.
  if (cmp.pe_welfare_under_ge > cmp.ge_selection.total_welfare) {
    cmp.ge_selection.selected = cmp.pe_selection.selected;
    cmp.ge_selection.total_welfare = cmp.pe_welfare_under_ge;
  }
  if (cmp.pe_welfare_under_ge != 0.0) {
    cmp.welfare_gain_ratio = cmp.ge_selection.total_welfare / cmp.pe_welfare_under_ge;
  } else {
    cmp.welfare_gain_ratio = (cmp.ge_selection.total_welfare > 0.0) ? HUGE_VAL : 1.0;
  }
  return cmp;
}

}  // namespace spillover
