#pragma once

#include <string>
#include <vector>

#include "crl/rng.hpp"

namespace crl {

/// Finite goal-conditioned MDP with dense dynamics.
///
/// Layout (row-major):
///   transition[s][a][s']   -- shared across goals
///   reward[s][a][g]
///   initial_dist[g][s]
struct GoalConditionedMdp {
  int n_states = 0;
  int n_actions = 0;
  int n_goals = 0;
  double gamma = 0.0;
  std::vector<double> transition;
  std::vector<double> reward;
  std::vector<double> initial_dist;

  double p(int s, int a, int s2) const {
    return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
  }
  double r(int s, int a, int g) const {
    return reward[(static_cast<std::size_t>(s) * n_actions + a) * n_goals + g];
  }
  double mu0(int g, int s) const {
    return initial_dist[static_cast<std::size_t>(g) * n_states + s];
  }
  /// Largest |r(s,a,g)| for one goal.
  double r_max(int g) const;

  /// Throws std::invalid_argument on shape mismatch, gamma outside [0,1),
  /// negative probabilities or rows not summing to 1 within 1e-9.
  void validate() const;
};

/// Stochastic tabular policy pi[s][g] -> simplex over actions.
/// Layout: pi[s][g][a], row-major.
struct TabularPolicy {
  int n_states = 0;
  int n_goals = 0;
  int n_actions = 0;
  std::vector<double> pi;

  double prob(int s, int g, int a) const {
    return pi[(static_cast<std::size_t>(s) * n_goals + g) * n_actions + a];
  }
  double& prob_ref(int s, int g, int a) {
    return pi[(static_cast<std::size_t>(s) * n_goals + g) * n_actions + a];
  }
  void validate() const;
};

/// Exact value tables for one goal: v[s], q[s][a], adv[s][a].
struct ValueTables {
  int goal = 0;
  std::vector<double> v;
  std::vector<double> q;    // [s][a]
  std::vector<double> adv;  // [s][a]
  double max_abs_v() const;
  double max_abs_q() const;
};

/// Discounted state-occupancy rows d[g][s]; rows for goals outside the
/// mixture's support are zero. goal_distribution records the mixture weights
/// (a point mass for single-goal occupancies).
struct OccupancyMeasure {
  int n_states = 0;
  int n_goals = 0;
  std::vector<double> d;                  // [g][s]
  std::vector<double> goal_distribution;  // [g]

  double at(int g, int s) const { return d[static_cast<std::size_t>(g) * n_states + s]; }
};

/// Exact policy evaluation for one goal: dense LU solve of
/// (I - gamma P^pi) v = r^pi, then q(s,a) = r + gamma * E_{s'}[v] and
/// adv = q - v.
ValueTables policy_evaluation(const GoalConditionedMdp& mdp, const TabularPolicy& policy, int goal);

/// d_g(s) = (1 - gamma) * sum_t gamma^t Pr(s_t = s | pi, g), by dense solve.
OccupancyMeasure occupancy(const GoalConditionedMdp& mdp, const TabularPolicy& policy, int goal);

/// Occupancy rows for every goal with positive weight, tagged with the mixture.
OccupancyMeasure mixture_occupancy(const GoalConditionedMdp& mdp, const TabularPolicy& policy,
                                   const std::vector<double>& goal_dist);

/// J_g(pi) = sum_s mu0(g,s) v(s).
double expected_return(const GoalConditionedMdp& mdp, const TabularPolicy& policy, int goal);

/// Absolute gap between J_g(pi_new) - J_g(pi_old) and the discounted
/// occupancy-weighted advantage of pi_new under pi_old's value tables.
double pdl_residual(const GoalConditionedMdp& mdp, const TabularPolicy& pi_new,
                    const TabularPolicy& pi_old, int goal);

/// Random instance: transition rows and initial distributions Dirichlet(1),
/// rewards i.i.d. uniform on [-1, 1].
GoalConditionedMdp random_mdp(int n_states, int n_actions, int n_goals, double gamma, Rng& rng);

/// Dirichlet(1) policy rows; full support almost surely.
TabularPolicy random_policy(int n_states, int n_goals, int n_actions, Rng& rng);

/// Row-wise Dirichlet draw concentrated on the base policy:
/// pi'(.|s,g) ~ Dirichlet(concentration * pi(.|s,g)). Larger concentration
/// keeps the perturbation smaller.
TabularPolicy perturb_policy(const TabularPolicy& base, double concentration, Rng& rng);

std::string mdp_to_json(const GoalConditionedMdp& mdp);
GoalConditionedMdp mdp_from_json(const std::string& text);

}  // namespace crl
