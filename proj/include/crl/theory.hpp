#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "crl/mdp.hpp"

namespace crl {

constexpr double kSupportEps = 1e-12;
constexpr double kSlackTol = 1e-9;

/// One verified inequality. slack = rhs - lhs; holds iff slack >= -1e-9.
struct BoundReport {
  std::string name;
  double lhs = 0.0;
  double rhs = 0.0;
  double slack = 0.0;
  bool holds = false;
  std::map<std::string, double> metadata;
};

/// Builds a report and enforces finite fields (std::range_error otherwise).
BoundReport make_bound_report(const std::string& name, double lhs, double rhs,
                              std::map<std::string, double> metadata = {});

/// Raised when the divergence weight sits on a state where the new policy
/// puts mass outside the old policy's support.
struct DivergenceInfiniteError : std::runtime_error {
  int state;
  int goal;
  DivergenceInfiniteError(int s, int g);
};

/// How the advantage-magnitude sup is restricted: to (state, action) pairs the
/// visiting policy actually reaches and chooses, or to visited states with all
/// actions.
enum class SupportMode { kPairs, kStates };

double kl_categorical(const std::vector<double>& p, const std::vector<double>& q);
double tv_categorical(const std::vector<double>& p, const std::vector<double>& q);

/// sup |A^anchor(s,a,g)| over the visiting policy's support.
double advantage_magnitude(const GoalConditionedMdp& mdp, const TabularPolicy& anchor,
                           const TabularPolicy& visiting, int goal,
                           SupportMode mode = SupportMode::kPairs,
                           double support_eps = kSupportEps);

/// (M_old, M_new): goal-averaged advantage magnitudes of pi_new anchored at
/// pi_old, under the old and new goal distributions.
std::pair<double, double> stability_plasticity_metrics(const GoalConditionedMdp& mdp,
                                                       const TabularPolicy& pi_new,
                                                       const TabularPolicy& pi_old,
                                                       const std::vector<double>& p_old,
                                                       const std::vector<double>& p_new);

/// D = sqrt(2 * sum_g w_g sum_s d_g(s) KL(pi_new(.|s,g) || pi_old(.|s,g))),
/// weighted by the occupancy measure's goal mixture.
double policy_divergence(const GoalConditionedMdp& mdp, const TabularPolicy& pi_new,
                         const TabularPolicy& pi_old, const OccupancyMeasure& weighting,
                         double support_eps = kSupportEps);

/// |E_{g~p_old}[J_g(pi_new) - J_g(pi_old)]| <= 2 gamma / (1-gamma)^2 * M_old * D_old.
BoundReport check_stability_bound(const GoalConditionedMdp& mdp, const TabularPolicy& pi_new,
                                  const TabularPolicy& pi_old, const std::vector<double>& p_old,
                                  SupportMode mode = SupportMode::kPairs);

/// E_{g~p_new}[J_g(pi_new) - J_g(pi_old)] <= 1 / (1-gamma) * M_new * D_new (signed lhs).
BoundReport check_plasticity_bound(const GoalConditionedMdp& mdp, const TabularPolicy& pi_new,
                                   const TabularPolicy& pi_old, const std::vector<double>& p_new,
                                   SupportMode mode = SupportMode::kPairs);

/// Bootstrapped advantages from an approximate V stay within
/// R_max + (1+gamma) * (||V_old||_inf + eps_V).
BoundReport check_corollary_v(const GoalConditionedMdp& mdp, int goal,
                              const std::vector<double>& v_approx, const TabularPolicy& anchor);

/// Centered advantages from an approximate Q stay within 2 (||Q_old||_inf + eps_Q).
/// q_approx is [s][a] row-major.
BoundReport check_corollary_q(const GoalConditionedMdp& mdp, int goal,
                              const std::vector<double>& q_approx, const TabularPolicy& anchor);

enum class McPath { kV, kQ };

/// Fitted critic values along one trajectory, clamped by the caller into
/// [min G, max G]. V-path uses v (one per step); Q-path uses q[t][a] with
/// optional policy rows probs[t][a] (uniform when empty).
struct McFit {
  std::vector<double> v;
  std::vector<std::vector<double>> q;
  std::vector<std::vector<double>> probs;
};

/// Return-range bounds for Monte-Carlo-fitted critics:
/// V-path rhs = 2 (1+gamma) G_abs, Q-path rhs = 2 G_abs.
BoundReport check_corollary_mc(const std::vector<double>& returns, double gamma, McPath path,
                               const McFit& fitted);

struct SuiteConfig {
  int instances = 200;
  std::uint64_t seed = 12345;
  SupportMode support = SupportMode::kPairs;
};

// Randomized verification suites over seeded random instances
// (|S|<=8, |A|<=4, |G|<=3, gamma in {0.5, 0.9}, Dirichlet-perturbed policies).
std::vector<BoundReport> run_bounds_suite(const SuiteConfig& cfg);
std::vector<BoundReport> run_pdl_suite(const SuiteConfig& cfg);
std::vector<BoundReport> run_corollary_suite(const SuiteConfig& cfg);

}  // namespace crl
