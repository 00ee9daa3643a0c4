#include "crl/mdp.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace crl {

namespace {

constexpr double kRowTol = 1e-9;

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

void check_simplex_row(const double* row, int n, const std::string& what) {
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    check(row[i] >= 0.0, what + ": negative probability");
    total += row[i];
  }
  check(std::abs(total - 1.0) <= kRowTol, what + ": row does not sum to 1");
}

// P^pi and r^pi for one goal.
void policy_kernel(const GoalConditionedMdp& mdp, const TabularPolicy& policy, int goal,
                   Eigen::MatrixXd& p_pi, Eigen::VectorXd& r_pi) {
  const int S = mdp.n_states, A = mdp.n_actions;
  p_pi.setZero(S, S);
  r_pi.setZero(S);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      double w = policy.prob(s, goal, a);
      if (w == 0.0) continue;
      r_pi(s) += w * mdp.r(s, a, goal);
      for (int s2 = 0; s2 < S; ++s2) p_pi(s, s2) += w * mdp.p(s, a, s2);
    }
  }
}

void check_shapes(const GoalConditionedMdp& mdp, const TabularPolicy& policy) {
  check(policy.n_states == mdp.n_states && policy.n_actions == mdp.n_actions &&
            policy.n_goals == mdp.n_goals,
        "policy/mdp dimension mismatch");
}

void check_goal(const GoalConditionedMdp& mdp, int goal) {
  check(goal >= 0 && goal < mdp.n_goals, "goal index out of range");
}

}  // namespace

double GoalConditionedMdp::r_max(int g) const {
  double m = 0.0;
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) m = std::max(m, std::abs(r(s, a, g)));
  return m;
}

void GoalConditionedMdp::validate() const {
  check(n_states > 0 && n_actions > 0 && n_goals > 0, "mdp: nonpositive dimension");
  check(gamma >= 0.0 && gamma < 1.0, "mdp: gamma must lie in [0, 1)");
  const std::size_t S = n_states, A = n_actions, G = n_goals;
  check(transition.size() == S * A * S, "mdp: transition size mismatch");
  check(reward.size() == S * A * G, "mdp: reward size mismatch");
  check(initial_dist.size() == G * S, "mdp: initial_dist size mismatch");
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t a = 0; a < A; ++a)
      check_simplex_row(&transition[(s * A + a) * S], n_states, "mdp transition");
  for (std::size_t g = 0; g < G; ++g)
    check_simplex_row(&initial_dist[g * S], n_states, "mdp initial_dist");
  for (double x : reward) check(std::isfinite(x), "mdp: non-finite reward");
}

void TabularPolicy::validate() const {
  check(n_states > 0 && n_actions > 0 && n_goals > 0, "policy: nonpositive dimension");
  const std::size_t S = n_states, A = n_actions, G = n_goals;
  check(pi.size() == S * G * A, "policy: size mismatch");
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t g = 0; g < G; ++g)
      check_simplex_row(&pi[(s * G + g) * A], n_actions, "policy");
}

double ValueTables::max_abs_v() const {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

double ValueTables::max_abs_q() const {
  double m = 0.0;
  for (double x : q) m = std::max(m, std::abs(x));
  return m;
}

ValueTables policy_evaluation(const GoalConditionedMdp& mdp, const TabularPolicy& policy,
                              int goal) {
  check_shapes(mdp, policy);
  check_goal(mdp, goal);
  const int S = mdp.n_states, A = mdp.n_actions;

  Eigen::MatrixXd p_pi;
  Eigen::VectorXd r_pi;
  policy_kernel(mdp, policy, goal, p_pi, r_pi);

  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(S, S) - mdp.gamma * p_pi;
  Eigen::VectorXd v = lhs.partialPivLu().solve(r_pi);

  ValueTables out;
  out.goal = goal;
  out.v.assign(v.data(), v.data() + S);
  out.q.resize(static_cast<std::size_t>(S) * A);
  out.adv.resize(static_cast<std::size_t>(S) * A);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < A; ++a) {
      double ev = 0.0;
      for (int s2 = 0; s2 < S; ++s2) ev += mdp.p(s, a, s2) * v(s2);
      double q = mdp.r(s, a, goal) + mdp.gamma * ev;
      out.q[static_cast<std::size_t>(s) * A + a] = q;
      out.adv[static_cast<std::size_t>(s) * A + a] = q - v(s);
    }
  }
  return out;
}

OccupancyMeasure occupancy(const GoalConditionedMdp& mdp, const TabularPolicy& policy, int goal) {
  check_shapes(mdp, policy);
  check_goal(mdp, goal);
  const int S = mdp.n_states;

  Eigen::MatrixXd p_pi;
  Eigen::VectorXd r_pi;
  policy_kernel(mdp, policy, goal, p_pi, r_pi);

  Eigen::VectorXd mu(S);
  for (int s = 0; s < S; ++s) mu(s) = mdp.mu0(goal, s);
  Eigen::MatrixXd lhs = Eigen::MatrixXd::Identity(S, S) - mdp.gamma * p_pi.transpose();
  Eigen::VectorXd d = (1.0 - mdp.gamma) * lhs.partialPivLu().solve(mu);

  OccupancyMeasure out;
  out.n_states = S;
  out.n_goals = mdp.n_goals;
  out.d.assign(static_cast<std::size_t>(mdp.n_goals) * S, 0.0);
  out.goal_distribution.assign(mdp.n_goals, 0.0);
  out.goal_distribution[goal] = 1.0;
  for (int s = 0; s < S; ++s) out.d[static_cast<std::size_t>(goal) * S + s] = d(s);
  return out;
}

OccupancyMeasure mixture_occupancy(const GoalConditionedMdp& mdp, const TabularPolicy& policy,
                                   const std::vector<double>& goal_dist) {
  check(static_cast<int>(goal_dist.size()) == mdp.n_goals, "goal distribution size mismatch");
  check_simplex_row(goal_dist.data(), mdp.n_goals, "goal distribution");

  OccupancyMeasure out;
  out.n_states = mdp.n_states;
  out.n_goals = mdp.n_goals;
  out.d.assign(static_cast<std::size_t>(mdp.n_goals) * mdp.n_states, 0.0);
  out.goal_distribution = goal_dist;
  for (int g = 0; g < mdp.n_goals; ++g) {
    if (goal_dist[g] == 0.0) continue;
    OccupancyMeasure one = occupancy(mdp, policy, g);
    for (int s = 0; s < mdp.n_states; ++s)
      out.d[static_cast<std::size_t>(g) * mdp.n_states + s] = one.at(g, s);
  }
  return out;
}

double expected_return(const GoalConditionedMdp& mdp, const TabularPolicy& policy, int goal) {
  ValueTables vt = policy_evaluation(mdp, policy, goal);
  double j = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) j += mdp.mu0(goal, s) * vt.v[s];
  return j;
}

double pdl_residual(const GoalConditionedMdp& mdp, const TabularPolicy& pi_new,
                    const TabularPolicy& pi_old, int goal) {
  ValueTables old_tables = policy_evaluation(mdp, pi_old, goal);
  OccupancyMeasure d_new = occupancy(mdp, pi_new, goal);

  double j_old = 0.0, j_new = 0.0;
  ValueTables new_tables = policy_evaluation(mdp, pi_new, goal);
  for (int s = 0; s < mdp.n_states; ++s) {
    j_old += mdp.mu0(goal, s) * old_tables.v[s];
    j_new += mdp.mu0(goal, s) * new_tables.v[s];
  }

  double weighted_adv = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    double inner = 0.0;
    for (int a = 0; a < mdp.n_actions; ++a)
      inner += pi_new.prob(s, goal, a) * old_tables.adv[static_cast<std::size_t>(s) * mdp.n_actions + a];
    weighted_adv += d_new.at(goal, s) * inner;
  }
  double rhs = weighted_adv / (1.0 - mdp.gamma);
  return std::abs((j_new - j_old) - rhs);
}

GoalConditionedMdp random_mdp(int n_states, int n_actions, int n_goals, double gamma, Rng& rng) {
  GoalConditionedMdp mdp;
  mdp.n_states = n_states;
  mdp.n_actions = n_actions;
  mdp.n_goals = n_goals;
  mdp.gamma = gamma;
  mdp.transition.reserve(static_cast<std::size_t>(n_states) * n_actions * n_states);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) {
      auto row = dirichlet(rng, n_states, 1.0);
      mdp.transition.insert(mdp.transition.end(), row.begin(), row.end());
    }
  mdp.reward.resize(static_cast<std::size_t>(n_states) * n_actions * n_goals);
  for (auto& x : mdp.reward) x = uniform(rng, -1.0, 1.0);
  mdp.initial_dist.reserve(static_cast<std::size_t>(n_goals) * n_states);
  for (int g = 0; g < n_goals; ++g) {
    auto row = dirichlet(rng, n_states, 1.0);
    mdp.initial_dist.insert(mdp.initial_dist.end(), row.begin(), row.end());
  }
  return mdp;
}

TabularPolicy random_policy(int n_states, int n_goals, int n_actions, Rng& rng) {
  TabularPolicy p;
  p.n_states = n_states;
  p.n_goals = n_goals;
  p.n_actions = n_actions;
  p.pi.reserve(static_cast<std::size_t>(n_states) * n_goals * n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int g = 0; g < n_goals; ++g) {
      auto row = dirichlet(rng, n_actions, 1.0);
      p.pi.insert(p.pi.end(), row.begin(), row.end());
    }
  return p;
}

TabularPolicy perturb_policy(const TabularPolicy& base, double concentration, Rng& rng) {
  TabularPolicy out = base;
  std::vector<double> alpha(base.n_actions);
  for (int s = 0; s < base.n_states; ++s)
    for (int g = 0; g < base.n_goals; ++g) {
      for (int a = 0; a < base.n_actions; ++a)
        alpha[a] = concentration * base.prob(s, g, a) + 1e-3;
      auto row = dirichlet(rng, alpha);
      for (int a = 0; a < base.n_actions; ++a) out.prob_ref(s, g, a) = row[a];
    }
  return out;
}

std::string mdp_to_json(const GoalConditionedMdp& mdp) {
  nlohmann::json j;
  j["n_states"] = mdp.n_states;
  j["n_actions"] = mdp.n_actions;
  j["n_goals"] = mdp.n_goals;
  j["gamma"] = mdp.gamma;
  j["transition"] = mdp.transition;
  j["reward"] = mdp.reward;
  j["initial_dist"] = mdp.initial_dist;
  return j.dump(2);
}

GoalConditionedMdp mdp_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  GoalConditionedMdp mdp;
  mdp.n_states = j.at("n_states").get<int>();
  mdp.n_actions = j.at("n_actions").get<int>();
  mdp.n_goals = j.at("n_goals").get<int>();
  mdp.gamma = j.at("gamma").get<double>();
  mdp.transition = j.at("transition").get<std::vector<double>>();
  mdp.reward = j.at("reward").get<std::vector<double>>();
  mdp.initial_dist = j.at("initial_dist").get<std::vector<double>>();
  mdp.validate();
  return mdp;
}

}  // namespace crl
