#include "crl/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace crl {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

double mixture_return_gap(const GoalConditionedMdp& mdp, const TabularPolicy& pi_new,
                          const TabularPolicy& pi_old, const std::vector<double>& p) {
  double gap = 0.0;
  for (int g = 0; g < mdp.n_goals; ++g) {
    if (p[g] == 0.0) continue;
    gap += p[g] * (expected_return(mdp, pi_new, g) - expected_return(mdp, pi_old, g));
  }
  return gap;
}

void check_goal_dist(const GoalConditionedMdp& mdp, const std::vector<double>& p) {
  require(static_cast<int>(p.size()) == mdp.n_goals, "goal distribution size mismatch");
  double total = 0.0;
  for (double x : p) {
    require(x >= 0.0, "goal distribution: negative weight");
    total += x;
  }
  require(std::abs(total - 1.0) <= 1e-9, "goal distribution does not sum to 1");
}

}  // namespace

BoundReport make_bound_report(const std::string& name, double lhs, double rhs,
                              std::map<std::string, double> metadata) {
  if (!std::isfinite(lhs) || !std::isfinite(rhs))
    throw std::range_error("bound report '" + name + "': non-finite lhs/rhs");
  for (const auto& [key, value] : metadata)
    if (!std::isfinite(value))
      throw std::range_error("bound report '" + name + "': non-finite metadata " + key);
  BoundReport r;
  r.name = name;
  r.lhs = lhs;
  r.rhs = rhs;
  r.slack = rhs - lhs;
  r.holds = r.slack >= -kSlackTol;
  r.metadata = std::move(metadata);
  return r;
}

DivergenceInfiniteError::DivergenceInfiniteError(int s, int g)
    : std::runtime_error("infinite divergence: new policy leaves old support at state " +
                         std::to_string(s) + ", goal " + std::to_string(g)),
      state(s),
      goal(g) {}

double kl_categorical(const std::vector<double>& p, const std::vector<double>& q) {
  require(p.size() == q.size(), "kl: size mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

double tv_categorical(const std::vector<double>& p, const std::vector<double>& q) {
  require(p.size() == q.size(), "tv: size mismatch");
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return 0.5 * tv;
}

double advantage_magnitude(const GoalConditionedMdp& mdp, const TabularPolicy& anchor,
                           const TabularPolicy& visiting, int goal, SupportMode mode,
                           double support_eps) {
  ValueTables anchor_tables = policy_evaluation(mdp, anchor, goal);
  OccupancyMeasure d = occupancy(mdp, visiting, goal);
  double m = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    if (d.at(goal, s) <= support_eps) continue;
    for (int a = 0; a < mdp.n_actions; ++a) {
      if (mode == SupportMode::kPairs && visiting.prob(s, goal, a) <= support_eps) continue;
      m = std::max(m, std::abs(anchor_tables.adv[static_cast<std::size_t>(s) * mdp.n_actions + a]));
    }
  }
  return m;
}

std::pair<double, double> stability_plasticity_metrics(const GoalConditionedMdp& mdp,
                                                       const TabularPolicy& pi_new,
                                                       const TabularPolicy& pi_old,
                                                       const std::vector<double>& p_old,
                                                       const std::vector<double>& p_new) {
  check_goal_dist(mdp, p_old);
  check_goal_dist(mdp, p_new);
  double m_old = 0.0, m_new = 0.0;
  for (int g = 0; g < mdp.n_goals; ++g) {
    if (p_old[g] == 0.0 && p_new[g] == 0.0) continue;
    double mg = advantage_magnitude(mdp, pi_old, pi_new, g);
    m_old += p_old[g] * mg;
    m_new += p_new[g] * mg;
  }
  return {m_old, m_new};
}

double policy_divergence(const GoalConditionedMdp& mdp, const TabularPolicy& pi_new,
                         const TabularPolicy& pi_old, const OccupancyMeasure& weighting,
                         double support_eps) {
  require(weighting.n_states == mdp.n_states && weighting.n_goals == mdp.n_goals,
          "weighting dimension mismatch");
  double total = 0.0;
  for (int g = 0; g < mdp.n_goals; ++g) {
    double wg = weighting.goal_distribution.empty() ? 1.0 / mdp.n_goals
                                                    : weighting.goal_distribution[g];
    if (wg == 0.0) continue;
    for (int s = 0; s < mdp.n_states; ++s) {
      double ws = weighting.at(g, s);
      if (ws <= support_eps) continue;
      double kl = 0.0;
      for (int a = 0; a < mdp.n_actions; ++a) {
        double pn = pi_new.prob(s, g, a);
        if (pn == 0.0) continue;
        double po = pi_old.prob(s, g, a);
        if (po == 0.0) throw DivergenceInfiniteError(s, g);
        kl += pn * std::log(pn / po);
      }
      total += wg * ws * kl;
    }
  }
  double d = std::sqrt(2.0 * std::max(total, 0.0));
  if (!std::isfinite(d)) throw std::range_error("policy divergence is non-finite");
  return d;
}

BoundReport check_stability_bound(const GoalConditionedMdp& mdp, const TabularPolicy& pi_new,
                                  const TabularPolicy& pi_old, const std::vector<double>& p_old,
                                  SupportMode mode) {
  check_goal_dist(mdp, p_old);
  double lhs = std::abs(mixture_return_gap(mdp, pi_new, pi_old, p_old));

  double m_old = 0.0;
  for (int g = 0; g < mdp.n_goals; ++g) {
    if (p_old[g] == 0.0) continue;
    m_old += p_old[g] * advantage_magnitude(mdp, pi_old, pi_new, g, mode);
  }
  OccupancyMeasure w = mixture_occupancy(mdp, pi_old, p_old);
  double d_old = policy_divergence(mdp, pi_new, pi_old, w);

  double coeff = 2.0 * mdp.gamma / ((1.0 - mdp.gamma) * (1.0 - mdp.gamma));
  return make_bound_report("stability", lhs, coeff * m_old * d_old,
                           {{"M_old", m_old},
                            {"D_old", d_old},
                            {"gamma", mdp.gamma},
                            {"coefficient", coeff},
                            {"support_mode", mode == SupportMode::kPairs ? 0.0 : 1.0}});
}

BoundReport check_plasticity_bound(const GoalConditionedMdp& mdp, const TabularPolicy& pi_new,
                                   const TabularPolicy& pi_old, const std::vector<double>& p_new,
                                   SupportMode mode) {
  check_goal_dist(mdp, p_new);
  double lhs = mixture_return_gap(mdp, pi_new, pi_old, p_new);  // signed

  double m_new = 0.0;
  for (int g = 0; g < mdp.n_goals; ++g) {
    if (p_new[g] == 0.0) continue;
    m_new += p_new[g] * advantage_magnitude(mdp, pi_old, pi_new, g, mode);
  }
  OccupancyMeasure w = mixture_occupancy(mdp, pi_new, p_new);
  double d_new = policy_divergence(mdp, pi_new, pi_old, w);

  double coeff = 1.0 / (1.0 - mdp.gamma);
  return make_bound_report("plasticity", lhs, coeff * m_new * d_new,
                           {{"M_new", m_new},
                            {"D_new", d_new},
                            {"gamma", mdp.gamma},
                            {"coefficient", coeff},
                            {"support_mode", mode == SupportMode::kPairs ? 0.0 : 1.0}});
}

BoundReport check_corollary_v(const GoalConditionedMdp& mdp, int goal,
                              const std::vector<double>& v_approx, const TabularPolicy& anchor) {
  require(static_cast<int>(v_approx.size()) == mdp.n_states, "v_approx size mismatch");
  ValueTables anchor_tables = policy_evaluation(mdp, anchor, goal);

  double eps_v = 0.0;
  for (int s = 0; s < mdp.n_states; ++s)
    eps_v = std::max(eps_v, std::abs(v_approx[s] - anchor_tables.v[s]));

  double lhs = 0.0;
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double ev = 0.0;
      for (int s2 = 0; s2 < mdp.n_states; ++s2) ev += mdp.p(s, a, s2) * v_approx[s2];
      double adv_hat = mdp.r(s, a, goal) + mdp.gamma * ev - v_approx[s];
      lhs = std::max(lhs, std::abs(adv_hat));
    }
  }

  double r_max = mdp.r_max(goal);
  double v_inf = anchor_tables.max_abs_v();
  double rhs = r_max + (1.0 + mdp.gamma) * (v_inf + eps_v);
  return make_bound_report("corollary_v", lhs, rhs,
                           {{"eps_v", eps_v},
                            {"r_max", r_max},
                            {"v_inf", v_inf},
                            {"gamma", mdp.gamma}});
}

BoundReport check_corollary_q(const GoalConditionedMdp& mdp, int goal,
                              const std::vector<double>& q_approx, const TabularPolicy& anchor) {
  const int S = mdp.n_states, A = mdp.n_actions;
  require(static_cast<int>(q_approx.size()) == S * A, "q_approx size mismatch");
  ValueTables anchor_tables = policy_evaluation(mdp, anchor, goal);

  double eps_q = 0.0;
  for (int i = 0; i < S * A; ++i)
    eps_q = std::max(eps_q, std::abs(q_approx[i] - anchor_tables.q[i]));

  double lhs = 0.0;
  for (int s = 0; s < S; ++s) {
    double baseline = 0.0;
    for (int a = 0; a < A; ++a)
      baseline += anchor.prob(s, goal, a) * q_approx[static_cast<std::size_t>(s) * A + a];
    for (int a = 0; a < A; ++a)
      lhs = std::max(lhs, std::abs(q_approx[static_cast<std::size_t>(s) * A + a] - baseline));
  }

  double q_inf = anchor_tables.max_abs_q();
  double rhs = 2.0 * (q_inf + eps_q);
  return make_bound_report("corollary_q", lhs, rhs,
                           {{"eps_q", eps_q}, {"q_inf", q_inf}, {"gamma", mdp.gamma}});
}

BoundReport check_corollary_mc(const std::vector<double>& returns, double gamma, McPath path,
                               const McFit& fitted) {
  require(!returns.empty(), "mc corollary: empty returns");
  require(gamma >= 0.0 && gamma < 1.0, "mc corollary: gamma out of range");
  const int T = static_cast<int>(returns.size());

  double g_min = returns[0], g_max = returns[0];
  for (double g : returns) {
    g_min = std::min(g_min, g);
    g_max = std::max(g_max, g);
  }
  double g_abs = std::max(std::abs(g_min), std::abs(g_max));
  auto in_range = [&](double x) { return x >= g_min - 1e-12 && x <= g_max + 1e-12; };

  // realized rewards: G_t = r_t + gamma G_{t+1}
  std::vector<double> rewards(T);
  for (int t = 0; t < T; ++t) {
    double next = (t + 1 < T) ? returns[t + 1] : 0.0;
    rewards[t] = returns[t] - gamma * next;
  }

  double lhs = 0.0, rhs = 0.0;
  if (path == McPath::kV) {
    require(static_cast<int>(fitted.v.size()) == T, "mc corollary: v size mismatch");
    for (double x : fitted.v)
      require(in_range(x), "mc corollary: fitted value outside return range");
    for (int t = 0; t < T; ++t) {
      double v_next = (t + 1 < T) ? fitted.v[t + 1] : 0.0;  // terminal bootstrap
      lhs = std::max(lhs, std::abs(rewards[t] + gamma * v_next - fitted.v[t]));
    }
    rhs = 2.0 * (1.0 + gamma) * g_abs;
  } else {
    require(static_cast<int>(fitted.q.size()) == T, "mc corollary: q size mismatch");
    for (int t = 0; t < T; ++t) {
      const auto& row = fitted.q[t];
      require(!row.empty(), "mc corollary: empty q row");
      for (double x : row) require(in_range(x), "mc corollary: fitted value outside return range");
      std::vector<double> probs;
      if (!fitted.probs.empty()) {
        require(static_cast<int>(fitted.probs.size()) == T, "mc corollary: probs size mismatch");
        probs = fitted.probs[t];
        require(probs.size() == row.size(), "mc corollary: probs row size mismatch");
      } else {
        probs.assign(row.size(), 1.0 / static_cast<double>(row.size()));
      }
      double baseline = 0.0;
      for (std::size_t a = 0; a < row.size(); ++a) baseline += probs[a] * row[a];
      for (double q : row) lhs = std::max(lhs, std::abs(q - baseline));
    }
    rhs = 2.0 * g_abs;
  }
  return make_bound_report(path == McPath::kV ? "mc_bound_v" : "mc_bound_q", lhs, rhs,
                           {{"g_abs", g_abs}, {"g_min", g_min}, {"g_max", g_max},
                            {"gamma", gamma}});
}

// ---- randomized suites ----

namespace {

struct Instance {
  GoalConditionedMdp mdp;
  TabularPolicy pi_old, pi_new;
  std::vector<double> p_old, p_new;
  int goal = 0;
};

Instance draw_instance(std::uint64_t seed, int index) {
  Rng rng = make_rng(seed, static_cast<std::uint64_t>(index));
  Instance inst;
  int S = uniform_int(rng, 2, 8);
  int A = uniform_int(rng, 2, 4);
  int G = uniform_int(rng, 1, 3);
  double gamma = (index % 2 == 0) ? 0.5 : 0.9;
  inst.mdp = random_mdp(S, A, G, gamma, rng);
  inst.pi_old = random_policy(S, G, A, rng);
  constexpr double concs[3] = {4.0, 16.0, 64.0};
  double conc = concs[index % 3];
  inst.pi_new = perturb_policy(inst.pi_old, conc, rng);
  inst.p_old = dirichlet(rng, G, 1.0);
  inst.p_new = dirichlet(rng, G, 1.0);
  inst.goal = uniform_int(rng, 0, G - 1);
  return inst;
}

void tag(BoundReport& r, int index) { r.metadata["instance"] = static_cast<double>(index); }

}  // namespace

std::vector<BoundReport> run_bounds_suite(const SuiteConfig& cfg) {
  std::vector<BoundReport> out;
  out.reserve(2 * static_cast<std::size_t>(cfg.instances));
  for (int i = 0; i < cfg.instances; ++i) {
    Instance inst = draw_instance(cfg.seed, i);
    BoundReport stab =
        check_stability_bound(inst.mdp, inst.pi_new, inst.pi_old, inst.p_old, cfg.support);
    BoundReport plas =
        check_plasticity_bound(inst.mdp, inst.pi_new, inst.pi_old, inst.p_new, cfg.support);
    tag(stab, i);
    tag(plas, i);
    out.push_back(std::move(stab));
    out.push_back(std::move(plas));
  }
  return out;
}

std::vector<BoundReport> run_pdl_suite(const SuiteConfig& cfg) {
  std::vector<BoundReport> out;
  out.reserve(cfg.instances);
  for (int i = 0; i < cfg.instances; ++i) {
    Instance inst = draw_instance(cfg.seed, i);
    double residual = pdl_residual(inst.mdp, inst.pi_new, inst.pi_old, inst.goal);
    BoundReport r = make_bound_report("pdl_identity", residual, 1e-9,
                                      {{"gamma", inst.mdp.gamma}});
    tag(r, i);
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<BoundReport> run_corollary_suite(const SuiteConfig& cfg) {
  std::vector<BoundReport> out;
  for (int i = 0; i < cfg.instances; ++i) {
    Instance inst = draw_instance(cfg.seed, i);
    Rng rng = make_rng(cfg.seed ^ 0xabcdef, static_cast<std::uint64_t>(i));
    ValueTables vt = policy_evaluation(inst.mdp, inst.pi_old, inst.goal);

    for (double eps : {0.0, 0.1, 0.5}) {
      std::vector<double> v_approx = vt.v;
      if (eps > 0.0)
        for (auto& x : v_approx) x += uniform(rng, -eps, eps);
      BoundReport r = check_corollary_v(inst.mdp, inst.goal, v_approx, inst.pi_old);
      r.metadata["eps_target"] = eps;
      tag(r, i);
      out.push_back(std::move(r));
    }

    std::vector<double> q_approx = vt.q;
    for (auto& x : q_approx) x += uniform(rng, -0.3, 0.3);
    BoundReport rq = check_corollary_q(inst.mdp, inst.goal, q_approx, inst.pi_old);
    tag(rq, i);
    out.push_back(std::move(rq));

    // trajectory returns from bounded rewards
    int T = uniform_int(rng, 3, 10);
    std::vector<double> rewards(T);
    for (auto& x : rewards) x = uniform(rng, -1.0, 1.0);
    std::vector<double> returns(T);
    double acc = 0.0;
    for (int t = T - 1; t >= 0; --t) {
      acc = rewards[t] + inst.mdp.gamma * acc;
      returns[t] = acc;
    }
    double g_min = *std::min_element(returns.begin(), returns.end());
    double g_max = *std::max_element(returns.begin(), returns.end());

    McFit fit_v;
    fit_v.v.resize(T);
    for (auto& x : fit_v.v) x = uniform(rng, g_min, g_max);
    BoundReport rv = check_corollary_mc(returns, inst.mdp.gamma, McPath::kV, fit_v);
    tag(rv, i);
    out.push_back(std::move(rv));

    McFit fit_q;
    fit_q.q.assign(T, {});
    int A = uniform_int(rng, 2, 4);
    for (auto& row : fit_q.q) {
      row.resize(A);
      for (auto& x : row) x = uniform(rng, g_min, g_max);
    }
    BoundReport rmq = check_corollary_mc(returns, inst.mdp.gamma, McPath::kQ, fit_q);
    tag(rmq, i);
    out.push_back(std::move(rmq));
  }
  return out;
}

}  // namespace crl
