#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "crl/agent.hpp"

using namespace crl;

namespace {

TaskSpec grid_task(std::uint64_t layout_seed, std::vector<int> goal_ids, double gamma,
                   int horizon = 20, int grid_size = 2) {
  TaskSpec s;
  s.family = EnvFamily::kGridPickPlace;
  s.grid_size = grid_size;
  s.layout_seed = layout_seed;
  s.goal_ids = std::move(goal_ids);
  s.horizon = horizon;
  s.reward_mode = RewardMode::kShaped;
  s.gamma = gamma;
  s.goal_code_dim = 4;
  return s;
}

TaskSpec point_task(std::uint64_t layout_seed, std::vector<int> goal_ids, double gamma,
                    int horizon = 20) {
  TaskSpec s;
  s.family = EnvFamily::kPointReach;
  s.layout_seed = layout_seed;
  s.goal_ids = std::move(goal_ids);
  s.horizon = horizon;
  s.reward_mode = RewardMode::kShaped;
  s.gamma = gamma;
  s.goal_code_dim = 4;
  return s;
}

AgentConfig tiny_config() {
  AgentConfig c;
  c.ppo.gamma = 0.9;
  c.ppo.rollout_episodes = 4;
  c.ppo.update_times = 2;
  c.ppo.total_steps = 2;
  c.hidden = {16};
  c.eval_episodes = 4;
  c.buffer_capacity = 64;
  c.buffer_batch = 16;
  return c;
}

bool same_flat(const ParameterStore& a, const ParameterStore& b) {
  if (a.flat.size() != b.flat.size()) return false;
  for (std::size_t i = 0; i < a.flat.size(); ++i)
    if (a.flat[i] != b.flat[i]) return false;
  return true;
}

double slice_max_abs(const std::vector<double>& flat, const HeadSlice& s) {
  double m = 0.0;
  for (int i = s.offset; i < s.offset + s.size; ++i)
    m = std::max(m, std::abs(flat[static_cast<std::size_t>(i)]));
  return m;
}

ParameterStore zeroed_net(int obs_dim, int goal_dim, ActionSpec action,
                          ValueMode mode = ValueMode::kV) {
  ParameterStore ps = init_network(obs_dim, goal_dim, {4}, action, mode, 99);
  std::fill(ps.flat.begin(), ps.flat.end(), 0.0);
  return ps;
}

RolloutStep make_step(std::vector<double> obs, std::vector<double> goal, int action,
                      double logp_behavior, double advantage) {
  RolloutStep s;
  s.t.obs = std::move(obs);
  s.t.goal_code = std::move(goal);
  s.t.action_discrete = action;
  s.t.log_prob_behavior = logp_behavior;
  s.advantage = advantage;
  return s;
}

// A prepared single-episode batch wrapper around hand-written steps.
RolloutBatch hand_batch(std::vector<RolloutStep> steps) {
  RolloutBatch b;
  b.steps = std::move(steps);
  b.episode_starts = {0};
  b.n_episodes = 1;
  b.prepared = true;
  return b;
}

BufferRecord hand_record_categorical(std::vector<double> obs, std::vector<double> goal,
                                     int action, std::vector<double> anchor_probs) {
  BufferRecord r;
  r.obs = std::move(obs);
  r.goal_code = std::move(goal);
  r.action_discrete = action;
  r.anchor_probs = std::move(anchor_probs);
  r.anchor_log_prob = std::log(r.anchor_probs[static_cast<std::size_t>(r.action_discrete)]);
  return r;
}

}  // namespace

TEST_CASE("mc returns discount correctly") {
  auto g = mc_returns({0.0, 0.0, 1.0}, 0.5);
  CHECK(g == std::vector<double>{0.25, 0.5, 1.0});
  auto r = mc_returns({0.3, -0.2, 0.7}, 0.0);
  CHECK(r == std::vector<double>{0.3, -0.2, 0.7});
  CHECK(mc_returns({0.0, 0.0}, 0.9) == std::vector<double>{0.0, 0.0});
  CHECK(mc_returns({}, 0.9).empty());
}

TEST_CASE("gae lambda limits recover td errors and mc returns") {
  std::vector<double> rewards = {0.5, -1.0, 2.0, 0.25};
  std::vector<double> values = {0.1, -0.3, 0.8, 0.4};
  double gamma = 0.9;

  auto td = gae_advantages(rewards, values, gamma, 0.0);
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    double next_v = i + 1 < values.size() ? values[i + 1] : 0.0;
    CHECK(td[i] == doctest::Approx(rewards[i] + gamma * next_v - values[i]).epsilon(1e-12));
  }

  std::vector<double> zeros(rewards.size(), 0.0);
  auto full = gae_advantages(rewards, zeros, gamma, 1.0);
  auto g = mc_returns(rewards, gamma);
  for (std::size_t i = 0; i < rewards.size(); ++i)
    CHECK(full[i] == doctest::Approx(g[i]).epsilon(1e-12));
}

TEST_CASE("gae hand value") {
  auto adv = gae_advantages({1.0, 1.0}, {0.0, 0.0}, 0.9, 0.95);
  CHECK(adv[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(adv[0] == doctest::Approx(1.855).epsilon(1e-12));
  CHECK_THROWS_AS(gae_advantages({1.0}, {0.0, 0.0}, 0.9, 0.95), std::invalid_argument);
}

TEST_CASE("collect_rollouts is deterministic and stores exact behavior log-probs") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kV, 21);
  RolloutBatch a = collect_rollouts(*env, ps, 4, 500);
  RolloutBatch b = collect_rollouts(*env, ps, 4, 500);
  REQUIRE(a.steps.size() == b.steps.size());
  CHECK(a.n_episodes == 4);
  CHECK(a.episode_starts.size() == 4);
  CHECK(a.episode_end(3) == static_cast<int>(a.steps.size()));
  for (std::size_t i = 0; i < a.steps.size(); ++i) {
    CHECK(a.steps[i].t.action_discrete == b.steps[i].t.action_discrete);
    CHECK(a.steps[i].t.reward == b.steps[i].t.reward);
    CHECK(a.steps[i].t.log_prob_behavior == b.steps[i].t.log_prob_behavior);
    CHECK(a.steps[i].t.obs == b.steps[i].t.obs);
  }

  int prev_episode = 0;
  int expect_step = 0;
  for (const RolloutStep& s : a.steps) {
    CHECK(s.goal_index == s.episode % 2);
    if (s.episode != prev_episode) {
      prev_episode = s.episode;
      expect_step = 0;
    }
    CHECK(s.t.step_index == expect_step);
    ++expect_step;
    ActionDistribution d = forward_policy(ps, s.t.obs, s.t.goal_code);
    CHECK(d.log_prob_discrete(s.t.action_discrete) == s.t.log_prob_behavior);
  }
  for (int e = 0; e < a.n_episodes; ++e)
    CHECK(a.steps[static_cast<std::size_t>(a.episode_end(e)) - 1].t.done);

  RolloutBatch c = collect_rollouts(*env, ps, 4, 501);
  bool differs = c.steps.size() != a.steps.size();
  for (std::size_t i = 0; !differs && i < a.steps.size(); ++i)
    differs = a.steps[i].t.action_discrete != c.steps[i].t.action_discrete;
  CHECK(differs);
  CHECK_THROWS_AS(collect_rollouts(*env, ps, 0, 1), std::invalid_argument);
}

TEST_CASE("prepare_batch fills returns and normalized advantages") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kV, 22);
  RolloutBatch batch = collect_rollouts(*env, ps, 4, 7);
  PPOConfig cfg;
  cfg.gamma = 0.9;
  cfg.normalize_advantages = false;
  prepare_batch(batch, ps, cfg);
  REQUIRE(batch.prepared);
  for (int e = 0; e < batch.n_episodes; ++e) {
    int b = batch.episode_starts[static_cast<std::size_t>(e)];
    int end = batch.episode_end(e);
    double g = 0.0;
    for (int i = end; i-- > b;) {
      g = batch.steps[static_cast<std::size_t>(i)].t.reward + cfg.gamma * g;
      CHECK(batch.steps[static_cast<std::size_t>(i)].mc_return ==
            doctest::Approx(g).epsilon(1e-12));
    }
  }
  for (const RolloutStep& s : batch.steps)
    CHECK(s.value_pred ==
          doctest::Approx(forward_value(ps, CriticHead::kMc, s.t.obs, s.t.goal_code))
              .epsilon(1e-12));

  RolloutBatch norm = collect_rollouts(*env, ps, 4, 7);
  cfg.normalize_advantages = true;
  prepare_batch(norm, ps, cfg);
  double mean = 0.0;
  for (const RolloutStep& s : norm.steps) mean += s.advantage;
  mean /= static_cast<double>(norm.steps.size());
  double var = 0.0;
  for (const RolloutStep& s : norm.steps) var += (s.advantage - mean) * (s.advantage - mean);
  var /= static_cast<double>(norm.steps.size());
  CHECK(std::abs(mean) < 1e-10);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("prepare_batch Q path uses Q(s,a) minus expected Q") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kQ, 11);
  RolloutBatch batch = collect_rollouts(*env, ps, 2, 7);
  PPOConfig cfg;
  cfg.gamma = 0.9;
  cfg.normalize_advantages = false;
  prepare_batch(batch, ps, cfg);
  for (const RolloutStep& s : batch.steps) {
    std::vector<double> q = forward_q_values(ps, CriticHead::kMc, s.t.obs, s.t.goal_code);
    ActionDistribution d = forward_policy(ps, s.t.obs, s.t.goal_code);
    double v = 0.0;
    for (std::size_t a = 0; a < q.size(); ++a) v += d.probs[a] * q[a];
    CHECK(s.value_pred == doctest::Approx(v).epsilon(1e-12));
    CHECK(s.advantage ==
          doctest::Approx(q[static_cast<std::size_t>(s.t.action_discrete)] - v)
              .epsilon(1e-12));
  }
}

TEST_CASE("prepare_batch continuous Q path evaluates Q at the policy mean") {
  auto env = make_task(point_task(5, {0}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kQ, 12);
  RolloutBatch batch = collect_rollouts(*env, ps, 2, 9);
  PPOConfig cfg;
  cfg.gamma = 0.9;
  cfg.normalize_advantages = false;
  prepare_batch(batch, ps, cfg);
  for (const RolloutStep& s : batch.steps) {
    ActionDistribution d = forward_policy(ps, s.t.obs, s.t.goal_code);
    double q_taken = forward_q_value_continuous(ps, CriticHead::kMc, s.t.obs,
                                                s.t.action_continuous, s.t.goal_code);
    double q_mean =
        forward_q_value_continuous(ps, CriticHead::kMc, s.t.obs, d.mean, s.t.goal_code);
    CHECK(s.advantage == doctest::Approx(q_taken - q_mean).epsilon(1e-12));
  }
}

TEST_CASE("approx_kl hand value on a uniform policy") {
  ParameterStore ps = zeroed_net(2, 1, ActionSpec{ActionKind::kCategorical, 2});
  RolloutBatch batch = hand_batch({
      make_step({0.1, -0.2}, {1.0}, 0, std::log(0.6), 0.0),
      make_step({0.4, 0.3}, {1.0}, 1, std::log(0.3), 0.0),
  });
  // mean(log pi_b - log pi_theta) with pi_theta = 1/2 everywhere.
  CHECK(approx_kl(batch, ps) == doctest::Approx(-0.16425203348601807).epsilon(1e-12));
  CHECK_FALSE(kl_early_stop(batch, ps, 0.01));
  CHECK(kl_early_stop(batch, ps, -1.0));

  // Fresh rollouts score exactly zero against the policy that produced them.
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore net = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                    env->action_spec(), ValueMode::kV, 4);
  RolloutBatch fresh = collect_rollouts(*env, net, 2, 3);
  CHECK(approx_kl(fresh, net) == 0.0);
  CHECK_FALSE(kl_early_stop(fresh, net, 0.0));
}

TEST_CASE("ppo_loss equals minus mean advantage at the behavior policy") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kV, 31);
  RolloutBatch batch = collect_rollouts(*env, ps, 4, 13);
  PPOConfig cfg;
  cfg.gamma = 0.9;
  prepare_batch(batch, ps, cfg);
  Tape tape;
  GraphNet net(tape, ps);
  Tape::Id id = ppo_loss(net, batch, 0.2);
  double mean_adv = 0.0;
  for (const RolloutStep& s : batch.steps) mean_adv += s.advantage;
  mean_adv /= static_cast<double>(batch.steps.size());
  CHECK(tape.value(id) == doctest::Approx(-mean_adv).epsilon(1e-12));
}

TEST_CASE("ppo_loss single-sample hand value with clipping active") {
  ParameterStore ps = zeroed_net(2, 1, ActionSpec{ActionKind::kCategorical, 2});
  // ratio = pi_theta / pi_b = 1.5, advantage 2: min(3.0, 1.2 * 2) = 2.4.
  double logp_b = std::log(0.5) - std::log(1.5);
  RolloutBatch batch = hand_batch({make_step({0.0, 0.0}, {1.0}, 0, logp_b, 2.0)});
  Tape tape;
  GraphNet net(tape, ps);
  CHECK(tape.value(ppo_loss(net, batch, 0.2)) == doctest::Approx(-2.4).epsilon(1e-12));

  // Negative advantage: min(1.5 * -2, 1.2 * -2) = -3.
  RolloutBatch neg = hand_batch({make_step({0.0, 0.0}, {1.0}, 0, logp_b, -2.0)});
  Tape tape2;
  GraphNet net2(tape2, ps);
  CHECK(tape2.value(ppo_loss(net2, neg, 0.2)) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("ppo_loss with zero advantages has exactly zero gradient") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kV, 32);
  RolloutBatch batch = collect_rollouts(*env, ps, 2, 13);
  for (RolloutStep& s : batch.steps) s.advantage = 0.0;
  batch.prepared = true;
  Tape tape;
  GraphNet net(tape, ps);
  Tape::Id id = ppo_loss(net, batch, 0.2);
  CHECK(tape.value(id) == 0.0);
  tape.backward(id);
  GradientBundle g = net.gradients();
  for (double v : g.flat) CHECK(v == 0.0);
}

TEST_CASE("ppo_loss rejects unprepared batches") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kV, 33);
  RolloutBatch batch = collect_rollouts(*env, ps, 1, 2);
  Tape tape;
  GraphNet net(tape, ps);
  CHECK_THROWS_AS(ppo_loss(net, batch, 0.2), std::logic_error);
}

TEST_CASE("ppo_loss entropy bonus hand value on the uniform policy") {
  ParameterStore ps = zeroed_net(2, 1, ActionSpec{ActionKind::kCategorical, 2});
  // ratio 1, advantage 2: surrogate 2. Uniform over two actions: entropy log 2.
  RolloutBatch batch = hand_batch({make_step({0.0, 0.0}, {1.0}, 0, std::log(0.5), 2.0)});
  Tape tape;
  GraphNet net(tape, ps);
  double expected = -2.0 - 0.1 * std::log(2.0);
  CHECK(tape.value(ppo_loss(net, batch, 0.2, 0.1)) ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("ppo_loss entropy bonus subtracts the mean policy entropy") {
  PPOConfig cfg;
  cfg.gamma = 0.9;
  const double coef = 0.07;

  SUBCASE("categorical") {
    auto env = make_task(grid_task(3, {0, 1}, 0.9));
    ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                     env->action_spec(), ValueMode::kV, 34);
    RolloutBatch batch = collect_rollouts(*env, ps, 3, 5);
    prepare_batch(batch, ps, cfg);
    Tape t0;
    GraphNet n0(t0, ps);
    double base = t0.value(ppo_loss(n0, batch, 0.2));
    double mean_h = 0.0;
    for (const RolloutStep& s : batch.steps) {
      ActionDistribution d = forward_policy(ps, s.t.obs, s.t.goal_code);
      for (double p : d.probs)
        if (p > 0.0) mean_h -= p * std::log(p);
    }
    mean_h /= static_cast<double>(batch.steps.size());
    Tape t1;
    GraphNet n1(t1, ps);
    CHECK(t1.value(ppo_loss(n1, batch, 0.2, coef)) ==
          doctest::Approx(base - coef * mean_h).epsilon(1e-12));
  }

  SUBCASE("gaussian") {
    auto env = make_task(point_task(5, {0}, 0.9));
    ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                     env->action_spec(), ValueMode::kV, 35);
    RolloutBatch batch = collect_rollouts(*env, ps, 3, 5);
    prepare_batch(batch, ps, cfg);
    Tape t0;
    GraphNet n0(t0, ps);
    double base = t0.value(ppo_loss(n0, batch, 0.2));
    const double half_log_2pi_e = 0.5 * (std::log(2.0 * 3.14159265358979323846) + 1.0);
    double mean_h = 0.0;
    for (const RolloutStep& s : batch.steps) {
      ActionDistribution d = forward_policy(ps, s.t.obs, s.t.goal_code);
      for (double ls : d.log_std) mean_h += ls + half_log_2pi_e;
    }
    mean_h /= static_cast<double>(batch.steps.size());
    Tape t1;
    GraphNet n1(t1, ps);
    CHECK(t1.value(ppo_loss(n1, batch, 0.2, coef)) ==
          doctest::Approx(base - coef * mean_h).epsilon(1e-12));
  }
}

TEST_CASE("ppo_loss and PPOConfig reject a negative entropy coefficient") {
  ParameterStore ps = zeroed_net(2, 1, ActionSpec{ActionKind::kCategorical, 2});
  RolloutBatch batch = hand_batch({make_step({0.0, 0.0}, {1.0}, 0, std::log(0.5), 1.0)});
  Tape tape;
  GraphNet net(tape, ps);
  CHECK_THROWS_AS(ppo_loss(net, batch, 0.2, -0.01), std::invalid_argument);
  PPOConfig bad;
  bad.entropy_coef = -1e-9;
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  PPOConfig zero_targ;
  zero_targ.d_targ = 0.0;
  CHECK_THROWS_AS(zero_targ.validate(), std::invalid_argument);
}

TEST_CASE("kl_old_loss hand values for categorical policies") {
  ParameterStore ps = zeroed_net(2, 1, ActionSpec{ActionKind::kCategorical, 2});
  // Action-head bias (log 0.9, log 0.1) makes pi_theta = (0.9, 0.1).
  int bias0 = ps.action_head.offset + ps.action_head.size - 2;
  ps.flat[static_cast<std::size_t>(bias0)] = std::log(0.9);
  ps.flat[static_cast<std::size_t>(bias0) + 1] = std::log(0.1);
  {
    ActionDistribution d = forward_policy(ps, {0.0, 0.0}, {1.0});
    REQUIRE(d.probs[0] == doctest::Approx(0.9).epsilon(1e-12));
  }
  std::vector<BufferRecord> store = {
      hand_record_categorical({0.0, 0.0}, {1.0}, 0, {0.5, 0.5})};
  std::vector<const BufferRecord*> recs = {&store[0]};

  Tape tape;
  GraphNet net(tape, ps);
  // KL((.5,.5) || (.9,.1)) = log(5/3).
  CHECK(tape.value(kl_old_loss(net, recs, KlMode::kKlDiv, 1.0)) ==
        doctest::Approx(0.5108256237659907).epsilon(1e-12));
  CHECK(tape.value(kl_old_loss(net, recs, KlMode::kKlDiv, 2.0)) ==
        doctest::Approx(2.0 * 0.5108256237659907).epsilon(1e-12));
  // Behavior cloning on stored action 0 is the cross-entropy -log 0.9.
  CHECK(tape.value(kl_old_loss(net, recs, KlMode::kBcMse, 1.0)) ==
        doctest::Approx(0.10536051565782628).epsilon(1e-12));
}

TEST_CASE("kl_old_loss hand values for gaussian policies") {
  ParameterStore ps = zeroed_net(2, 1, ActionSpec{ActionKind::kGaussian, 2});
  BufferRecord r;
  r.obs = {0.0, 0.0};
  r.goal_code = {1.0};
  r.action_continuous = {0.3, -0.4};
  r.anchor_mean = {0.0, 0.0};
  r.anchor_log_std = {std::log(2.0), std::log(2.0)};
  r.anchor_log_prob = 0.0;
  std::vector<const BufferRecord*> recs = {&r};

  Tape tape;
  GraphNet net(tape, ps);
  // Per dim: (0 - log 2) + 4/2 - 1/2, twice: 3 - 2 log 2.
  CHECK(tape.value(kl_old_loss(net, recs, KlMode::kKlDiv, 1.0)) ==
        doctest::Approx(1.6137056388801094).epsilon(1e-12));
  // MSE mode: squared distance from the policy mean (0,0) to the action.
  CHECK(tape.value(kl_old_loss(net, recs, KlMode::kBcMse, 1.0)) ==
        doctest::Approx(0.25).epsilon(1e-12));

  // Identical anchor and policy: zero divergence.
  BufferRecord same = r;
  same.anchor_log_std = {0.0, 0.0};
  std::vector<const BufferRecord*> recs2 = {&same};
  Tape tape2;
  GraphNet net2(tape2, ps);
  CHECK(std::abs(tape2.value(kl_old_loss(net2, recs2, KlMode::kKlDiv, 1.0))) < 1e-12);
}

TEST_CASE("distill_loss vanishes when the anchor equals the current policy") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kV, 41);
  RolloutBatch batch = collect_rollouts(*env, ps, 2, 5);
  batch.prepared = true;
  Tape tape;
  GraphNet net(tape, ps);
  CHECK(std::abs(tape.value(distill_loss(net, ps, batch, 1.0))) < 1e-12);

  ParameterStore other = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                      env->action_spec(), ValueMode::kV, 42);
  Tape tape2;
  GraphNet net2(tape2, ps);
  CHECK(tape2.value(distill_loss(net2, other, batch, 1.0)) > 0.0);
}

TEST_CASE("zero weights short-circuit without touching the network") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kV, 43);
  RolloutBatch batch = collect_rollouts(*env, ps, 2, 5);
  PPOConfig cfg;
  cfg.gamma = 0.9;
  prepare_batch(batch, ps, cfg);
  std::vector<BufferRecord> store = {
      hand_record_categorical(batch.steps[0].t.obs, batch.steps[0].t.goal_code, 0,
                              std::vector<double>(6, 1.0 / 6.0))};
  std::vector<const BufferRecord*> recs = {&store[0]};

  Tape tape;
  GraphNet net(tape, ps);
  std::size_t before = tape.size();
  Tape::Id a = mc_loss_v(net, batch, 0.0);
  Tape::Id b = gcv_loss_v(net, recs, 0.0);
  Tape::Id c = kl_old_loss(net, recs, KlMode::kKlDiv, 0.0);
  Tape::Id d = distill_loss(net, ps, batch, 0.0);
  CHECK(tape.size() == before + 4);  // one constant node each
  CHECK(tape.value(a) == 0.0);
  CHECK(tape.value(b) == 0.0);
  CHECK(tape.value(c) == 0.0);
  CHECK(tape.value(d) == 0.0);
}

TEST_CASE("loss gradients respect head slices") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kV, 44);
  RolloutBatch batch = collect_rollouts(*env, ps, 2, 6);
  PPOConfig cfg;
  cfg.gamma = 0.9;
  prepare_batch(batch, ps, cfg);
  std::vector<BufferRecord> store;
  for (int i = 0; i < 4; ++i) {
    const RolloutStep& s = batch.steps[static_cast<std::size_t>(i) * 3];
    BufferRecord r = hand_record_categorical(s.t.obs, s.t.goal_code, s.t.action_discrete,
                                             std::vector<double>(6, 1.0 / 6.0));
    r.v_old = 0.3 * i;
    store.push_back(r);
  }
  std::vector<const BufferRecord*> recs;
  for (const BufferRecord& r : store) recs.push_back(&r);

  auto grads_of = [&](auto build) {
    Tape tape;
    GraphNet net(tape, ps);
    Tape::Id id = build(net);
    net.tape().backward(id);
    return net.gradients();
  };

  GradientBundle g_ppo = grads_of([&](GraphNet& n) { return ppo_loss(n, batch, 0.2); });
  CHECK(slice_max_abs(g_ppo.flat, ps.mc_head) == 0.0);
  CHECK(slice_max_abs(g_ppo.flat, ps.gcv_head) == 0.0);
  CHECK(slice_max_abs(g_ppo.flat, ps.action_head) > 0.0);
  CHECK(slice_max_abs(g_ppo.flat, ps.backbone) > 0.0);

  GradientBundle g_mc = grads_of([&](GraphNet& n) { return mc_loss_v(n, batch, 1.0); });
  CHECK(slice_max_abs(g_mc.flat, ps.action_head) == 0.0);
  CHECK(slice_max_abs(g_mc.flat, ps.gcv_head) == 0.0);
  CHECK(slice_max_abs(g_mc.flat, ps.mc_head) > 0.0);
  CHECK(slice_max_abs(g_mc.flat, ps.backbone) > 0.0);

  GradientBundle g_gcv = grads_of([&](GraphNet& n) { return gcv_loss_v(n, recs, 1.0); });
  CHECK(slice_max_abs(g_gcv.flat, ps.action_head) == 0.0);
  CHECK(slice_max_abs(g_gcv.flat, ps.mc_head) == 0.0);
  CHECK(slice_max_abs(g_gcv.flat, ps.gcv_head) == 0.0);  // frozen head
  CHECK(slice_max_abs(g_gcv.flat, ps.backbone) > 0.0);

  GradientBundle g_kl =
      grads_of([&](GraphNet& n) { return kl_old_loss(n, recs, KlMode::kKlDiv, 1.0); });
  CHECK(slice_max_abs(g_kl.flat, ps.mc_head) == 0.0);
  CHECK(slice_max_abs(g_kl.flat, ps.gcv_head) == 0.0);
  CHECK(slice_max_abs(g_kl.flat, ps.action_head) > 0.0);
}

TEST_CASE("mc and gcv losses reject the wrong critic layout") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore v_ps = init_network(env->obs_dim(), env->goal_code_dim(), {8},
                                     env->action_spec(), ValueMode::kV, 1);
  ParameterStore q_ps = init_network(env->obs_dim(), env->goal_code_dim(), {8},
                                     env->action_spec(), ValueMode::kQ, 1);
  RolloutBatch batch = collect_rollouts(*env, v_ps, 1, 2);
  PPOConfig cfg;
  cfg.gamma = 0.9;
  prepare_batch(batch, v_ps, cfg);
  std::vector<BufferRecord> store = {
      hand_record_categorical(batch.steps[0].t.obs, batch.steps[0].t.goal_code, 0,
                              std::vector<double>(6, 1.0 / 6.0))};
  std::vector<const BufferRecord*> recs = {&store[0]};

  Tape t1;
  GraphNet n1(t1, q_ps);
  CHECK_THROWS_AS(mc_loss_v(n1, batch, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(gcv_loss_v(n1, recs, 1.0), std::invalid_argument);
  Tape t2;
  GraphNet n2(t2, v_ps);
  CHECK_THROWS_AS(mc_loss_q(n2, batch, 1.0), std::invalid_argument);
  CHECK_THROWS_AS(gcv_loss_q(n2, recs, 1.0), std::invalid_argument);
}

TEST_CASE("total_loss sums only the present parts") {
  Tape tape;
  LossTerms parts;
  CHECK(tape.value(total_loss(tape, parts)) == 0.0);
  parts.ppo = tape.constant(1.5);
  parts.mc = tape.constant(0.25);
  CHECK(tape.value(total_loss(tape, parts)) == doctest::Approx(1.75).epsilon(1e-15));
  parts.gcv = tape.constant(-0.5);
  parts.kl = tape.constant(2.0);
  CHECK(tape.value(total_loss(tape, parts)) == doctest::Approx(3.25).epsilon(1e-15));
}

TEST_CASE("project_gradient removes only conflicting components") {
  std::vector<double> g = {1.0, 0.0};
  project_gradient(g, {-1.0, 0.0});
  CHECK(g[0] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(g[1] == 0.0);

  std::vector<double> ok = {1.0, 1.0};
  project_gradient(ok, {1.0, 0.0});
  CHECK(ok == std::vector<double>{1.0, 1.0});

  std::vector<double> tiny_ref = {1.0, 1.0};
  project_gradient(tiny_ref, {-1e-10, 0.0});
  CHECK(tiny_ref == std::vector<double>{1.0, 1.0});  // reference below the norm guard

  std::vector<double> g2 = {3.0, -1.0, 0.5};
  std::vector<double> ref = {-2.0, 0.5, 1.0};
  project_gradient(g2, ref);
  double dot = std::inner_product(g2.begin(), g2.end(), ref.begin(), 0.0);
  CHECK(dot >= -1e-9);
  CHECK(std::abs(dot) < 1e-12);

  std::vector<double> bad = {1.0};
  CHECK_THROWS_AS(project_gradient(bad, ref), std::invalid_argument);
}

TEST_CASE("sample_buffer_records draws uniformly without replacement") {
  std::vector<OldTaskBuffer> buffers(2);
  for (int b = 0; b < 2; ++b)
    for (int i = 0; i < 10; ++i) {
      BufferRecord r;
      r.goal_index = b * 10 + i;
      buffers[static_cast<std::size_t>(b)].records.push_back(r);
    }

  Rng rng1 = make_rng(5, 2);
  auto s1 = sample_buffer_records(buffers, 8, rng1);
  REQUIRE(s1.size() == 8);
  std::vector<int> ids;
  for (const BufferRecord* r : s1) ids.push_back(r->goal_index);
  std::vector<int> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  CHECK(std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end());

  Rng rng2 = make_rng(5, 2);
  auto s2 = sample_buffer_records(buffers, 8, rng2);
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);

  Rng rng3 = make_rng(5, 2);
  auto all = sample_buffer_records(buffers, 64, rng3);
  CHECK(all.size() == 20);
  CHECK_THROWS_AS(sample_buffer_records(buffers, 0, rng3), std::invalid_argument);
}

TEST_CASE("gradient check passes for every loss builder") {
  auto grid_env = make_task(grid_task(3, {0, 1}, 0.9));
  auto point_env = make_task(point_task(5, {0, 1}, 0.9));
  PPOConfig cfg;
  cfg.gamma = 0.9;

  int configs = 0;
  for (std::uint64_t seed : {60ull, 61ull}) {
    for (ValueMode mode : {ValueMode::kV, ValueMode::kQ}) {
      for (bool discrete : {true, false}) {
        Env& env = discrete ? *grid_env : *point_env;
        ParameterStore behavior = init_network(env.obs_dim(), env.goal_code_dim(), {8},
                                               env.action_spec(), mode, seed);
        ParameterStore ps = init_network(env.obs_dim(), env.goal_code_dim(), {8},
                                         env.action_spec(), mode, seed + 100);
        RolloutBatch batch = collect_rollouts(env, behavior, 2, seed);
        prepare_batch(batch, behavior, cfg);

        std::vector<BufferRecord> store;
        Rng rec_rng = make_rng(seed, 9);
        for (int i = 0; i < 4 && i < static_cast<int>(batch.steps.size()); ++i) {
          const RolloutStep& s = batch.steps[static_cast<std::size_t>(i) * 2];
          BufferRecord r;
          r.obs = s.t.obs;
          r.goal_code = s.t.goal_code;
          r.action_discrete = s.t.action_discrete;
          r.action_continuous = s.t.action_continuous;
          r.anchor_log_prob = s.t.log_prob_behavior;
          r.v_old = uniform(rec_rng, -0.5, 0.5);
          r.q_old = uniform(rec_rng, -0.5, 0.5);
          r.mc_return = s.mc_return;
          ActionDistribution d = forward_policy(behavior, s.t.obs, s.t.goal_code);
          r.anchor_probs = d.probs;
          r.anchor_mean = d.mean;
          r.anchor_log_std = d.log_std;
          store.push_back(std::move(r));
        }
        std::vector<const BufferRecord*> recs;
        for (const BufferRecord& r : store) recs.push_back(&r);

        std::vector<std::function<Tape::Id(GraphNet&)>> builders;
        builders.push_back([&](GraphNet& n) { return ppo_loss(n, batch, 0.2); });
        builders.push_back(
            [&](GraphNet& n) { return replay_ppo_loss(n, recs, 0.2); });
        builders.push_back(
            [&](GraphNet& n) { return replay_policy_gradient_loss(n, recs); });
        builders.push_back([&](GraphNet& n) {
          return kl_old_loss(n, recs, KlMode::kKlDiv, 0.7);
        });
        builders.push_back([&](GraphNet& n) {
          return kl_old_loss(n, recs, KlMode::kBcMse, 0.7);
        });
        builders.push_back(
            [&](GraphNet& n) { return distill_loss(n, behavior, batch, 0.5); });
        if (mode == ValueMode::kV) {
          builders.push_back([&](GraphNet& n) { return mc_loss_v(n, batch, 0.8); });
          builders.push_back([&](GraphNet& n) { return gcv_loss_v(n, recs, 1.3); });
        } else {
          builders.push_back([&](GraphNet& n) { return mc_loss_q(n, batch, 0.8); });
          builders.push_back([&](GraphNet& n) { return gcv_loss_q(n, recs, 1.3); });
        }

        for (auto& build : builders) {
          LossProbe probe;
          probe.value = [&](const ParameterStore& p) {
            Tape tape;
            GraphNet n(tape, p);
            return tape.value(build(n));
          };
          probe.gradient = [&](const ParameterStore& p) {
            Tape tape;
            GraphNet n(tape, p);
            Tape::Id id = build(n);
            tape.backward(id);
            return n.gradients();
          };
          Rng rng = make_rng(seed, 77);
          GradCheckResult res = grad_check(ps, probe, 6, rng);
          INFO("mode=", mode == ValueMode::kV ? "V" : "Q", " discrete=", discrete);
          CHECK(res.max_rel_err <= 1e-4);
          ++configs;
        }
      }
    }
  }
  CHECK(configs >= 20);
}

TEST_CASE("task_transition freezes the anchor and fills the buffer") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  LearnerState state = init_learner(env->obs_dim(), env->goal_code_dim(), {16},
                                    env->action_spec(), ValueMode::kV, 70);
  CHECK(state.stage == 1);
  RolloutBatch batch = collect_rollouts(*env, state.params, 4, 8);
  PPOConfig cfg;
  cfg.gamma = 0.9;
  prepare_batch(batch, state.params, cfg);

  ParameterStore before = state.params;
  TransitionOptions opts;
  opts.capacity = 16;
  opts.reinit_seed = 900;
  task_transition(state, batch, opts);

  CHECK(state.stage == 2);
  REQUIRE(state.anchor.has_value());
  CHECK(same_flat(*state.anchor, before));

  // The anchor-value head now holds the previous return-critic bits.
  for (int i = 0; i < state.params.gcv_head.size; ++i)
    CHECK(state.params.flat[static_cast<std::size_t>(state.params.gcv_head.offset + i)] ==
          before.flat[static_cast<std::size_t>(before.mc_head.offset + i)]);
  // The return critic was re-drawn, everything else is untouched.
  bool mc_changed = false;
  for (int i = 0; i < state.params.mc_head.size; ++i)
    mc_changed |= state.params.flat[static_cast<std::size_t>(state.params.mc_head.offset + i)] !=
                  before.flat[static_cast<std::size_t>(before.mc_head.offset + i)];
  CHECK(mc_changed);
  for (int i = 0; i < state.params.backbone.size; ++i)
    CHECK(state.params.flat[static_cast<std::size_t>(state.params.backbone.offset + i)] ==
          before.flat[static_cast<std::size_t>(before.backbone.offset + i)]);

  REQUIRE(state.buffers.size() == 1);
  CHECK(state.buffers[0].source_task == 1);
  REQUIRE(static_cast<int>(state.buffers[0].records.size()) == 16);
  for (const BufferRecord& r : state.buffers[0].records) {
    CHECK(r.v_old == forward_value(before, CriticHead::kMc, r.obs, r.goal_code));
    ActionDistribution d = forward_policy(before, r.obs, r.goal_code);
    CHECK(r.anchor_log_prob == d.log_prob_discrete(r.action_discrete));
    CHECK(r.anchor_probs == d.probs);
  }

  // Consolidation self-consistency: the fresh anchor-value head reproduces its
  // own targets, so the regression loss starts at zero.
  std::vector<const BufferRecord*> recs;
  for (const BufferRecord& r : state.buffers[0].records) recs.push_back(&r);
  Tape tape;
  GraphNet net(tape, state.params);
  CHECK(std::abs(tape.value(gcv_loss_v(net, recs, 1.0))) <= 1e-12);
}

TEST_CASE("task_transition respects warm start, capacity and ordering") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  LearnerState state = init_learner(env->obs_dim(), env->goal_code_dim(), {16},
                                    env->action_spec(), ValueMode::kV, 71);
  RolloutBatch batch = collect_rollouts(*env, state.params, 4, 8);
  PPOConfig cfg;
  cfg.gamma = 0.9;
  prepare_batch(batch, state.params, cfg);

  ParameterStore before = state.params;
  TransitionOptions warm;
  warm.capacity = 1024;
  warm.mc_warm_start = true;
  task_transition(state, batch, warm);
  CHECK(same_flat(state.params, before));  // gcv already mirrored mc at init
  CHECK(static_cast<int>(state.buffers[0].records.size()) ==
        static_cast<int>(batch.steps.size()));

  LearnerState uninit;
  CHECK_THROWS_AS(task_transition(uninit, batch, warm), std::logic_error);
  RolloutBatch raw = collect_rollouts(*env, state.params, 1, 1);
  CHECK_THROWS_AS(task_transition(state, raw, warm), std::invalid_argument);
  RolloutBatch empty;
  empty.prepared = true;
  CHECK_THROWS_AS(task_transition(state, empty, warm), std::invalid_argument);
  TransitionOptions bad;
  bad.capacity = 0;
  CHECK_THROWS_AS(task_transition(state, batch, bad), std::invalid_argument);
}

TEST_CASE("method parsing round-trips and maps to critic layouts") {
  for (Method m : {Method::kSl, Method::kEr, Method::kErMix, Method::kLwf, Method::kMtl,
                   Method::kCrlVlaV, Method::kCrlVlaQ})
    CHECK(parse_method(method_name(m)) == m);
  CHECK_THROWS_AS(parse_method("foo"), std::invalid_argument);
  CHECK(method_value_mode(Method::kCrlVlaQ) == ValueMode::kQ);
  CHECK(method_value_mode(Method::kCrlVlaV) == ValueMode::kV);
  CHECK(method_value_mode(Method::kSl) == ValueMode::kV);
}

TEST_CASE("run_task_stream validates its inputs") {
  AgentConfig cfg = tiny_config();
  CHECK_THROWS_AS(run_task_stream({}, Method::kSl, cfg, 1), std::invalid_argument);

  // Task discount disagreeing with the learner discount is refused.
  std::vector<TaskSpec> wrong_gamma = {grid_task(3, {0, 1}, 0.5)};
  CHECK_THROWS_AS(run_task_stream(wrong_gamma, Method::kSl, cfg, 1),
                  std::invalid_argument);

  // Mixed action interfaces are refused.
  std::vector<TaskSpec> mixed = {grid_task(3, {0, 1}, 0.9), point_task(5, {2, 3}, 0.9)};
  CHECK_THROWS_AS(run_task_stream(mixed, Method::kSl, cfg, 1), std::invalid_argument);

  AgentConfig bad = tiny_config();
  bad.ppo.clip_epsilon = 0.0;
  std::vector<TaskSpec> ok = {grid_task(3, {0, 1}, 0.9)};
  CHECK_THROWS_AS(run_task_stream(ok, Method::kSl, bad, 1), std::invalid_argument);
}

TEST_CASE("run_task_stream produces full diagnostics on a single task") {
  std::vector<TaskSpec> stream = {grid_task(3, {0, 1}, 0.9)};
  AgentConfig cfg = tiny_config();
  for (Method m : {Method::kSl, Method::kEr, Method::kErMix, Method::kLwf, Method::kMtl,
                   Method::kCrlVlaV, Method::kCrlVlaQ}) {
    StreamResult res = run_task_stream(stream, m, cfg, 123);
    CHECK(res.n_tasks == 1);
    REQUIRE(res.transfer.size() == 1);
    REQUIRE(res.transfer[0].size() == 1);
    CHECK(res.transfer[0][0] >= 0.0);
    CHECK(res.transfer[0][0] <= 1.0);
    REQUIRE(res.baseline.size() == 1);
    CHECK(static_cast<int>(res.logs.size()) == cfg.ppo.total_steps);
    CHECK(res.stage_params.size() == 1);
    CHECK(same_flat(res.stage_params[0], res.final_params));
    for (const UpdateLog& log : res.logs) {
      CHECK(log.stage == 1);
      CHECK(log.epochs_run >= 1);
      CHECK(log.epochs_run <= cfg.ppo.update_times * cfg.ppo.ppo_epochs);
      CHECK(log.eval_success >= 0.0);
      CHECK(log.loss_total == doctest::Approx(log.loss_ppo + log.loss_mc + log.loss_gcv +
                                              log.loss_kl)
                                  .epsilon(1e-9));
    }
  }
}

TEST_CASE("first-stage training is identical across methods sharing a critic layout") {
  std::vector<TaskSpec> stream = {grid_task(3, {0, 1}, 0.9), grid_task(9, {2, 3}, 0.9)};
  AgentConfig cfg = tiny_config();
  StreamResult sl = run_task_stream(stream, Method::kSl, cfg, 321);
  for (Method m :
       {Method::kEr, Method::kErMix, Method::kLwf, Method::kMtl, Method::kCrlVlaV}) {
    StreamResult other = run_task_stream(stream, m, cfg, 321);
    CHECK(same_flat(other.stage_params[0], sl.stage_params[0]));
    CHECK(other.transfer[0] == sl.transfer[0]);
    CHECK(other.baseline == sl.baseline);
  }
}

TEST_CASE("zero regularizer weights reduce the dual-critic method to plain fine-tuning") {
  std::vector<TaskSpec> stream = {grid_task(3, {0, 1}, 0.9), grid_task(9, {2, 3}, 0.9)};
  AgentConfig cfg = tiny_config();
  AgentConfig zero = cfg;
  zero.weights.alpha = 0.0;
  zero.weights.beta_v = 0.0;
  StreamResult sl = run_task_stream(stream, Method::kSl, cfg, 77);
  StreamResult crl = run_task_stream(stream, Method::kCrlVlaV, zero, 77);
  REQUIRE(crl.transfer.size() == sl.transfer.size());
  for (std::size_t k = 0; k < sl.transfer.size(); ++k)
    CHECK(crl.transfer[k] == sl.transfer[k]);
  CHECK(same_flat(crl.final_params, sl.final_params));
  for (std::size_t k = 0; k < sl.stage_params.size(); ++k)
    CHECK(same_flat(crl.stage_params[k], sl.stage_params[k]));
}

TEST_CASE("kl early stop leaves parameters unchanged after it triggers") {
  std::vector<TaskSpec> stream = {grid_task(3, {0, 1}, 0.9)};
  AgentConfig a = tiny_config();
  a.ppo.total_steps = 1;
  a.ppo.update_times = 6;
  a.ppo.d_targ = 1e-9;
  StreamResult ra = run_task_stream(stream, Method::kSl, a, 55);
  int epochs = ra.logs[0].epochs_run;
  REQUIRE(epochs >= 1);
  REQUIRE(epochs <= 6);

  AgentConfig b = a;
  b.ppo.update_times = epochs;
  b.ppo.d_targ = 1e9;  // never triggers
  StreamResult rb = run_task_stream(stream, Method::kSl, b, 55);
  CHECK(rb.logs[0].epochs_run == epochs);
  CHECK(same_flat(ra.final_params, rb.final_params));
}

TEST_CASE("every method trains over a two-task stream") {
  std::vector<TaskSpec> stream = {grid_task(3, {0, 1}, 0.9), grid_task(9, {2, 3}, 0.9)};
  AgentConfig cfg = tiny_config();
  for (Method m : {Method::kSl, Method::kEr, Method::kErMix, Method::kLwf, Method::kMtl,
                   Method::kCrlVlaV, Method::kCrlVlaQ}) {
    StreamResult res = run_task_stream(stream, m, cfg, 99);
    CHECK(res.n_tasks == 2);
    REQUIRE(res.transfer.size() == 2);
    for (const auto& row : res.transfer) {
      REQUIRE(row.size() == 2);
      for (double v : row) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
      }
    }
    CHECK(static_cast<int>(res.logs.size()) == 2 * cfg.ppo.total_steps);
    CHECK(res.logs.back().stage == 2);
    // Training moved the parameters at every stage.
    CHECK_FALSE(same_flat(res.stage_params[0], res.stage_params[1]));

    StreamResult again = run_task_stream(stream, m, cfg, 99);
    CHECK(same_flat(again.final_params, res.final_params));
    for (std::size_t k = 0; k < res.transfer.size(); ++k)
      CHECK(again.transfer[k] == res.transfer[k]);
  }
}

TEST_CASE("continuous-action stream trains with the gaussian policy") {
  std::vector<TaskSpec> stream = {point_task(4, {0, 1}, 0.9), point_task(8, {2, 3}, 0.9)};
  AgentConfig cfg = tiny_config();
  cfg.ppo.total_steps = 1;
  for (Method m : {Method::kSl, Method::kCrlVlaV, Method::kCrlVlaQ, Method::kEr}) {
    StreamResult res = run_task_stream(stream, m, cfg, 12);
    CHECK(res.n_tasks == 2);
    REQUIRE(res.transfer.size() == 2);
    CHECK_FALSE(same_flat(res.stage_params[0], res.stage_params[1]));
  }
}

TEST_CASE("network policy closure is greedy or sampled") {
  auto env = make_task(grid_task(3, {0, 1}, 0.9));
  ParameterStore ps = init_network(env->obs_dim(), env->goal_code_dim(), {16},
                                   env->action_spec(), ValueMode::kV, 80);
  PolicyFn greedy = make_network_policy(ps, true);
  std::vector<double> obs = env->reset(0, 1);
  std::vector<double> code = env->goal_code(0);
  Rng rng = make_rng(1, 1);
  ActionDistribution d = forward_policy(ps, obs, code);
  int best = static_cast<int>(
      std::max_element(d.probs.begin(), d.probs.end()) - d.probs.begin());
  for (int i = 0; i < 5; ++i) CHECK(greedy(obs, code, rng).discrete == best);

  PolicyFn sampled = make_network_policy(ps, false);
  Rng r1 = make_rng(2, 1);
  Rng r2 = make_rng(2, 1);
  CHECK(sampled(obs, code, r1).discrete == sampled(obs, code, r2).discrete);
}

TEST_CASE("seeded two-task run reproduces frozen values") {
  std::vector<TaskSpec> stream = {grid_task(3, {0, 1}, 0.9), grid_task(9, {2, 3}, 0.9)};
  StreamResult res = run_task_stream(stream, Method::kCrlVlaV, tiny_config(), 2024);
  REQUIRE(res.final_params.n_params() == 312);
  CHECK(res.final_params.flat[0] == -0.10947951885117438);
  CHECK(res.final_params.flat[100] == 0.28528665154972743);
  CHECK(res.final_params.flat.back() == 0.11115558581213479);
  CHECK(res.logs[0].epochs_run == 2);
  CHECK(res.logs[0].loss_total == 0.11252774984935357);
  CHECK(res.logs[0].approx_kl_final == 6.3989521451868201e-07);
}
