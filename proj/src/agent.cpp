#include "crl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace crl {
namespace {

// Independent generator streams; keeping them separate is what lets methods
// that skip a draw (no buffers, zero weights) stay bit-identical elsewhere.
constexpr std::uint64_t kStreamInit = 0;
constexpr std::uint64_t kStreamRollout = 1;
constexpr std::uint64_t kStreamBuffer = 2;
constexpr std::uint64_t kStreamEval = 3;
constexpr std::uint64_t kStreamReinit = 4;

double inner(const std::vector<double>& a, const std::vector<double>& b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

int argmax_index(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

void PPOConfig::validate() const {
  if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0))
    throw std::invalid_argument("clip_epsilon must be in (0, 1)");
  if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0))
    throw std::invalid_argument("gae_lambda must be in [0, 1]");
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("gamma must be in (0, 1)");
  if (ppo_epochs < 1 || rollout_episodes < 1 || update_times < 1 || total_steps < 1 ||
      eval_interval < 1)
    throw std::invalid_argument("ppo loop counts must be positive");
  if (d_targ <= 0.0) throw std::invalid_argument("d_targ must be positive");
  if (entropy_coef < 0.0) throw std::invalid_argument("entropy_coef must be non-negative");
}

void LossWeights::validate() const {
  if (alpha < 0.0 || beta_v < 0.0 || beta_q < 0.0 || eta < 0.0 || lwf < 0.0)
    throw std::invalid_argument("loss weights must be non-negative");
}

Method parse_method(const std::string& name) {
  if (name == "sl") return Method::kSl;
  if (name == "er") return Method::kEr;
  if (name == "er-mix") return Method::kErMix;
  if (name == "lwf") return Method::kLwf;
  if (name == "mtl") return Method::kMtl;
  if (name == "crl-vla-v") return Method::kCrlVlaV;
  if (name == "crl-vla-q") return Method::kCrlVlaQ;
  throw std::invalid_argument("unknown method: " + name);
}

std::string method_name(Method method) {
  switch (method) {
    case Method::kSl: return "sl";
    case Method::kEr: return "er";
    case Method::kErMix: return "er-mix";
    case Method::kLwf: return "lwf";
    case Method::kMtl: return "mtl";
    case Method::kCrlVlaV: return "crl-vla-v";
    case Method::kCrlVlaQ: return "crl-vla-q";
  }
  throw std::invalid_argument("unknown method enum");
}

ValueMode method_value_mode(Method method) {
  return method == Method::kCrlVlaQ ? ValueMode::kQ : ValueMode::kV;
}

RolloutBatch collect_rollouts(Env& env, const ParameterStore& ps, int n_episodes,
                              std::uint64_t seed) {
  if (n_episodes <= 0) throw std::invalid_argument("n_episodes must be positive");
  const bool discrete = env.action_spec().kind == ActionKind::kCategorical;
  RolloutBatch batch;
  batch.n_episodes = n_episodes;
  for (int e = 0; e < n_episodes; ++e) {
    batch.episode_starts.push_back(static_cast<int>(batch.steps.size()));
    int g = e % env.n_goals();
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(e));
    std::uint64_t episode_seed = rng();
    std::vector<double> obs = env.reset(g, episode_seed);
    std::vector<double> code = env.goal_code(g);
    int step_index = 0;
    while (!env.done()) {
      ActionDistribution dist = forward_policy(ps, obs, code);
      RolloutStep rec;
      rec.goal_index = g;
      rec.episode = e;
      rec.t.obs = obs;
      rec.t.goal_code = code;
      rec.t.step_index = step_index;
      StepResult res;
      if (discrete) {
        rec.t.action_discrete = dist.sample_discrete(rng);
        rec.t.log_prob_behavior = dist.log_prob_discrete(rec.t.action_discrete);
        res = env.step_discrete(rec.t.action_discrete);
      } else {
        rec.t.action_continuous = dist.sample_continuous(rng);
        rec.t.log_prob_behavior = dist.log_prob_continuous(rec.t.action_continuous);
        res = env.step_continuous(rec.t.action_continuous);
      }
      rec.t.reward = res.reward;
      rec.t.next_obs = res.obs;
      rec.t.done = res.done;
      obs = res.obs;
      batch.steps.push_back(std::move(rec));
      ++step_index;
    }
  }
  return batch;
}

std::vector<double> mc_returns(const std::vector<double>& rewards, double gamma) {
  std::vector<double> g(rewards.size(), 0.0);
  double acc = 0.0;
  for (std::size_t i = rewards.size(); i-- > 0;) {
    acc = rewards[i] + gamma * acc;
    g[i] = acc;
  }
  return g;
}

std::vector<double> gae_advantages(const std::vector<double>& rewards,
                                   const std::vector<double>& values, double gamma,
                                   double lambda) {
  if (rewards.size() != values.size())
    throw std::invalid_argument("rewards and values must align");
  const std::size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  double acc = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    double next_v = i + 1 < n ? values[i + 1] : 0.0;
    double delta = rewards[i] + gamma * next_v - values[i];
    acc = delta + gamma * lambda * acc;
    adv[i] = acc;
  }
  return adv;
}

void prepare_batch(RolloutBatch& batch, const ParameterStore& ps, const PPOConfig& cfg) {
  const bool discrete = ps.action.kind == ActionKind::kCategorical;
  for (int e = 0; e < batch.n_episodes; ++e) {
    const int b = batch.episode_starts[static_cast<std::size_t>(e)];
    const int end = batch.episode_end(e);
    std::vector<double> rewards;
    for (int i = b; i < end; ++i)
      rewards.push_back(batch.steps[static_cast<std::size_t>(i)].t.reward);
    std::vector<double> returns = mc_returns(rewards, cfg.gamma);
    if (ps.value_mode == ValueMode::kV) {
      std::vector<double> values;
      for (int i = b; i < end; ++i) {
        const RolloutStep& s = batch.steps[static_cast<std::size_t>(i)];
        values.push_back(forward_value(ps, CriticHead::kMc, s.t.obs, s.t.goal_code));
      }
      std::vector<double> adv = gae_advantages(rewards, values, cfg.gamma, cfg.gae_lambda);
      for (int i = b; i < end; ++i) {
        RolloutStep& s = batch.steps[static_cast<std::size_t>(i)];
        s.mc_return = returns[static_cast<std::size_t>(i - b)];
        s.value_pred = values[static_cast<std::size_t>(i - b)];
        s.advantage = adv[static_cast<std::size_t>(i - b)];
      }
    } else {
      for (int i = b; i < end; ++i) {
        RolloutStep& s = batch.steps[static_cast<std::size_t>(i)];
        s.mc_return = returns[static_cast<std::size_t>(i - b)];
        if (discrete) {
          std::vector<double> q =
              forward_q_values(ps, CriticHead::kMc, s.t.obs, s.t.goal_code);
          ActionDistribution dist = forward_policy(ps, s.t.obs, s.t.goal_code);
          double v = 0.0;
          for (std::size_t a = 0; a < q.size(); ++a) v += dist.probs[a] * q[a];
          s.value_pred = v;
          s.advantage = q[static_cast<std::size_t>(s.t.action_discrete)] - v;
        } else {
          ActionDistribution dist = forward_policy(ps, s.t.obs, s.t.goal_code);
          double q_taken = forward_q_value_continuous(ps, CriticHead::kMc, s.t.obs,
                                                      s.t.action_continuous, s.t.goal_code);
          double q_mean = forward_q_value_continuous(ps, CriticHead::kMc, s.t.obs,
                                                     dist.mean, s.t.goal_code);
          s.value_pred = q_mean;
          s.advantage = q_taken - q_mean;
        }
      }
    }
  }
  if (cfg.normalize_advantages && !batch.steps.empty()) {
    double mean = 0.0;
    for (const RolloutStep& s : batch.steps) mean += s.advantage;
    mean /= static_cast<double>(batch.steps.size());
    double var = 0.0;
    for (const RolloutStep& s : batch.steps) {
      double d = s.advantage - mean;
      var += d * d;
    }
    var /= static_cast<double>(batch.steps.size());
    double denom = std::sqrt(var) + 1e-8;
    for (RolloutStep& s : batch.steps) s.advantage = (s.advantage - mean) / denom;
  }
  batch.prepared = true;
}

double approx_kl(const RolloutBatch& batch, const ParameterStore& ps) {
  if (batch.steps.empty()) return 0.0;
  const bool discrete = ps.action.kind == ActionKind::kCategorical;
  double sum = 0.0;
  for (const RolloutStep& s : batch.steps) {
    ActionDistribution dist = forward_policy(ps, s.t.obs, s.t.goal_code);
    double lp = discrete ? dist.log_prob_discrete(s.t.action_discrete)
                         : dist.log_prob_continuous(s.t.action_continuous);
    sum += s.t.log_prob_behavior - lp;
  }
  return sum / static_cast<double>(batch.steps.size());
}

bool kl_early_stop(const RolloutBatch& batch, const ParameterStore& ps, double d_targ) {
  return approx_kl(batch, ps) > d_targ;
}

LearnerState init_learner(int obs_dim, int goal_code_dim, const std::vector<int>& hidden,
                          ActionSpec action, ValueMode value_mode, std::uint64_t seed,
                          int goal_embed_dim) {
  LearnerState state;
  state.params =
      init_network(obs_dim, goal_code_dim, hidden, action, value_mode, seed, goal_embed_dim);
  state.stage = 1;
  return state;
}

void task_transition(LearnerState& state, const RolloutBatch& final_rollouts,
                     const TransitionOptions& opts) {
  if (state.stage < 1) throw std::logic_error("learner not initialized");
  if (!final_rollouts.prepared || final_rollouts.steps.empty())
    throw std::invalid_argument("task transition needs prepared, non-empty rollouts");
  if (opts.capacity < 1) throw std::invalid_argument("buffer capacity must be positive");

  state.anchor = state.params;
  state.params.copy_mc_to_gcv();
  if (!opts.mc_warm_start) reinit_mc_head(state.params, opts.reinit_seed);

  const ParameterStore& anchor = *state.anchor;
  const bool discrete = anchor.action.kind == ActionKind::kCategorical;
  const bool q_mode = anchor.value_mode == ValueMode::kQ;
  OldTaskBuffer buf;
  buf.source_task = state.stage;
  const int total = static_cast<int>(final_rollouts.steps.size());
  const int take = std::min(total, opts.capacity);
  for (int j = 0; j < take; ++j) {
    // Evenly strided subsample keeps the buffer deterministic and episode-mixed.
    int idx = static_cast<int>(static_cast<long long>(j) * total / take);
    const RolloutStep& s = final_rollouts.steps[static_cast<std::size_t>(idx)];
    BufferRecord rec;
    rec.obs = s.t.obs;
    rec.goal_code = s.t.goal_code;
    rec.goal_index = s.goal_index;
    rec.action_discrete = s.t.action_discrete;
    rec.action_continuous = s.t.action_continuous;
    rec.mc_return = s.mc_return;
    ActionDistribution dist = forward_policy(anchor, rec.obs, rec.goal_code);
    if (discrete) {
      rec.anchor_probs = dist.probs;
      rec.anchor_log_prob = dist.log_prob_discrete(rec.action_discrete);
    } else {
      rec.anchor_mean = dist.mean;
      rec.anchor_log_std = dist.log_std;
      rec.anchor_log_prob = dist.log_prob_continuous(rec.action_continuous);
    }
    if (q_mode) {
      if (discrete) {
        std::vector<double> q =
            forward_q_values(anchor, CriticHead::kMc, rec.obs, rec.goal_code);
        rec.q_old = q[static_cast<std::size_t>(rec.action_discrete)];
        double v = 0.0;
        for (std::size_t a = 0; a < q.size(); ++a) v += dist.probs[a] * q[a];
        rec.v_old = v;
      } else {
        rec.q_old = forward_q_value_continuous(anchor, CriticHead::kMc, rec.obs,
                                               rec.action_continuous, rec.goal_code);
        rec.v_old = forward_q_value_continuous(anchor, CriticHead::kMc, rec.obs,
                                               dist.mean, rec.goal_code);
      }
    } else {
      rec.v_old = forward_value(anchor, CriticHead::kMc, rec.obs, rec.goal_code);
    }
    buf.records.push_back(std::move(rec));
  }
  state.buffers.push_back(std::move(buf));
  ++state.stage;
}

std::vector<const BufferRecord*> sample_buffer_records(
    const std::vector<OldTaskBuffer>& buffers, int batch, Rng& rng) {
  if (batch <= 0) throw std::invalid_argument("buffer batch must be positive");
  std::vector<const BufferRecord*> pool;
  for (const OldTaskBuffer& b : buffers)
    for (const BufferRecord& r : b.records) pool.push_back(&r);
  const int n = static_cast<int>(pool.size());
  if (n <= batch) return pool;
  for (int j = 0; j < batch; ++j) {
    int k = uniform_int(rng, j, n - 1);
    std::swap(pool[static_cast<std::size_t>(j)], pool[static_cast<std::size_t>(k)]);
  }
  pool.resize(static_cast<std::size_t>(batch));
  return pool;
}

namespace {

Tape::Id policy_log_prob_node(GraphNet& net, const std::vector<double>& obs,
                              const std::vector<double>& goal_code, int action_discrete,
                              const std::vector<double>& action_continuous) {
  auto feat = net.features(obs, goal_code);
  if (net.params().action.kind == ActionKind::kCategorical) {
    auto lp = net.log_softmax(net.action_logits(feat));
    return net.log_prob_discrete(lp, action_discrete);
  }
  auto [mean, log_std] = net.gaussian_params(feat);
  return net.log_prob_continuous(mean, log_std, action_continuous);
}

Tape::Id clipped_surrogate_term(GraphNet& net, Tape::Id logp, double behavior_logp,
                                double advantage, double clip_epsilon) {
  Tape& t = net.tape();
  Tape::Id ratio = t.exp(t.add_const(logp, -behavior_logp));
  Tape::Id unclipped = t.scale(ratio, advantage);
  Tape::Id clipped =
      t.scale(t.clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon), advantage);
  return t.min(unclipped, clipped);
}

Tape::Id categorical_entropy_node(Tape& t, const std::vector<Tape::Id>& log_probs) {
  Tape::Id acc = t.constant(0.0);
  for (Tape::Id lp : log_probs) acc = t.add(acc, t.mul(t.exp(lp), lp));
  return t.neg(acc);
}

Tape::Id gaussian_entropy_node(Tape& t, const std::vector<Tape::Id>& log_std) {
  const double half_log_2pi_e = 0.5 * (std::log(2.0 * 3.14159265358979323846) + 1.0);
  Tape::Id acc = t.constant(static_cast<double>(log_std.size()) * half_log_2pi_e);
  for (Tape::Id ls : log_std) acc = t.add(acc, ls);
  return acc;
}

Tape::Id categorical_kl_node(GraphNet& net, const std::vector<double>& anchor_probs,
                             const std::vector<Tape::Id>& log_probs) {
  Tape& t = net.tape();
  double entropy_part = 0.0;
  for (double p : anchor_probs)
    if (p > 0.0) entropy_part += p * std::log(p);
  Tape::Id acc = t.constant(entropy_part);
  for (std::size_t a = 0; a < anchor_probs.size(); ++a)
    if (anchor_probs[a] > 0.0) acc = t.add(acc, t.scale(log_probs[a], -anchor_probs[a]));
  return acc;
}

Tape::Id gaussian_kl_node(Tape& t, const std::vector<double>& anchor_mean,
                          const std::vector<double>& anchor_log_std,
                          const std::vector<Tape::Id>& mean,
                          const std::vector<Tape::Id>& log_std) {
  Tape::Id acc = t.constant(0.0);
  for (std::size_t d = 0; d < anchor_mean.size(); ++d) {
    double var_a = std::exp(2.0 * anchor_log_std[d]);
    Tape::Id log_ratio = t.add_const(log_std[d], -anchor_log_std[d]);
    Tape::Id diff = t.add_const(t.neg(mean[d]), anchor_mean[d]);
    Tape::Id num = t.add_const(t.square(diff), var_a);
    Tape::Id half_inv_var = t.scale(t.exp(t.scale(log_std[d], -2.0)), 0.5);
    Tape::Id term = t.add_const(t.add(log_ratio, t.mul(num, half_inv_var)), -0.5);
    acc = t.add(acc, term);
  }
  return acc;
}

}  // namespace

Tape::Id ppo_loss(GraphNet& net, const RolloutBatch& batch, double clip_epsilon,
                  double entropy_coef) {
  if (!batch.prepared)
    throw std::logic_error("batch has no advantages; run prepare_batch first");
  if (entropy_coef < 0.0) throw std::invalid_argument("entropy_coef must be non-negative");
  Tape& t = net.tape();
  if (batch.steps.empty()) return t.constant(0.0);
  if (entropy_coef == 0.0) {
    std::vector<Tape::Id> terms;
    for (const RolloutStep& s : batch.steps) {
      Tape::Id logp = policy_log_prob_node(net, s.t.obs, s.t.goal_code,
                                           s.t.action_discrete, s.t.action_continuous);
      terms.push_back(
          clipped_surrogate_term(net, logp, s.t.log_prob_behavior, s.advantage, clip_epsilon));
    }
    return t.neg(t.mean(terms));
  }
  const bool discrete = net.params().action.kind == ActionKind::kCategorical;
  std::vector<Tape::Id> terms;
  std::vector<Tape::Id> entropies;
  for (const RolloutStep& s : batch.steps) {
    auto feat = net.features(s.t.obs, s.t.goal_code);
    Tape::Id logp;
    if (discrete) {
      auto lp = net.log_softmax(net.action_logits(feat));
      logp = net.log_prob_discrete(lp, s.t.action_discrete);
      entropies.push_back(categorical_entropy_node(t, lp));
    } else {
      auto [mean, log_std] = net.gaussian_params(feat);
      logp = net.log_prob_continuous(mean, log_std, s.t.action_continuous);
      entropies.push_back(gaussian_entropy_node(t, log_std));
    }
    terms.push_back(
        clipped_surrogate_term(net, logp, s.t.log_prob_behavior, s.advantage, clip_epsilon));
  }
  return t.sub(t.neg(t.mean(terms)), t.scale(t.mean(entropies), entropy_coef));
}

Tape::Id replay_ppo_loss(GraphNet& net, const std::vector<const BufferRecord*>& records,
                         double clip_epsilon) {
  Tape& t = net.tape();
  if (records.empty()) return t.constant(0.0);
  std::vector<Tape::Id> terms;
  for (const BufferRecord* r : records) {
    Tape::Id logp = policy_log_prob_node(net, r->obs, r->goal_code, r->action_discrete,
                                         r->action_continuous);
    terms.push_back(clipped_surrogate_term(net, logp, r->anchor_log_prob,
                                           r->mc_return - r->v_old, clip_epsilon));
  }
  return t.neg(t.mean(terms));
}

Tape::Id replay_policy_gradient_loss(GraphNet& net,
                                     const std::vector<const BufferRecord*>& records) {
  Tape& t = net.tape();
  if (records.empty()) return t.constant(0.0);
  std::vector<Tape::Id> terms;
  for (const BufferRecord* r : records) {
    Tape::Id logp = policy_log_prob_node(net, r->obs, r->goal_code, r->action_discrete,
                                         r->action_continuous);
    terms.push_back(t.scale(logp, r->mc_return - r->v_old));
  }
  return t.neg(t.mean(terms));
}

Tape::Id mc_loss_v(GraphNet& net, const RolloutBatch& batch, double eta) {
  Tape& t = net.tape();
  if (eta == 0.0 || batch.steps.empty()) return t.constant(0.0);
  if (net.params().value_mode != ValueMode::kV)
    throw std::invalid_argument("mc_loss_v requires a scalar value head");
  if (!batch.prepared) throw std::logic_error("batch has no returns; run prepare_batch");
  std::vector<Tape::Id> terms;
  for (const RolloutStep& s : batch.steps) {
    auto feat = net.features(s.t.obs, s.t.goal_code);
    Tape::Id v = net.value(CriticHead::kMc, feat);
    terms.push_back(t.square(t.add_const(v, -s.mc_return)));
  }
  return t.scale(t.mean(terms), eta);
}

Tape::Id mc_loss_q(GraphNet& net, const RolloutBatch& batch, double eta) {
  Tape& t = net.tape();
  if (eta == 0.0 || batch.steps.empty()) return t.constant(0.0);
  if (net.params().value_mode != ValueMode::kQ)
    throw std::invalid_argument("mc_loss_q requires an action-value head");
  if (!batch.prepared) throw std::logic_error("batch has no returns; run prepare_batch");
  const bool discrete = net.params().action.kind == ActionKind::kCategorical;
  std::vector<Tape::Id> terms;
  for (const RolloutStep& s : batch.steps) {
    auto feat = net.features(s.t.obs, s.t.goal_code);
    Tape::Id q;
    if (discrete) {
      q = net.q_values(CriticHead::kMc, feat)[static_cast<std::size_t>(s.t.action_discrete)];
    } else {
      q = net.q_value_continuous(CriticHead::kMc, feat, s.t.action_continuous);
    }
    terms.push_back(t.square(t.add_const(q, -s.mc_return)));
  }
  return t.scale(t.mean(terms), eta);
}

Tape::Id gcv_loss_v(GraphNet& net, const std::vector<const BufferRecord*>& records,
                    double beta_v) {
  Tape& t = net.tape();
  if (beta_v == 0.0 || records.empty()) return t.constant(0.0);
  if (net.params().value_mode != ValueMode::kV)
    throw std::invalid_argument("gcv_loss_v requires a scalar value head");
  std::vector<Tape::Id> terms;
  for (const BufferRecord* r : records) {
    auto feat = net.features(r->obs, r->goal_code);
    Tape::Id v = net.value(CriticHead::kGcv, feat);
    terms.push_back(t.square(t.add_const(v, -r->v_old)));
  }
  return t.scale(t.mean(terms), beta_v);
}

Tape::Id gcv_loss_q(GraphNet& net, const std::vector<const BufferRecord*>& records,
                    double beta_q) {
  Tape& t = net.tape();
  if (beta_q == 0.0 || records.empty()) return t.constant(0.0);
  if (net.params().value_mode != ValueMode::kQ)
    throw std::invalid_argument("gcv_loss_q requires an action-value head");
  const bool discrete = net.params().action.kind == ActionKind::kCategorical;
  std::vector<Tape::Id> terms;
  for (const BufferRecord* r : records) {
    auto feat = net.features(r->obs, r->goal_code);
    Tape::Id q;
    if (discrete) {
      q = net.q_values(CriticHead::kGcv, feat)[static_cast<std::size_t>(r->action_discrete)];
    } else {
      q = net.q_value_continuous(CriticHead::kGcv, feat, r->action_continuous);
    }
    terms.push_back(t.square(t.add_const(q, -r->q_old)));
  }
  return t.scale(t.mean(terms), beta_q);
}

Tape::Id kl_old_loss(GraphNet& net, const std::vector<const BufferRecord*>& records,
                     KlMode mode, double alpha) {
  Tape& t = net.tape();
  if (alpha == 0.0 || records.empty()) return t.constant(0.0);
  const bool discrete = net.params().action.kind == ActionKind::kCategorical;
  std::vector<Tape::Id> terms;
  for (const BufferRecord* r : records) {
    auto feat = net.features(r->obs, r->goal_code);
    if (mode == KlMode::kKlDiv) {
      if (discrete) {
        auto lp = net.log_softmax(net.action_logits(feat));
        terms.push_back(categorical_kl_node(net, r->anchor_probs, lp));
      } else {
        auto [mean, log_std] = net.gaussian_params(feat);
        terms.push_back(
            gaussian_kl_node(t, r->anchor_mean, r->anchor_log_std, mean, log_std));
      }
    } else {
      if (discrete) {
        // Behavior cloning for categorical actions is cross-entropy to the
        // stored action, never a squared distance on logits.
        auto lp = net.log_softmax(net.action_logits(feat));
        terms.push_back(t.neg(net.log_prob_discrete(lp, r->action_discrete)));
      } else {
        auto [mean, log_std] = net.gaussian_params(feat);
        (void)log_std;
        Tape::Id acc = t.constant(0.0);
        for (std::size_t d = 0; d < mean.size(); ++d)
          acc = t.add(acc, t.square(t.add_const(mean[d], -r->action_continuous[d])));
        terms.push_back(acc);
      }
    }
  }
  return t.scale(t.mean(terms), alpha);
}

Tape::Id distill_loss(GraphNet& net, const ParameterStore& anchor,
                      const RolloutBatch& batch, double weight) {
  Tape& t = net.tape();
  if (weight == 0.0 || batch.steps.empty()) return t.constant(0.0);
  const bool discrete = net.params().action.kind == ActionKind::kCategorical;
  std::vector<Tape::Id> terms;
  for (const RolloutStep& s : batch.steps) {
    ActionDistribution ref = forward_policy(anchor, s.t.obs, s.t.goal_code);
    auto feat = net.features(s.t.obs, s.t.goal_code);
    if (discrete) {
      auto lp = net.log_softmax(net.action_logits(feat));
      terms.push_back(categorical_kl_node(net, ref.probs, lp));
    } else {
      auto [mean, log_std] = net.gaussian_params(feat);
      terms.push_back(gaussian_kl_node(t, ref.mean, ref.log_std, mean, log_std));
    }
  }
  return t.scale(t.mean(terms), weight);
}

Tape::Id total_loss(Tape& tape, const LossTerms& parts) {
  std::optional<Tape::Id> acc;
  for (const std::optional<Tape::Id>& part : {parts.ppo, parts.kl, parts.gcv, parts.mc})
    if (part) acc = acc ? tape.add(*acc, *part) : *part;
  return acc ? *acc : tape.constant(0.0);
}

void project_gradient(std::vector<double>& g, const std::vector<double>& g_ref) {
  if (g.size() != g_ref.size())
    throw std::invalid_argument("gradient vectors must have equal size");
  double d = inner(g, g_ref);
  double nn = inner(g_ref, g_ref);
  if (d >= 0.0 || nn <= 1e-18) return;
  double c = d / nn;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] -= c * g_ref[i];
}

PolicyFn make_network_policy(const ParameterStore& ps, bool greedy) {
  return [ps, greedy](const std::vector<double>& obs, const std::vector<double>& code,
                      Rng& rng) {
    ActionDistribution dist = forward_policy(ps, obs, code);
    EnvAction a;
    if (dist.kind == ActionKind::kCategorical) {
      a.discrete = greedy ? argmax_index(dist.probs) : dist.sample_discrete(rng);
    } else {
      a.continuous = greedy ? dist.mean : dist.sample_continuous(rng);
    }
    return a;
  };
}

namespace {

void append_batch(RolloutBatch& into, RolloutBatch&& from) {
  const int episode_offset = into.n_episodes;
  const int step_offset = static_cast<int>(into.steps.size());
  for (int s : from.episode_starts) into.episode_starts.push_back(s + step_offset);
  for (RolloutStep& step : from.steps) {
    step.episode += episode_offset;
    into.steps.push_back(std::move(step));
  }
  into.n_episodes += from.n_episodes;
}

}  // namespace

std::vector<double> baseline_success(const std::vector<TaskSpec>& stream, Method method,
                                     const AgentConfig& config, std::uint64_t seed) {
  if (stream.empty()) throw std::invalid_argument("stream must contain at least one task");
  if (config.eval_episodes < 1) throw std::invalid_argument("eval_episodes must be positive");

  std::vector<std::unique_ptr<Env>> envs;
  for (const TaskSpec& spec : stream) envs.push_back(make_task(spec));

  // Mirror run_task_stream's generator discipline draw for draw so the two
  // baseline vectors are bit-identical.
  Rng init_rng = make_rng(seed, kStreamInit);
  LearnerState state =
      init_learner(envs[0]->obs_dim(), envs[0]->goal_code_dim(), config.hidden,
                   envs[0]->action_spec(), method_value_mode(method), init_rng(),
                   config.goal_embed_dim);
  Rng eval_rng = make_rng(seed, kStreamEval);
  PolicyFn policy = make_network_policy(state.params, config.eval_greedy);
  std::vector<double> out;
  for (const auto& env : envs)
    out.push_back(success_rate(*env, policy, config.eval_episodes, eval_rng()));
  return out;
}

StreamResult run_task_stream(const std::vector<TaskSpec>& stream, Method method,
                             const AgentConfig& config, std::uint64_t seed) {
  if (stream.empty()) throw std::invalid_argument("stream must contain at least one task");
  config.ppo.validate();
  config.weights.validate();
  if (config.buffer_capacity < 1 || config.buffer_batch < 1 || config.eval_episodes < 1)
    throw std::invalid_argument("buffer and eval sizes must be positive");

  std::vector<std::unique_ptr<Env>> envs;
  for (const TaskSpec& spec : stream) envs.push_back(make_task(spec));
  const int n_tasks = static_cast<int>(envs.size());
  const int obs_dim = envs[0]->obs_dim();
  const int goal_dim = envs[0]->goal_code_dim();
  const ActionSpec aspec = envs[0]->action_spec();
  for (const auto& env : envs) {
    if (env->obs_dim() != obs_dim || env->goal_code_dim() != goal_dim ||
        env->action_spec().kind != aspec.kind || env->action_spec().dim != aspec.dim)
      throw std::invalid_argument("stream tasks must share observation, goal and action shapes");
    if (env->spec().gamma != config.ppo.gamma)
      throw std::invalid_argument("task gamma must equal the learner discount");
  }

  const ValueMode mode = method_value_mode(method);
  Rng init_rng = make_rng(seed, kStreamInit);
  LearnerState state = init_learner(obs_dim, goal_dim, config.hidden, aspec, mode,
                                    init_rng(), config.goal_embed_dim);
  state.kl_mode = config.kl_mode;
  SgdOptimizer opt(config.optimizer);
  Rng rollout_rng = make_rng(seed, kStreamRollout);
  Rng buffer_rng = make_rng(seed, kStreamBuffer);
  Rng eval_rng = make_rng(seed, kStreamEval);
  Rng reinit_rng = make_rng(seed, kStreamReinit);

  StreamResult out;
  out.n_tasks = n_tasks;

  auto eval_task = [&](int i, const ParameterStore& ps) {
    return success_rate(*envs[static_cast<std::size_t>(i)],
                        make_network_policy(ps, config.eval_greedy),
                        config.eval_episodes, eval_rng());
  };
  for (int i = 0; i < n_tasks; ++i) out.baseline.push_back(eval_task(i, state.params));

  for (int k = 0; k < n_tasks; ++k) {
    for (int step = 0; step < config.ppo.total_steps; ++step) {
      RolloutBatch batch;
      if (method == Method::kMtl) {
        for (int j = 0; j <= k; ++j)
          append_batch(batch, collect_rollouts(*envs[static_cast<std::size_t>(j)],
                                               state.params, config.ppo.rollout_episodes,
                                               rollout_rng()));
      } else {
        batch = collect_rollouts(*envs[static_cast<std::size_t>(k)], state.params,
                                 config.ppo.rollout_episodes, rollout_rng());
      }
      prepare_batch(batch, state.params, config.ppo);

      const bool has_old = state.stage > 1 && !state.buffers.empty();
      bool want_records = false;
      switch (method) {
        case Method::kCrlVlaV:
          want_records =
              has_old && (config.weights.alpha > 0.0 || config.weights.beta_v > 0.0);
          break;
        case Method::kCrlVlaQ:
          want_records =
              has_old && (config.weights.alpha > 0.0 || config.weights.beta_q > 0.0);
          break;
        case Method::kEr:
        case Method::kErMix:
          want_records = has_old;
          break;
        default:
          break;
      }
      std::vector<const BufferRecord*> records;
      if (want_records)
        records = sample_buffer_records(state.buffers, config.buffer_batch, buffer_rng);

      UpdateLog log;
      log.stage = state.stage;
      log.update = step;
      const int inner_updates = config.ppo.update_times * config.ppo.ppo_epochs;
      for (int u = 0; u < inner_updates; ++u) {
        if (approx_kl(batch, state.params) > config.ppo.d_targ) break;
        Tape tape;
        GraphNet net(tape, state.params);
        LossTerms parts;
        if (method == Method::kErMix && !records.empty()) {
          Tape::Id pn = ppo_loss(net, batch, config.ppo.clip_epsilon,
                                 config.ppo.entropy_coef);
          Tape::Id po = replay_ppo_loss(net, records, config.ppo.clip_epsilon);
          double n = static_cast<double>(batch.steps.size());
          double m = static_cast<double>(records.size());
          parts.ppo = tape.add(tape.scale(pn, n / (n + m)), tape.scale(po, m / (n + m)));
        } else {
          parts.ppo = ppo_loss(net, batch, config.ppo.clip_epsilon,
                               config.ppo.entropy_coef);
        }
        if (config.weights.eta > 0.0)
          parts.mc = mode == ValueMode::kQ ? mc_loss_q(net, batch, config.weights.eta)
                                           : mc_loss_v(net, batch, config.weights.eta);
        if (method == Method::kCrlVlaV && has_old && !records.empty()) {
          if (config.weights.beta_v > 0.0)
            parts.gcv = gcv_loss_v(net, records, config.weights.beta_v);
          if (config.weights.alpha > 0.0)
            parts.kl = kl_old_loss(net, records, state.kl_mode, config.weights.alpha);
        } else if (method == Method::kCrlVlaQ && has_old && !records.empty()) {
          if (config.weights.beta_q > 0.0)
            parts.gcv = gcv_loss_q(net, records, config.weights.beta_q);
          if (config.weights.alpha > 0.0)
            parts.kl = kl_old_loss(net, records, state.kl_mode, config.weights.alpha);
        } else if (method == Method::kLwf && state.anchor && config.weights.lwf > 0.0) {
          parts.kl = distill_loss(net, *state.anchor, batch, config.weights.lwf);
        }
        Tape::Id total = total_loss(tape, parts);
        tape.backward(total);
        GradientBundle grads = net.gradients();
        if (method == Method::kEr && !records.empty()) {
          Tape ref_tape;
          GraphNet ref_net(ref_tape, state.params);
          Tape::Id ref_loss = replay_policy_gradient_loss(ref_net, records);
          ref_tape.backward(ref_loss);
          project_gradient(grads.flat, ref_net.gradients().flat);
        }
        opt.step(state.params, grads);
        log.epochs_run = u + 1;
        log.loss_ppo = parts.ppo ? tape.value(*parts.ppo) : 0.0;
        log.loss_mc = parts.mc ? tape.value(*parts.mc) : 0.0;
        log.loss_gcv = parts.gcv ? tape.value(*parts.gcv) : 0.0;
        log.loss_kl = parts.kl ? tape.value(*parts.kl) : 0.0;
        log.loss_total = tape.value(total);
      }
      log.approx_kl_final = approx_kl(batch, state.params);
      if ((step + 1) % config.ppo.eval_interval == 0)
        log.eval_success = eval_task(k, state.params);
      out.logs.push_back(log);
    }

    RolloutBatch final_batch =
        collect_rollouts(*envs[static_cast<std::size_t>(k)], state.params,
                         config.ppo.rollout_episodes, rollout_rng());
    prepare_batch(final_batch, state.params, config.ppo);

    std::vector<double> row;
    for (int i = 0; i < n_tasks; ++i) row.push_back(eval_task(i, state.params));
    out.transfer.push_back(std::move(row));
    out.stage_params.push_back(state.params);

    if (k + 1 < n_tasks) {
      TransitionOptions topt;
      topt.capacity = config.buffer_capacity;
      topt.mc_warm_start = config.mc_warm_start;
      topt.reinit_seed = reinit_rng();
      task_transition(state, final_batch, topt);
      if (!config.mc_warm_start) opt.reset_slice(state.params.mc_head);
    }
  }
  out.final_params = state.params;
  return out;
}

}  // namespace crl
