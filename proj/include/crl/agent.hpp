#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "crl/envs.hpp"
#include "crl/network.hpp"
#include "crl/rng.hpp"
#include "crl/tape.hpp"

namespace crl {

struct PPOConfig {
  double clip_epsilon = 0.2;
  double gae_lambda = 0.95;
  double gamma = 0.99;
  double d_targ = 0.01;  // approximate-KL early stop threshold
  int ppo_epochs = 1;
  int rollout_episodes = 8;  // per collection, cycling the task's goals
  int update_times = 10;     // gradient steps per collection
  int total_steps = 12;      // collections per task
  int eval_interval = 1;     // collections between in-training eval log rows
  bool normalize_advantages = true;
  double entropy_coef = 0.0;  // policy-entropy bonus inside the clipped objective

  void validate() const;
};

struct LossWeights {
  double alpha = 1e-6;   // anchor-policy KL
  double beta_v = 0.001; // value-head anchor regression
  double beta_q = 0.01;  // action-value-head anchor regression
  double eta = 1.0;      // return-fitting critic loss
  double lwf = 1.0;      // distillation weight used by the lwf baseline

  void validate() const;
};

enum class KlMode { kKlDiv, kBcMse };

enum class Method { kSl, kEr, kErMix, kLwf, kMtl, kCrlVlaV, kCrlVlaQ };

Method parse_method(const std::string& name);
std::string method_name(Method method);
ValueMode method_value_mode(Method method);

// One env step plus everything the learner attaches to it.
struct RolloutStep {
  Transition t;
  int goal_index = 0;
  int episode = 0;
  double mc_return = 0.0;
  double value_pred = 0.0;
  double advantage = 0.0;
};

struct RolloutBatch {
  std::vector<RolloutStep> steps;
  std::vector<int> episode_starts;
  int n_episodes = 0;
  bool prepared = false;  // set once returns and advantages are filled

  int episode_end(int e) const {
    return e + 1 < n_episodes ? episode_starts[static_cast<std::size_t>(e) + 1]
                              : static_cast<int>(steps.size());
  }
};

// On-policy sampling with stored behavior log-probs; episode e uses goal
// e mod n_goals and the per-episode generator make_rng(seed, e).
RolloutBatch collect_rollouts(Env& env, const ParameterStore& ps, int n_episodes,
                              std::uint64_t seed);

// G_t = sum_{k>=t} gamma^{k-t} r_k by reverse scan.
std::vector<double> mc_returns(const std::vector<double>& rewards, double gamma);

// A_t = sum_k (gamma*lambda)^k delta_{t+k}, delta_t = r_t + gamma V_{t+1} - V_t,
// bootstrapping V = 0 past the end of the episode.
std::vector<double> gae_advantages(const std::vector<double>& rewards,
                                   const std::vector<double>& values, double gamma,
                                   double lambda);

// Fills returns, value predictions and advantages. The V path runs GAE over
// the value head; the Q path uses Q(s,a) - E_pi[Q(s,.)] directly (for
// continuous actions the expectation is approximated by Q at the policy
// mean). Optionally normalizes advantages to zero mean, unit variance.
void prepare_batch(RolloutBatch& batch, const ParameterStore& ps, const PPOConfig& cfg);

// mean(log pi_behavior - log pi_theta) over the batch.
double approx_kl(const RolloutBatch& batch, const ParameterStore& ps);
bool kl_early_stop(const RolloutBatch& batch, const ParameterStore& ps, double d_targ);

// Replay record frozen at a task transition. Targets are the anchor network's
// outputs at creation time and are never recomputed.
struct BufferRecord {
  std::vector<double> obs;
  std::vector<double> goal_code;
  int action_discrete = -1;
  std::vector<double> action_continuous;
  std::vector<double> anchor_probs;    // categorical policies
  std::vector<double> anchor_mean;     // gaussian policies
  std::vector<double> anchor_log_std;
  double anchor_log_prob = 0.0;
  double v_old = 0.0;
  double q_old = 0.0;
  double mc_return = 0.0;
  int goal_index = 0;
};

struct OldTaskBuffer {
  int source_task = 0;
  std::vector<BufferRecord> records;
};

struct LearnerState {
  ParameterStore params;
  std::optional<ParameterStore> anchor;  // absent only during the first task
  std::vector<OldTaskBuffer> buffers;
  int stage = 0;  // 1-based once initialized
  KlMode kl_mode = KlMode::kKlDiv;
};

LearnerState init_learner(int obs_dim, int goal_code_dim, const std::vector<int>& hidden,
                          ActionSpec action, ValueMode value_mode, std::uint64_t seed,
                          int goal_embed_dim = 0);

struct TransitionOptions {
  int capacity = 1024;
  bool mc_warm_start = false;  // default re-draws the return critic head
  std::uint64_t reinit_seed = 0;
};

// Freezes the current network as the anchor, copies the return-critic head
// into the frozen anchor-value head bit for bit, re-draws (or keeps) the
// return critic, and stores a replay buffer built from final_rollouts with
// targets computed by the new anchor. Increments the stage.
void task_transition(LearnerState& state, const RolloutBatch& final_rollouts,
                     const TransitionOptions& opts);

// Uniform draw without replacement across every stored record.
std::vector<const BufferRecord*> sample_buffer_records(
    const std::vector<OldTaskBuffer>& buffers, int batch, Rng& rng);

// Loss builders. Each returns a scalar tape node on net's tape with the
// stated weight already applied; a weight of exactly zero short-circuits to
// a constant node without touching the network.
// With a nonzero entropy coefficient the mean policy entropy over the batch
// states, scaled by the coefficient, is subtracted from the clipped loss.
Tape::Id ppo_loss(GraphNet& net, const RolloutBatch& batch, double clip_epsilon,
                  double entropy_coef = 0.0);
Tape::Id mc_loss_v(GraphNet& net, const RolloutBatch& batch, double eta);
Tape::Id mc_loss_q(GraphNet& net, const RolloutBatch& batch, double eta);
Tape::Id gcv_loss_v(GraphNet& net, const std::vector<const BufferRecord*>& records,
                    double beta_v);
Tape::Id gcv_loss_q(GraphNet& net, const std::vector<const BufferRecord*>& records,
                    double beta_q);
Tape::Id kl_old_loss(GraphNet& net, const std::vector<const BufferRecord*>& records,
                     KlMode mode, double alpha);
// Anchor-to-current distillation on new-task states (the lwf baseline).
Tape::Id distill_loss(GraphNet& net, const ParameterStore& anchor,
                      const RolloutBatch& batch, double weight);
// Clipped surrogate over replay records, with the stored anchor log-prob as
// the behavior term and (mc_return - v_old) as the advantage.
Tape::Id replay_ppo_loss(GraphNet& net, const std::vector<const BufferRecord*>& records,
                         double clip_epsilon);
// -mean(log pi_theta(a|s,g) * (mc_return - v_old)): the reference gradient
// source for the episodic-memory projection.
Tape::Id replay_policy_gradient_loss(GraphNet& net,
                                     const std::vector<const BufferRecord*>& records);

struct LossTerms {
  std::optional<Tape::Id> ppo;
  std::optional<Tape::Id> mc;
  std::optional<Tape::Id> gcv;
  std::optional<Tape::Id> kl;
};

// Sum of the present parts in fixed order; absent parts cost nothing.
Tape::Id total_loss(Tape& tape, const LossTerms& parts);

// Single-constraint episodic-memory projection, in place:
// if g . g_ref < 0, g <- g - (g . g_ref / |g_ref|^2) g_ref.
void project_gradient(std::vector<double>& g, const std::vector<double>& g_ref);

struct UpdateLog {
  int stage = 0;
  int update = 0;      // collection index within the stage
  int epochs_run = 0;  // gradient steps actually taken
  double loss_ppo = 0.0;
  double loss_mc = 0.0;
  double loss_gcv = 0.0;
  double loss_kl = 0.0;
  double loss_total = 0.0;
  double approx_kl_final = 0.0;
  double eval_success = -1.0;  // -1 when this collection was not evaluated
};

struct AgentConfig {
  PPOConfig ppo;
  LossWeights weights;
  OptimizerConfig optimizer;
  std::vector<int> hidden = {64, 64};
  int goal_embed_dim = 0;
  KlMode kl_mode = KlMode::kKlDiv;
  int buffer_capacity = 1024;
  int buffer_batch = 64;
  bool mc_warm_start = false;
  int eval_episodes = 20;
  bool eval_greedy = true;
};

struct StreamResult {
  int n_tasks = 0;
  std::vector<std::vector<double>> transfer;  // transfer[k][i]: task i after stage k+1
  std::vector<double> baseline;               // init-policy success per task
  std::vector<UpdateLog> logs;
  std::vector<ParameterStore> stage_params;  // snapshot after each stage
  ParameterStore final_params;
};

// Greedy mode takes the argmax action (or the gaussian mean); otherwise the
// policy is sampled with the generator success_rate supplies.
PolicyFn make_network_policy(const ParameterStore& ps, bool greedy);

// Runs the continual loop over the task stream and fills the transfer matrix
// row by row. Deterministic in (stream, method, config, seed).
StreamResult run_task_stream(const std::vector<TaskSpec>& stream, Method method,
                             const AgentConfig& config, std::uint64_t seed);

// Success of the freshly initialized policy on every task, before any
// training: exactly the values run_task_stream records as
// StreamResult::baseline for the same arguments.
std::vector<double> baseline_success(const std::vector<TaskSpec>& stream, Method method,
                                     const AgentConfig& config, std::uint64_t seed);

}  // namespace crl
