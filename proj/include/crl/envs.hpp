#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "crl/mdp.hpp"
#include "crl/network.hpp"
#include "crl/rng.hpp"

namespace crl {

enum class EnvFamily { kGridPickPlace, kPointReach };
enum class RewardMode { kSparse, kShaped };

// One goal: put the object on (or reach) `target`. For the grid family the
// target is a cell index; for point-reach it is a 2-d point. Ids are global
// across a task stream so goal codes stay distinct between tasks.
struct GoalSpec {
  int id = 0;
  int target_cell = 0;
  std::vector<double> target_point;
  std::string label;
};

struct TaskSpec {
  EnvFamily family = EnvFamily::kGridPickPlace;
  int grid_size = 4;
  double arena_half_width = 1.0;
  std::uint64_t layout_seed = 0;
  std::vector<int> goal_ids;
  int horizon = 100;
  RewardMode reward_mode = RewardMode::kSparse;
  double gamma = 0.9;  // discount used for potential shaping and tabular export
  int goal_code_dim = 0;  // 0 means max(goal_ids) + 1
};

struct StepResult {
  std::vector<double> obs;
  double reward = 0.0;
  bool done = false;
  bool success = false;
};

// One recorded env interaction, as collected during a rollout. Exactly one of
// the two action fields is meaningful, chosen by the env's action kind.
struct Transition {
  std::vector<double> obs;
  std::vector<double> goal_code;
  int action_discrete = -1;
  std::vector<double> action_continuous;
  double reward = 0.0;
  std::vector<double> next_obs;
  bool done = false;
  double log_prob_behavior = 0.0;
  int step_index = 0;
};

class Env {
 public:
  virtual ~Env() = default;

  virtual const TaskSpec& spec() const = 0;
  virtual int obs_dim() const = 0;
  virtual int goal_code_dim() const = 0;
  virtual ActionSpec action_spec() const = 0;
  virtual int n_goals() const = 0;
  virtual std::vector<double> goal_code(int goal_index) const = 0;
  virtual const GoalSpec& goal(int goal_index) const = 0;

  // Deterministic given (spec, layout seed, episode_seed). The grid family
  // has a layout-fixed initial state and ignores episode_seed.
  virtual std::vector<double> reset(int goal_index, std::uint64_t episode_seed) = 0;
  virtual StepResult step_discrete(int action) = 0;
  virtual StepResult step_continuous(const std::vector<double>& action) = 0;
  virtual bool done() const = 0;
  virtual int steps_taken() const = 0;

  // Potential of the current state for the active goal; used by the shaped
  // reward and exposed so tests can check the telescoping identity.
  virtual double potential(int goal_index) const = 0;
};

// Grid actions, in the order exposed to the policy head.
enum GridAction {
  kUp = 0,
  kDown = 1,
  kLeft = 2,
  kRight = 3,
  kPick = 4,
  kPlace = 5,
};
inline constexpr int kGridActionCount = 6;

class GridPickPlaceEnv final : public Env {
 public:
  explicit GridPickPlaceEnv(const TaskSpec& spec);

  const TaskSpec& spec() const override { return spec_; }
  int obs_dim() const override { return 6; }
  int goal_code_dim() const override { return goal_code_dim_; }
  ActionSpec action_spec() const override {
    return {ActionKind::kCategorical, kGridActionCount};
  }
  int n_goals() const override { return static_cast<int>(goals_.size()); }
  std::vector<double> goal_code(int goal_index) const override;
  const GoalSpec& goal(int goal_index) const override;

  std::vector<double> reset(int goal_index, std::uint64_t episode_seed) override;
  StepResult step_discrete(int action) override;
  StepResult step_continuous(const std::vector<double>&) override;
  bool done() const override { return done_; }
  int steps_taken() const override { return steps_; }
  double potential(int goal_index) const override;

  int agent_start() const { return agent_start_; }
  int object_start() const { return object_start_; }

  // Internal state: agent cell plus object mode. Object mode o encodes
  // free-at-cell o for o < n*n, carried for o == n*n, placed-at-cell
  // (o - n*n - 1) above that. Placing is one-shot; a placed object can not
  // be picked back up, so every post-place state is reward-free for all
  // goals and the exact export can collapse them.
  struct State {
    int agent = 0;
    int object = 0;
  };
  State state() const { return state_; }

 private:
  TaskSpec spec_;
  std::vector<GoalSpec> goals_;
  int goal_code_dim_ = 0;
  int agent_start_ = 0;
  int object_start_ = 0;
  State state_;
  int active_goal_ = 0;
  int steps_ = 0;
  bool done_ = true;
};

class PointReachEnv final : public Env {
 public:
  explicit PointReachEnv(const TaskSpec& spec);

  const TaskSpec& spec() const override { return spec_; }
  int obs_dim() const override { return 2; }
  int goal_code_dim() const override { return goal_code_dim_; }
  ActionSpec action_spec() const override { return {ActionKind::kGaussian, 2}; }
  int n_goals() const override { return static_cast<int>(goals_.size()); }
  std::vector<double> goal_code(int goal_index) const override;
  const GoalSpec& goal(int goal_index) const override;

  std::vector<double> reset(int goal_index, std::uint64_t episode_seed) override;
  StepResult step_discrete(int) override;
  StepResult step_continuous(const std::vector<double>& action) override;
  bool done() const override { return done_; }
  int steps_taken() const override { return steps_; }
  double potential(int goal_index) const override;

  double success_tolerance() const;

 private:
  TaskSpec spec_;
  std::vector<GoalSpec> goals_;
  int goal_code_dim_ = 0;
  double x_ = 0.0;
  double y_ = 0.0;
  int active_goal_ = 0;
  int steps_ = 0;
  bool done_ = true;
};

inline constexpr double kPointReachDt = 0.1;

std::unique_ptr<Env> make_task(const TaskSpec& spec);

// Exact finite export of a grid env. Column g of the MDP corresponds to
// goals[g] of the env; state_obs[s] is the observation the live env would
// emit in tabular state s, so a network policy can be evaluated per state.
struct TabularExport {
  GoalConditionedMdp mdp;
  std::vector<std::vector<double>> state_obs;
  int n_states = 0;
};

TabularExport to_tabular(const GridPickPlaceEnv& env);

struct EnvAction {
  int discrete = -1;
  std::vector<double> continuous;
};

using PolicyFn =
    std::function<EnvAction(const std::vector<double>& obs,
                            const std::vector<double>& goal_code, Rng& rng)>;

// Fraction of episodes that reach success within the horizon. Episode i uses
// goal (i mod n_goals) when goal_index is -1, otherwise the fixed goal.
double success_rate(Env& env, const PolicyFn& policy, int n_episodes,
                    std::uint64_t seed, int goal_index = -1);

}  // namespace crl
