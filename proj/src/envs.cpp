#include "crl/envs.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace crl {
namespace {

void validate_spec(const TaskSpec& spec) {
  if (spec.horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (spec.goal_ids.empty()) throw std::invalid_argument("goal_set must be non-empty");
  if (spec.gamma <= 0.0 || spec.gamma >= 1.0)
    throw std::invalid_argument("gamma must be in (0, 1)");
  if (spec.family == EnvFamily::kGridPickPlace && spec.grid_size < 1)
    throw std::invalid_argument("grid_size must be >= 1");
  if (spec.family == EnvFamily::kPointReach && spec.arena_half_width <= 0.0)
    throw std::invalid_argument("arena_half_width must be > 0");
}

int resolve_goal_code_dim(const TaskSpec& spec) {
  int max_id = 0;
  for (int id : spec.goal_ids) {
    if (id < 0) throw std::invalid_argument("goal ids must be non-negative");
    max_id = std::max(max_id, id);
  }
  if (spec.goal_code_dim == 0) return max_id + 1;
  if (spec.goal_code_dim <= max_id)
    throw std::invalid_argument("goal_code_dim too small for goal ids");
  return spec.goal_code_dim;
}

// Pure state arithmetic for the grid family, shared by the live env and the
// exact export so the two tracks can not drift apart.
struct GridCore {
  int n = 1;

  int cells() const { return n * n; }
  int carried_code() const { return cells(); }
  bool is_free(int object) const { return object < cells(); }
  bool is_carried(int object) const { return object == cells(); }
  bool is_placed(int object) const { return object > cells(); }
  int placed_code(int cell) const { return cells() + 1 + cell; }
  int placed_cell(int object) const { return object - cells() - 1; }

  int object_cell(const GridPickPlaceEnv::State& s) const {
    if (is_carried(s.object)) return s.agent;
    if (is_placed(s.object)) return placed_cell(s.object);
    return s.object;
  }

  int move(int cell, int action) const {
    int x = cell % n;
    int y = cell / n;
    switch (action) {
      case kUp: y = std::max(0, y - 1); break;
      case kDown: y = std::min(n - 1, y + 1); break;
      case kLeft: x = std::max(0, x - 1); break;
      case kRight: x = std::min(n - 1, x + 1); break;
      default: break;
    }
    return y * n + x;
  }

  GridPickPlaceEnv::State next(GridPickPlaceEnv::State s, int action) const {
    if (action < kPick) {
      s.agent = move(s.agent, action);
    } else if (action == kPick) {
      if (is_free(s.object) && s.object == s.agent) s.object = carried_code();
    } else if (action == kPlace) {
      if (is_carried(s.object)) s.object = placed_code(s.agent);
    }
    return s;
  }

  bool success_transition(const GridPickPlaceEnv::State& s, int action,
                          int target) const {
    return is_carried(s.object) && action == kPlace && s.agent == target;
  }

  int manhattan(int a, int b) const {
    return std::abs(a % n - b % n) + std::abs(a / n - b / n);
  }

  double phi(const GridPickPlaceEnv::State& s, int target) const {
    if (n == 1) return 0.0;
    return -manhattan(object_cell(s), target) / (2.0 * (n - 1));
  }

  double reward(const GridPickPlaceEnv::State& s, int action, int target,
                RewardMode mode, double gamma) const {
    double r = success_transition(s, action, target) ? 1.0 : 0.0;
    if (mode == RewardMode::kShaped)
      r += gamma * phi(next(s, action), target) - phi(s, target);
    return r;
  }

  double coord(int v) const { return n == 1 ? 0.0 : 2.0 * v / (n - 1.0) - 1.0; }

  std::vector<double> observation(const GridPickPlaceEnv::State& s) const {
    int oc = object_cell(s);
    return {coord(s.agent % n),          coord(s.agent / n),
            is_carried(s.object) ? 1.0 : 0.0, is_placed(s.object) ? 1.0 : 0.0,
            coord(oc % n),               coord(oc / n)};
  }
};

std::string cell_label(int cell, int n) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "put object on cell (%d, %d)", cell % n, cell / n);
  return buf;
}

}  // namespace

GridPickPlaceEnv::GridPickPlaceEnv(const TaskSpec& spec) : spec_(spec) {
  if (spec_.family != EnvFamily::kGridPickPlace)
    throw std::invalid_argument("spec family is not grid-pickplace");
  validate_spec(spec_);
  goal_code_dim_ = resolve_goal_code_dim(spec_);
  GridCore core{spec_.grid_size};
  Rng rng = make_rng(spec_.layout_seed, 0);
  agent_start_ = uniform_int(rng, 0, core.cells() - 1);
  object_start_ = uniform_int(rng, 0, core.cells() - 1);
  for (int id : spec_.goal_ids) {
    GoalSpec g;
    g.id = id;
    g.target_cell = uniform_int(rng, 0, core.cells() - 1);
    g.label = cell_label(g.target_cell, spec_.grid_size);
    goals_.push_back(std::move(g));
  }
}

std::vector<double> GridPickPlaceEnv::goal_code(int goal_index) const {
  return one_hot(goal(goal_index).id, goal_code_dim_);
}

const GoalSpec& GridPickPlaceEnv::goal(int goal_index) const {
  if (goal_index < 0 || goal_index >= n_goals())
    throw std::out_of_range("goal index out of range");
  return goals_[static_cast<std::size_t>(goal_index)];
}

std::vector<double> GridPickPlaceEnv::reset(int goal_index, std::uint64_t) {
  goal(goal_index);
  active_goal_ = goal_index;
  state_ = State{agent_start_, object_start_};
  steps_ = 0;
  done_ = false;
  return GridCore{spec_.grid_size}.observation(state_);
}

StepResult GridPickPlaceEnv::step_discrete(int action) {
  if (done_) throw std::logic_error("step called on a finished episode; reset first");
  if (action < 0 || action >= kGridActionCount)
    throw std::invalid_argument("grid action out of range");
  GridCore core{spec_.grid_size};
  int target = goals_[static_cast<std::size_t>(active_goal_)].target_cell;
  StepResult out;
  out.reward = core.reward(state_, action, target, spec_.reward_mode, spec_.gamma);
  out.success = core.success_transition(state_, action, target);
  state_ = core.next(state_, action);
  ++steps_;
  done_ = out.success || steps_ >= spec_.horizon;
  out.done = done_;
  out.obs = core.observation(state_);
  return out;
}

StepResult GridPickPlaceEnv::step_continuous(const std::vector<double>&) {
  throw std::invalid_argument("grid-pickplace takes discrete actions");
}

double GridPickPlaceEnv::potential(int goal_index) const {
  return GridCore{spec_.grid_size}.phi(state_, goal(goal_index).target_cell);
}

PointReachEnv::PointReachEnv(const TaskSpec& spec) : spec_(spec) {
  if (spec_.family != EnvFamily::kPointReach)
    throw std::invalid_argument("spec family is not point-reach");
  validate_spec(spec_);
  goal_code_dim_ = resolve_goal_code_dim(spec_);
  Rng rng = make_rng(spec_.layout_seed, 0);
  double hw = spec_.arena_half_width;
  for (int id : spec_.goal_ids) {
    GoalSpec g;
    g.id = id;
    g.target_point = {uniform(rng, -hw, hw), uniform(rng, -hw, hw)};
    char buf[64];
    std::snprintf(buf, sizeof(buf), "reach point (%.2f, %.2f)", g.target_point[0],
                  g.target_point[1]);
    g.label = buf;
    goals_.push_back(std::move(g));
  }
}

std::vector<double> PointReachEnv::goal_code(int goal_index) const {
  return one_hot(goal(goal_index).id, goal_code_dim_);
}

const GoalSpec& PointReachEnv::goal(int goal_index) const {
  if (goal_index < 0 || goal_index >= n_goals())
    throw std::out_of_range("goal index out of range");
  return goals_[static_cast<std::size_t>(goal_index)];
}

std::vector<double> PointReachEnv::reset(int goal_index, std::uint64_t episode_seed) {
  goal(goal_index);
  active_goal_ = goal_index;
  Rng rng = make_rng(episode_seed, 1);
  double hw = spec_.arena_half_width;
  x_ = uniform(rng, -hw, hw);
  y_ = uniform(rng, -hw, hw);
  steps_ = 0;
  done_ = false;
  return {x_ / hw, y_ / hw};
}

StepResult PointReachEnv::step_discrete(int) {
  throw std::invalid_argument("point-reach takes continuous actions");
}

double PointReachEnv::success_tolerance() const {
  return 0.2 * spec_.arena_half_width;
}

double PointReachEnv::potential(int goal_index) const {
  const auto& t = goal(goal_index).target_point;
  double hw = spec_.arena_half_width;
  return -std::hypot(x_ - t[0], y_ - t[1]) / (2.0 * std::sqrt(2.0) * hw);
}

StepResult PointReachEnv::step_continuous(const std::vector<double>& action) {
  if (done_) throw std::logic_error("step called on a finished episode; reset first");
  if (action.size() != 2) throw std::invalid_argument("point-reach action must be 2-d");
  double hw = spec_.arena_half_width;
  double phi_before = potential(active_goal_);
  double ax = std::clamp(action[0], -1.0, 1.0);
  double ay = std::clamp(action[1], -1.0, 1.0);
  x_ = std::clamp(x_ + kPointReachDt * ax, -hw, hw);
  y_ = std::clamp(y_ + kPointReachDt * ay, -hw, hw);
  const auto& t = goals_[static_cast<std::size_t>(active_goal_)].target_point;
  StepResult out;
  out.success = std::hypot(x_ - t[0], y_ - t[1]) <= success_tolerance();
  out.reward = out.success ? 1.0 : 0.0;
  if (spec_.reward_mode == RewardMode::kShaped)
    out.reward += spec_.gamma * potential(active_goal_) - phi_before;
  ++steps_;
  done_ = out.success || steps_ >= spec_.horizon;
  out.done = done_;
  out.obs = {x_ / hw, y_ / hw};
  return out;
}

std::unique_ptr<Env> make_task(const TaskSpec& spec) {
  if (spec.family == EnvFamily::kGridPickPlace)
    return std::make_unique<GridPickPlaceEnv>(spec);
  return std::make_unique<PointReachEnv>(spec);
}

TabularExport to_tabular(const GridPickPlaceEnv& env) {
  const TaskSpec& spec = env.spec();
  GridCore core{spec.grid_size};
  const int cells = core.cells();
  // Non-placed states are agent x (free cell | carried); every post-place
  // future is action-independent, so placed states collapse to one absorbing
  // state per placed cell.
  const int n_live = cells * (cells + 1);
  const int n_states = n_live + cells;
  if (n_states > 4096)
    throw std::invalid_argument("state space too large for exact export");
  const int n_actions = kGridActionCount;
  const int n_goals = env.n_goals();

  auto tab_index = [&](const GridPickPlaceEnv::State& s) {
    if (core.is_placed(s.object)) return n_live + core.placed_cell(s.object);
    return s.agent * (cells + 1) + s.object;
  };

  TabularExport out;
  out.n_states = n_states;
  GoalConditionedMdp& m = out.mdp;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.n_goals = n_goals;
  m.gamma = spec.gamma;
  m.transition.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
  m.reward.assign(static_cast<std::size_t>(n_states) * n_actions * n_goals, 0.0);
  m.initial_dist.assign(static_cast<std::size_t>(n_goals) * n_states, 0.0);
  out.state_obs.resize(static_cast<std::size_t>(n_states));

  auto fill_state = [&](int s, const GridPickPlaceEnv::State& st, bool absorbing) {
    out.state_obs[static_cast<std::size_t>(s)] = core.observation(st);
    for (int a = 0; a < n_actions; ++a) {
      int s2 = absorbing ? s : tab_index(core.next(st, a));
      m.transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2] = 1.0;
      for (int g = 0; g < n_goals; ++g) {
        double r = core.reward(st, a, env.goal(g).target_cell, spec.reward_mode,
                               spec.gamma);
        m.reward[(static_cast<std::size_t>(s) * n_actions + a) * n_goals + g] = r;
      }
    }
  };

  for (int agent = 0; agent < cells; ++agent)
    for (int object = 0; object <= cells; ++object)
      fill_state(agent * (cells + 1) + object, GridPickPlaceEnv::State{agent, object},
                 false);
  for (int c = 0; c < cells; ++c)
    fill_state(n_live + c, GridPickPlaceEnv::State{c, core.placed_code(c)}, true);

  int s0 = tab_index(GridPickPlaceEnv::State{env.agent_start(), env.object_start()});
  for (int g = 0; g < n_goals; ++g)
    m.initial_dist[static_cast<std::size_t>(g) * n_states + s0] = 1.0;

  m.validate();
  return out;
}

double success_rate(Env& env, const PolicyFn& policy, int n_episodes,
                    std::uint64_t seed, int goal_index) {
  if (n_episodes <= 0) throw std::invalid_argument("n_episodes must be positive");
  if (goal_index >= env.n_goals())
    throw std::out_of_range("goal index out of range");
  const bool discrete = env.action_spec().kind == ActionKind::kCategorical;
  int successes = 0;
  for (int i = 0; i < n_episodes; ++i) {
    int g = goal_index >= 0 ? goal_index : i % env.n_goals();
    Rng rng = make_rng(seed, static_cast<std::uint64_t>(i));
    std::uint64_t episode_seed = rng();
    std::vector<double> obs = env.reset(g, episode_seed);
    std::vector<double> code = env.goal_code(g);
    while (!env.done()) {
      EnvAction act = policy(obs, code, rng);
      StepResult res = discrete ? env.step_discrete(act.discrete)
                                : env.step_continuous(act.continuous);
      obs = std::move(res.obs);
      if (res.success) {
        ++successes;
        break;
      }
    }
  }
  return static_cast<double>(successes) / n_episodes;
}

}  // namespace crl
