#include "crl/config.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace crl {
namespace {

struct Value {
  bool is_list = false;
  std::string scalar;        // trimmed token, quotes removed
  std::vector<Value> items;  // when is_list
};

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Recursive value grammar: list := '[' value (',' value)* ']' | '[' ']',
// scalar := bare or quoted token.
Value parse_value(const std::string& text, std::size_t& pos);

void skip_ws(const std::string& text, std::size_t& pos) {
  while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
}

Value parse_list(const std::string& text, std::size_t& pos) {
  Value v;
  v.is_list = true;
  ++pos;  // consume '['
  skip_ws(text, pos);
  if (pos < text.size() && text[pos] == ']') {
    ++pos;
    return v;
  }
  while (true) {
    v.items.push_back(parse_value(text, pos));
    skip_ws(text, pos);
    if (pos >= text.size()) fail("unterminated list in value: " + text);
    if (text[pos] == ',') {
      ++pos;
      continue;
    }
    if (text[pos] == ']') {
      ++pos;
      return v;
    }
    fail("expected ',' or ']' in list: " + text);
  }
}

Value parse_value(const std::string& text, std::size_t& pos) {
  skip_ws(text, pos);
  if (pos >= text.size()) fail("missing value: " + text);
  if (text[pos] == '[') return parse_list(text, pos);
  Value v;
  if (text[pos] == '"') {
    std::size_t end = text.find('"', pos + 1);
    if (end == std::string::npos) fail("unterminated string in value: " + text);
    v.scalar = text.substr(pos + 1, end - pos - 1);
    pos = end + 1;
    return v;
  }
  std::size_t end = pos;
  while (end < text.size() && text[end] != ',' && text[end] != ']') ++end;
  v.scalar = trim(text.substr(pos, end - pos));
  pos = end;
  if (v.scalar.empty()) fail("missing value: " + text);
  return v;
}

struct Section {
  std::map<std::string, Value> entries;
  std::set<std::string> consumed;
};

class Extractor {
 public:
  Extractor(std::string name, Section* section) : name_(std::move(name)), s_(section) {}

  bool has(const std::string& key) const {
    return s_ != nullptr && s_->entries.count(key) > 0;
  }
  const Value& take(const std::string& key) {
    s_->consumed.insert(key);
    return s_->entries.at(key);
  }

  double number(const std::string& key, double fallback) {
    if (!has(key)) return fallback;
    return to_number(take(key), key);
  }
  int integer(const std::string& key, int fallback) {
    if (!has(key)) return fallback;
    double d = to_number(take(key), key);
    int i = static_cast<int>(d);
    if (static_cast<double>(i) != d) fail(path(key) + " must be an integer");
    return i;
  }
  bool boolean(const std::string& key, bool fallback) {
    if (!has(key)) return fallback;
    const std::string& s = take(key).scalar;
    if (s == "true") return true;
    if (s == "false") return false;
    fail(path(key) + " must be true or false");
  }
  std::string text(const std::string& key, const std::string& fallback) {
    if (!has(key)) return fallback;
    const Value& v = take(key);
    if (v.is_list) fail(path(key) + " must be a scalar");
    return v.scalar;
  }
  std::vector<Value> list(const std::string& key) {
    const Value& v = take(key);
    if (!v.is_list) fail(path(key) + " must be a list");
    return v.items;
  }

  double to_number(const Value& v, const std::string& key) const {
    if (v.is_list) fail(path(key) + " must be a number");
    char* end = nullptr;
    double d = std::strtod(v.scalar.c_str(), &end);
    if (end == v.scalar.c_str() || *end != '\0') fail(path(key) + " is not a number");
    return d;
  }

  std::string path(const std::string& key) const { return name_ + "." + key; }

 private:
  std::string name_;
  Section* s_;
};

std::vector<int> int_list(Extractor& ex, const std::string& key, const std::vector<Value>& items) {
  std::vector<int> out;
  for (const Value& v : items) {
    double d = ex.to_number(v, key);
    int i = static_cast<int>(d);
    if (static_cast<double>(i) != d) fail(ex.path(key) + " entries must be integers");
    out.push_back(i);
  }
  return out;
}

const std::set<std::string> kSections = {"stream", "ppo",     "weights", "variant",
                                         "eval",   "methods", "seeds"};

}  // namespace

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

BenchmarkConfig parse_config_text(const std::string& text) {
  std::map<std::string, Section> sections;
  std::string current;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::size_t hash = raw.find('#');
    if (hash != std::string::npos) raw = raw.substr(0, hash);
    std::string line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("malformed section header at line " + std::to_string(line_no));
      current = trim(line.substr(1, line.size() - 2));
      if (!kSections.count(current)) fail("unknown section: " + current);
      sections[current];
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value at line " + std::to_string(line_no));
    if (current.empty()) fail("key outside any section at line " + std::to_string(line_no));
    std::string key = trim(line.substr(0, eq));
    std::string rhs = trim(line.substr(eq + 1));
    std::size_t pos = 0;
    Value v = parse_value(rhs, pos);
    skip_ws(rhs, pos);
    if (pos != rhs.size()) fail("trailing characters after value of " + current + "." + key);
    if (!sections[current].entries.emplace(key, std::move(v)).second)
      fail("duplicate key: " + current + "." + key);
  }

  BenchmarkConfig cfg;
  cfg.config_hash = fnv1a_hex(text);

  auto section_of = [&](const std::string& name) -> Section* {
    auto it = sections.find(name);
    return it == sections.end() ? nullptr : &it->second;
  };

  // [ppo]
  {
    Extractor ex("ppo", section_of("ppo"));
    PPOConfig& p = cfg.agent.ppo;
    p.clip_epsilon = ex.number("clip_epsilon", p.clip_epsilon);
    p.gae_lambda = ex.number("gae_lambda", p.gae_lambda);
    p.gamma = ex.number("gamma", p.gamma);
    p.d_targ = ex.number("d_targ", p.d_targ);
    p.ppo_epochs = ex.integer("ppo_epochs", p.ppo_epochs);
    p.rollout_episodes = ex.integer("rollout_episodes", p.rollout_episodes);
    p.update_times = ex.integer("update_times", p.update_times);
    p.total_steps = ex.integer("total_steps", p.total_steps);
    p.normalize_advantages = ex.boolean("normalize_advantages", p.normalize_advantages);
    p.entropy_coef = ex.number("entropy_coef", p.entropy_coef);
  }

  // [weights]
  {
    Extractor ex("weights", section_of("weights"));
    LossWeights& w = cfg.agent.weights;
    w.alpha = ex.number("alpha", w.alpha);
    w.beta_v = ex.number("beta_v", w.beta_v);
    w.beta_q = ex.number("beta_q", w.beta_q);
    w.eta = ex.number("eta", w.eta);
    w.lwf = ex.number("lwf", w.lwf);
  }

  // [variant]
  {
    Extractor ex("variant", section_of("variant"));
    if (ex.has("hidden")) cfg.agent.hidden = int_list(ex, "hidden", ex.list("hidden"));
    cfg.agent.goal_embed_dim = ex.integer("goal_embed_dim", cfg.agent.goal_embed_dim);
    std::string kl = ex.text("kl_mode", "kl");
    if (kl == "kl")
      cfg.agent.kl_mode = KlMode::kKlDiv;
    else if (kl == "bc-mse")
      cfg.agent.kl_mode = KlMode::kBcMse;
    else
      fail("variant.kl_mode must be kl or bc-mse");
    cfg.agent.buffer_capacity = ex.integer("buffer_capacity", cfg.agent.buffer_capacity);
    cfg.agent.buffer_batch = ex.integer("buffer_batch", cfg.agent.buffer_batch);
    cfg.agent.mc_warm_start = ex.boolean("mc_warm_start", cfg.agent.mc_warm_start);
    OptimizerConfig& o = cfg.agent.optimizer;
    o.lr_backbone = ex.number("lr_backbone", o.lr_backbone);
    o.lr_action = ex.number("lr_action", o.lr_action);
    o.lr_critic = ex.number("lr_critic", o.lr_critic);
    o.momentum = ex.number("momentum", o.momentum);
    o.grad_clip = ex.number("grad_clip", o.grad_clip);
  }

  // [eval]
  {
    Extractor ex("eval", section_of("eval"));
    cfg.agent.eval_episodes = ex.integer("episodes", cfg.agent.eval_episodes);
    cfg.agent.eval_greedy = ex.boolean("greedy", cfg.agent.eval_greedy);
    cfg.agent.ppo.eval_interval = ex.integer("interval", cfg.agent.ppo.eval_interval);
  }

  // [stream]
  {
    Section* s = section_of("stream");
    if (s == nullptr) fail("missing required section: stream");
    Extractor ex("stream", s);
    TaskSpec base;
    std::string family = ex.text("family", "grid-pick-place");
    if (family == "grid-pick-place")
      base.family = EnvFamily::kGridPickPlace;
    else if (family == "point-reach")
      base.family = EnvFamily::kPointReach;
    else
      fail("stream.family must be grid-pick-place or point-reach");
    base.grid_size = ex.integer("grid_size", base.grid_size);
    base.arena_half_width = ex.number("arena_half_width", base.arena_half_width);
    base.horizon = ex.integer("horizon", base.horizon);
    std::string mode = ex.text("reward_mode", "shaped");
    if (mode == "sparse")
      base.reward_mode = RewardMode::kSparse;
    else if (mode == "shaped")
      base.reward_mode = RewardMode::kShaped;
    else
      fail("stream.reward_mode must be sparse or shaped");
    base.gamma = ex.number("gamma", cfg.agent.ppo.gamma);
    if (base.gamma != cfg.agent.ppo.gamma)
      fail("stream.gamma must equal ppo.gamma");
    base.goal_code_dim = ex.integer("goal_code_dim", base.goal_code_dim);

    if (!ex.has("layout_seeds")) fail("missing required key: stream.layout_seeds");
    if (!ex.has("goal_ids")) fail("missing required key: stream.goal_ids");
    std::vector<Value> seeds = ex.list("layout_seeds");
    std::vector<Value> goals = ex.list("goal_ids");
    if (seeds.empty()) fail("stream.layout_seeds must not be empty");
    if (seeds.size() != goals.size())
      fail("stream.layout_seeds and stream.goal_ids must have one entry per task");
    for (std::size_t t = 0; t < seeds.size(); ++t) {
      TaskSpec spec = base;
      double d = ex.to_number(seeds[t], "layout_seeds");
      if (d < 0 || static_cast<double>(static_cast<std::uint64_t>(d)) != d)
        fail("stream.layout_seeds entries must be non-negative integers");
      spec.layout_seed = static_cast<std::uint64_t>(d);
      if (!goals[t].is_list) fail("stream.goal_ids entries must be lists");
      spec.goal_ids = int_list(ex, "goal_ids", goals[t].items);
      cfg.stream.push_back(std::move(spec));
    }
  }

  // [methods]
  {
    Section* s = section_of("methods");
    if (s == nullptr) fail("missing required section: methods");
    Extractor ex("methods", s);
    if (!ex.has("run")) fail("missing required key: methods.run");
    for (const Value& v : ex.list("run")) {
      if (v.is_list) fail("methods.run entries must be names");
      cfg.methods.push_back(parse_method(v.scalar));
    }
    if (cfg.methods.empty()) fail("methods.run must not be empty");
  }

  // [seeds]
  {
    Section* s = section_of("seeds");
    if (s == nullptr) fail("missing required section: seeds");
    Extractor ex("seeds", s);
    if (!ex.has("run")) fail("missing required key: seeds.run");
    for (const Value& v : ex.list("run")) {
      double d = ex.to_number(v, "run");
      if (d < 0 || static_cast<double>(static_cast<std::uint64_t>(d)) != d)
        fail("seeds.run entries must be non-negative integers");
      cfg.seeds.push_back(static_cast<std::uint64_t>(d));
    }
    if (cfg.seeds.empty()) fail("seeds.run must not be empty");
  }

  for (auto& [name, section] : sections)
    for (auto& [key, value] : section.entries)
      if (!section.consumed.count(key)) fail("unknown key: " + name + "." + key);

  cfg.agent.ppo.validate();
  cfg.agent.weights.validate();
  return cfg;
}

BenchmarkConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

}  // namespace crl
