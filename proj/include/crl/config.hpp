#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "crl/agent.hpp"
#include "crl/envs.hpp"

namespace crl {

/// Fully resolved benchmark description: the task stream, the learner
/// configuration shared by every cell, and the methods x seeds grid.
struct BenchmarkConfig {
  std::vector<TaskSpec> stream;
  AgentConfig agent;
  std::vector<Method> methods;
  std::vector<std::uint64_t> seeds;
  std::string config_hash;  // FNV-1a over the raw config text
};

/// Parses the declarative key-value format:
///
///   [stream]
///   family = grid-pick-place
///   layout_seeds = [3, 9]
///   goal_ids = [[0, 1], [2, 3]]
///   ...
///
/// Sections are [stream], [ppo], [weights], [variant], [eval], [methods],
/// [seeds]. Lists nest with brackets, comments start with '#'. Unknown
/// sections or keys are rejected with the offending path, e.g. "ppo.fo".
BenchmarkConfig parse_config_text(const std::string& text);
BenchmarkConfig load_config(const std::string& path);

std::string fnv1a_hex(const std::string& bytes);

}  // namespace crl
