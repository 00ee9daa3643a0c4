#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace crl {

using Rng = std::mt19937_64;

/// Seeded generator for an independent stream. Mixing the stream id into the
/// seed keeps rollout / buffer-sampling / eval draws from interfering.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(seed * 0x9e3779b97f4a7c15ull + stream * 0xbf58476d1ce4e5b9ull + 1ull);
}

// Distribution objects are constructed per call so results depend only on the
// engine state, not on leftover distribution state.

inline double uniform(Rng& rng, double lo = 0.0, double hi = 1.0) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi) {  // inclusive bounds
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

inline double normal(Rng& rng, double mean = 0.0, double stddev = 1.0) {
  return std::normal_distribution<double>(mean, stddev)(rng);
}

inline double gamma_sample(Rng& rng, double shape) {
  return std::gamma_distribution<double>(shape, 1.0)(rng);
}

/// Dirichlet draw with per-component concentrations.
inline std::vector<double> dirichlet(Rng& rng, const std::vector<double>& alpha) {
  std::vector<double> x(alpha.size());
  double total = 0.0;
  for (std::size_t i = 0; i < alpha.size(); ++i) {
    x[i] = gamma_sample(rng, alpha[i]);
    total += x[i];
  }
  if (total <= 0.0) {  // all-zero gamma draws are possible for tiny alphas
    for (auto& v : x) v = 1.0 / static_cast<double>(x.size());
    return x;
  }
  for (auto& v : x) v /= total;
  return x;
}

/// Symmetric Dirichlet(alpha) over n components.
inline std::vector<double> dirichlet(Rng& rng, int n, double alpha) {
  return dirichlet(rng, std::vector<double>(static_cast<std::size_t>(n), alpha));
}

/// Draw an index from a probability vector.
inline int sample_index(Rng& rng, const std::vector<double>& probs) {
  double u = uniform(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(probs.size()) - 1;
}

}  // namespace crl
