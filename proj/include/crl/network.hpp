#pragma once

#include <functional>
#include <string>
#include <vector>

#include "crl/rng.hpp"
#include "crl/tape.hpp"

namespace crl {

enum class ActionKind { kCategorical, kGaussian };
enum class ValueMode { kV, kQ };
enum class CriticHead { kMc, kGcv };

struct ActionSpec {
  ActionKind kind = ActionKind::kCategorical;
  int dim = 0;  // number of discrete actions, or continuous action dimension
};

struct HeadSlice {
  int offset = 0;
  int size = 0;
  bool frozen = false;
};

struct LayerShape {
  int in = 0;
  int out = 0;
  bool bias = true;
};

constexpr double kLogStdMin = -5.0;
constexpr double kLogStdMax = 2.0;

/// Flat f64 parameter vector for a shared tanh backbone with an action head
/// and two identically shaped critic heads (mc trains, gcv holds the copied
/// consolidation target). Goal codes are one-hot; goal_embed_dim > 0 inserts
/// a learned linear embedding of the goal code before the backbone.
struct ParameterStore {
  int obs_dim = 0;
  int goal_dim = 0;
  int goal_embed_dim = 0;
  std::vector<int> hidden;
  ActionSpec action;
  ValueMode value_mode = ValueMode::kV;
  std::uint64_t init_seed = 0;

  std::vector<double> flat;
  HeadSlice backbone, action_head, mc_head, gcv_head;
  std::vector<LayerShape> backbone_layers;  // embedding layer first when enabled
  int feature_dim = 0;

  int n_params() const { return static_cast<int>(flat.size()); }
  bool trainable_at(int idx) const;
  void copy_mc_to_gcv();  // bit-exact slice copy
};

/// Deterministic initialization: every layer's weights and biases drawn
/// uniform in +-1/sqrt(fan_in) from the seeded generator, log-std entries 0,
/// gcv head copied from the freshly drawn mc head and frozen.
ParameterStore init_network(int obs_dim, int goal_dim, const std::vector<int>& hidden,
                            ActionSpec action, ValueMode value_mode, std::uint64_t seed,
                            int goal_embed_dim = 0);

/// Re-draws only the mc head, as if by init_network with this seed.
void reinit_mc_head(ParameterStore& ps, std::uint64_t seed);

struct ActionDistribution {
  ActionKind kind = ActionKind::kCategorical;
  std::vector<double> logits;   // categorical
  std::vector<double> probs;    // categorical
  std::vector<double> mean;     // gaussian
  std::vector<double> log_std;  // gaussian, already clamped

  int sample_discrete(Rng& rng) const;
  std::vector<double> sample_continuous(Rng& rng) const;
  double log_prob_discrete(int a) const;
  double log_prob_continuous(const std::vector<double>& a) const;
};

/// Gradient aligned with ParameterStore::flat; frozen slices are identically
/// zero.
struct GradientBundle {
  std::vector<double> flat;
  double trainable_norm(const ParameterStore& ps) const;
};

/// Builds network forwards on a tape. Parameter leaves are created once per
/// instance; gradients() reads their adjoints after Tape::backward.
class GraphNet {
 public:
  GraphNet(Tape& tape, const ParameterStore& ps);

  std::vector<Tape::Id> features(const std::vector<double>& obs,
                                 const std::vector<double>& goal_code);
  std::vector<Tape::Id> action_logits(const std::vector<Tape::Id>& feat);
  std::vector<Tape::Id> log_softmax(const std::vector<Tape::Id>& logits);
  /// Returns (mean ids, clamped log-std ids).
  std::pair<std::vector<Tape::Id>, std::vector<Tape::Id>> gaussian_params(
      const std::vector<Tape::Id>& feat);
  Tape::Id log_prob_discrete(const std::vector<Tape::Id>& log_probs, int action);
  Tape::Id log_prob_continuous(const std::vector<Tape::Id>& mean,
                               const std::vector<Tape::Id>& log_std,
                               const std::vector<double>& action);

  Tape::Id value(CriticHead head, const std::vector<Tape::Id>& feat);  // V mode
  std::vector<Tape::Id> q_values(CriticHead head, const std::vector<Tape::Id>& feat);
  Tape::Id q_value_continuous(CriticHead head, const std::vector<Tape::Id>& feat,
                              const std::vector<double>& action);

  GradientBundle gradients() const;  // after backward; frozen slices zeroed
  Tape& tape() { return *t_; }
  const ParameterStore& params() const { return *ps_; }

 private:
  std::vector<Tape::Id> affine(const std::vector<Tape::Id>& input, int weight_offset, int in,
                               int out, bool bias);
  Tape* t_;
  const ParameterStore* ps_;
  std::vector<Tape::Id> param_ids_;
};

// Plain forwards evaluate the identical graph construction on a scratch tape,
// so they agree with GraphNet bit for bit.
ActionDistribution forward_policy(const ParameterStore& ps, const std::vector<double>& obs,
                                  const std::vector<double>& goal_code);
double forward_value(const ParameterStore& ps, CriticHead head, const std::vector<double>& obs,
                     const std::vector<double>& goal_code);
std::vector<double> forward_q_values(const ParameterStore& ps, CriticHead head,
                                     const std::vector<double>& obs,
                                     const std::vector<double>& goal_code);
double forward_q_value_continuous(const ParameterStore& ps, CriticHead head,
                                  const std::vector<double>& obs,
                                  const std::vector<double>& action,
                                  const std::vector<double>& goal_code);

std::vector<double> one_hot(int index, int n);

struct OptimizerConfig {
  double lr_backbone = 1e-4;
  double lr_action = 5e-5;
  double lr_critic = 1e-3;
  double momentum = 0.9;
  double grad_clip = 1.0;  // global norm over trainable slices
};

class SgdOptimizer {
 public:
  explicit SgdOptimizer(OptimizerConfig cfg) : cfg_(cfg) {}
  void step(ParameterStore& ps, const GradientBundle& grads);
  void reset_slice(const HeadSlice& slice);  // clears momentum for a re-drawn head
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  std::vector<double> velocity_;
};

/// Checkpoint: one JSON header line (shapes, head offsets, seed, variant),
/// then the raw little-endian f64 flat vector. Round-trips bit-exactly.
void save_checkpoint(const ParameterStore& ps, const std::string& path);
ParameterStore load_checkpoint(const std::string& path);

struct LossProbe {
  std::function<double(const ParameterStore&)> value;
  std::function<GradientBundle(const ParameterStore&)> gradient;
};

struct GradCheckResult {
  double max_rel_err = 0.0;
  int probes = 0;
  int redraws = 0;
};

/// Central finite differences (step 1e-5) at randomly probed trainable
/// coordinates; probes landing on a kink (one-sided slopes disagree) are
/// re-drawn.
GradCheckResult grad_check(const ParameterStore& params, const LossProbe& loss, int n_probes,
                           Rng& rng);

}  // namespace crl
