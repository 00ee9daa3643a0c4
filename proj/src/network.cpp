#include "crl/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace crl {

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * log(2 pi)

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

struct Layout {
  std::vector<LayerShape> backbone_layers;
  int feature_dim = 0;
  HeadSlice backbone, action_head, mc_head, gcv_head;
  int total = 0;
};

int layer_size(const LayerShape& l) { return l.in * l.out + (l.bias ? l.out : 0); }

int action_head_size(const ActionSpec& a, int feat) {
  int size = a.dim * feat + a.dim;
  if (a.kind == ActionKind::kGaussian) size += a.dim;  // state-independent log-std
  return size;
}

int value_head_in(const ParameterStore& ps) {
  if (ps.value_mode == ValueMode::kQ && ps.action.kind == ActionKind::kGaussian)
    return ps.feature_dim + ps.action.dim;
  return ps.feature_dim;
}

int value_head_out(ValueMode mode, const ActionSpec& a) {
  if (mode == ValueMode::kQ && a.kind == ActionKind::kCategorical) return a.dim;
  return 1;
}

Layout compute_layout(int obs_dim, int goal_dim, int goal_embed_dim, const std::vector<int>& hidden,
                      ActionSpec action, ValueMode value_mode) {
  require(obs_dim > 0 && goal_dim > 0, "network: nonpositive input dimension");
  require(action.dim > 0, "network: nonpositive action dimension");
  Layout lay;
  int input = obs_dim + (goal_embed_dim > 0 ? goal_embed_dim : goal_dim);
  if (goal_embed_dim > 0) lay.backbone_layers.push_back({goal_dim, goal_embed_dim, false});
  for (int h : hidden) {
    require(h > 0, "network: nonpositive hidden width");
    lay.backbone_layers.push_back({input, h, true});
    input = h;
  }
  lay.feature_dim = input;

  int backbone_size = 0;
  for (const auto& l : lay.backbone_layers) backbone_size += layer_size(l);
  int act_size = action_head_size(action, lay.feature_dim);
  int value_in = (value_mode == ValueMode::kQ && action.kind == ActionKind::kGaussian)
                     ? lay.feature_dim + action.dim
                     : lay.feature_dim;
  int value_out = value_head_out(value_mode, action);
  int value_size = value_out * value_in + value_out;

  lay.backbone = {0, backbone_size, false};
  lay.action_head = {backbone_size, act_size, false};
  lay.mc_head = {backbone_size + act_size, value_size, false};
  lay.gcv_head = {backbone_size + act_size + value_size, value_size, true};
  lay.total = lay.gcv_head.offset + value_size;
  return lay;
}

void apply_layout(ParameterStore& ps, const Layout& lay) {
  ps.backbone_layers = lay.backbone_layers;
  ps.feature_dim = lay.feature_dim;
  ps.backbone = lay.backbone;
  ps.action_head = lay.action_head;
  ps.mc_head = lay.mc_head;
  ps.gcv_head = lay.gcv_head;
}

void draw_uniform_block(ParameterStore& ps, Rng& rng, int offset, int count, double bound) {
  for (int i = 0; i < count; ++i) ps.flat[offset + i] = uniform(rng, -bound, bound);
}

void draw_value_head(ParameterStore& ps, Rng& rng, const HeadSlice& slice) {
  int in = value_head_in(ps);
  double bound = 1.0 / std::sqrt(static_cast<double>(in));
  draw_uniform_block(ps, rng, slice.offset, slice.size, bound);
}

double stable_log_sum_exp(const std::vector<double>& xs) {
  double m = xs[0];
  for (double x : xs) m = std::max(m, x);
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - m);
  return m + std::log(acc);
}

}  // namespace

bool ParameterStore::trainable_at(int idx) const {
  for (const HeadSlice* s : {&backbone, &action_head, &mc_head, &gcv_head})
    if (idx >= s->offset && idx < s->offset + s->size) return !s->frozen;
  return false;
}

void ParameterStore::copy_mc_to_gcv() {
  std::memcpy(flat.data() + gcv_head.offset, flat.data() + mc_head.offset,
              static_cast<std::size_t>(mc_head.size) * sizeof(double));
}

ParameterStore init_network(int obs_dim, int goal_dim, const std::vector<int>& hidden,
                            ActionSpec action, ValueMode value_mode, std::uint64_t seed,
                            int goal_embed_dim) {
  ParameterStore ps;
  ps.obs_dim = obs_dim;
  ps.goal_dim = goal_dim;
  ps.goal_embed_dim = goal_embed_dim;
  ps.hidden = hidden;
  ps.action = action;
  ps.value_mode = value_mode;
  ps.init_seed = seed;
  Layout lay = compute_layout(obs_dim, goal_dim, goal_embed_dim, hidden, action, value_mode);
  apply_layout(ps, lay);
  ps.flat.assign(lay.total, 0.0);

  Rng rng = make_rng(seed);
  int offset = 0;
  for (const auto& l : ps.backbone_layers) {
    double bound = 1.0 / std::sqrt(static_cast<double>(l.in));
    draw_uniform_block(ps, rng, offset, layer_size(l), bound);
    offset += layer_size(l);
  }
  {
    double bound = 1.0 / std::sqrt(static_cast<double>(ps.feature_dim));
    int wb = action.dim * ps.feature_dim + action.dim;
    draw_uniform_block(ps, rng, ps.action_head.offset, wb, bound);
    // gaussian log-std entries stay 0
  }
  draw_value_head(ps, rng, ps.mc_head);
  ps.copy_mc_to_gcv();
  return ps;
}

void reinit_mc_head(ParameterStore& ps, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  draw_value_head(ps, rng, ps.mc_head);
}

int ActionDistribution::sample_discrete(Rng& rng) const {
  return sample_index(rng, probs);
}

std::vector<double> ActionDistribution::sample_continuous(Rng& rng) const {
  std::vector<double> a(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i)
    a[i] = mean[i] + std::exp(log_std[i]) * normal(rng);
  return a;
}

double ActionDistribution::log_prob_discrete(int a) const {
  return logits[a] - stable_log_sum_exp(logits);
}

double ActionDistribution::log_prob_continuous(const std::vector<double>& a) const {
  require(a.size() == mean.size(), "action dimension mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double sigma = std::exp(log_std[i]);
    double z = (a[i] - mean[i]) / sigma;
    total += -0.5 * z * z - log_std[i] - kHalfLog2Pi;
  }
  return total;
}

double GradientBundle::trainable_norm(const ParameterStore& ps) const {
  double sq = 0.0;
  for (const HeadSlice* s : {&ps.backbone, &ps.action_head, &ps.mc_head, &ps.gcv_head}) {
    if (s->frozen) continue;
    for (int i = s->offset; i < s->offset + s->size; ++i) sq += flat[i] * flat[i];
  }
  return std::sqrt(sq);
}

GraphNet::GraphNet(Tape& tape, const ParameterStore& ps) : t_(&tape), ps_(&ps) {
  param_ids_.reserve(ps.flat.size());
  for (double v : ps.flat) param_ids_.push_back(t_->constant(v));
}

std::vector<Tape::Id> GraphNet::affine(const std::vector<Tape::Id>& input, int weight_offset,
                                       int in, int out, bool bias) {
  std::vector<Tape::Id> result(out);
  for (int j = 0; j < out; ++j) {
    Tape::Id acc = t_->dot(param_ids_.data() + weight_offset + static_cast<std::size_t>(j) * in,
                           input.data(), in);
    if (bias) acc = t_->add(acc, param_ids_[weight_offset + out * in + j]);
    result[j] = acc;
  }
  return result;
}

std::vector<Tape::Id> GraphNet::features(const std::vector<double>& obs,
                                         const std::vector<double>& goal_code) {
  require(static_cast<int>(obs.size()) == ps_->obs_dim, "obs dimension mismatch");
  require(static_cast<int>(goal_code.size()) == ps_->goal_dim, "goal code dimension mismatch");

  std::vector<Tape::Id> x;
  x.reserve(obs.size() + goal_code.size());
  for (double v : obs) x.push_back(t_->constant(v));

  std::size_t layer_idx = 0;
  int offset = ps_->backbone.offset;
  if (ps_->goal_embed_dim > 0) {
    std::vector<Tape::Id> g;
    g.reserve(goal_code.size());
    for (double v : goal_code) g.push_back(t_->constant(v));
    const auto& l = ps_->backbone_layers[0];
    auto embedded = affine(g, offset, l.in, l.out, l.bias);
    offset += layer_size(l);
    ++layer_idx;
    x.insert(x.end(), embedded.begin(), embedded.end());
  } else {
    for (double v : goal_code) x.push_back(t_->constant(v));
  }

  for (; layer_idx < ps_->backbone_layers.size(); ++layer_idx) {
    const auto& l = ps_->backbone_layers[layer_idx];
    auto pre = affine(x, offset, l.in, l.out, l.bias);
    offset += layer_size(l);
    for (auto& id : pre) id = t_->tanh(id);
    x = std::move(pre);
  }
  return x;
}

std::vector<Tape::Id> GraphNet::action_logits(const std::vector<Tape::Id>& feat) {
  return affine(feat, ps_->action_head.offset, ps_->feature_dim, ps_->action.dim, true);
}

std::vector<Tape::Id> GraphNet::log_softmax(const std::vector<Tape::Id>& logits) {
  Tape::Id m = t_->vmax(logits);
  std::vector<Tape::Id> shifted(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) shifted[i] = t_->exp(t_->sub(logits[i], m));
  Tape::Id lse = t_->add(m, t_->log(t_->sum(shifted)));
  std::vector<Tape::Id> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = t_->sub(logits[i], lse);
  return out;
}

std::pair<std::vector<Tape::Id>, std::vector<Tape::Id>> GraphNet::gaussian_params(
    const std::vector<Tape::Id>& feat) {
  auto mean = affine(feat, ps_->action_head.offset, ps_->feature_dim, ps_->action.dim, true);
  int log_std_offset = ps_->action_head.offset + ps_->action.dim * ps_->feature_dim + ps_->action.dim;
  std::vector<Tape::Id> log_std(ps_->action.dim);
  for (int i = 0; i < ps_->action.dim; ++i)
    log_std[i] = t_->clamp(param_ids_[log_std_offset + i], kLogStdMin, kLogStdMax);
  return {std::move(mean), std::move(log_std)};
}

Tape::Id GraphNet::log_prob_discrete(const std::vector<Tape::Id>& log_probs, int action) {
  require(action >= 0 && action < static_cast<int>(log_probs.size()), "action index out of range");
  return log_probs[action];
}

Tape::Id GraphNet::log_prob_continuous(const std::vector<Tape::Id>& mean,
                                       const std::vector<Tape::Id>& log_std,
                                       const std::vector<double>& action) {
  require(action.size() == mean.size(), "action dimension mismatch");
  std::vector<Tape::Id> terms;
  terms.reserve(mean.size());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    Tape::Id sigma = t_->exp(log_std[i]);
    Tape::Id z = t_->div(t_->add_const(t_->neg(mean[i]), action[i]), sigma);
    Tape::Id term = t_->sub(t_->scale(t_->square(z), -0.5), log_std[i]);
    terms.push_back(t_->add_const(term, -kHalfLog2Pi));
  }
  return t_->sum(terms);
}

Tape::Id GraphNet::value(CriticHead head, const std::vector<Tape::Id>& feat) {
  const HeadSlice& slice = head == CriticHead::kMc ? ps_->mc_head : ps_->gcv_head;
  return affine(feat, slice.offset, ps_->feature_dim, 1, true)[0];
}

std::vector<Tape::Id> GraphNet::q_values(CriticHead head, const std::vector<Tape::Id>& feat) {
  require(ps_->value_mode == ValueMode::kQ && ps_->action.kind == ActionKind::kCategorical,
          "q_values requires a per-action critic head");
  const HeadSlice& slice = head == CriticHead::kMc ? ps_->mc_head : ps_->gcv_head;
  return affine(feat, slice.offset, ps_->feature_dim, ps_->action.dim, true);
}

Tape::Id GraphNet::q_value_continuous(CriticHead head, const std::vector<Tape::Id>& feat,
                                      const std::vector<double>& action) {
  require(ps_->value_mode == ValueMode::kQ && ps_->action.kind == ActionKind::kGaussian,
          "q_value_continuous requires the continuous critic head");
  require(static_cast<int>(action.size()) == ps_->action.dim, "action dimension mismatch");
  const HeadSlice& slice = head == CriticHead::kMc ? ps_->mc_head : ps_->gcv_head;
  std::vector<Tape::Id> input = feat;
  for (double v : action) input.push_back(t_->constant(v));
  return affine(input, slice.offset, ps_->feature_dim + ps_->action.dim, 1, true)[0];
}

GradientBundle GraphNet::gradients() const {
  GradientBundle g;
  g.flat.resize(ps_->flat.size());
  for (std::size_t i = 0; i < ps_->flat.size(); ++i) g.flat[i] = t_->adjoint(param_ids_[i]);
  for (const HeadSlice* s : {&ps_->backbone, &ps_->action_head, &ps_->mc_head, &ps_->gcv_head})
    if (s->frozen)
      std::fill(g.flat.begin() + s->offset, g.flat.begin() + s->offset + s->size, 0.0);
  return g;
}

namespace {
thread_local Tape scratch_tape;

Tape& scratch() {
  scratch_tape.clear();
  return scratch_tape;
}
}  // namespace

ActionDistribution forward_policy(const ParameterStore& ps, const std::vector<double>& obs,
                                  const std::vector<double>& goal_code) {
  Tape& t = scratch();
  GraphNet net(t, ps);
  auto feat = net.features(obs, goal_code);
  ActionDistribution dist;
  dist.kind = ps.action.kind;
  if (ps.action.kind == ActionKind::kCategorical) {
    auto logits = net.action_logits(feat);
    auto logp = net.log_softmax(logits);
    dist.logits.resize(logits.size());
    dist.probs.resize(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      dist.logits[i] = t.value(logits[i]);
      dist.probs[i] = std::exp(t.value(logp[i]));
    }
  } else {
    auto [mean, log_std] = net.gaussian_params(feat);
    dist.mean.resize(mean.size());
    dist.log_std.resize(log_std.size());
    for (std::size_t i = 0; i < mean.size(); ++i) {
      dist.mean[i] = t.value(mean[i]);
      dist.log_std[i] = t.value(log_std[i]);
    }
  }
  return dist;
}

double forward_value(const ParameterStore& ps, CriticHead head, const std::vector<double>& obs,
                     const std::vector<double>& goal_code) {
  Tape& t = scratch();
  GraphNet net(t, ps);
  return t.value(net.value(head, net.features(obs, goal_code)));
}

std::vector<double> forward_q_values(const ParameterStore& ps, CriticHead head,
                                     const std::vector<double>& obs,
                                     const std::vector<double>& goal_code) {
  Tape& t = scratch();
  GraphNet net(t, ps);
  auto ids = net.q_values(head, net.features(obs, goal_code));
  std::vector<double> out(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) out[i] = t.value(ids[i]);
  return out;
}

double forward_q_value_continuous(const ParameterStore& ps, CriticHead head,
                                  const std::vector<double>& obs,
                                  const std::vector<double>& action,
                                  const std::vector<double>& goal_code) {
  Tape& t = scratch();
  GraphNet net(t, ps);
  return t.value(net.q_value_continuous(head, net.features(obs, goal_code), action));
}

std::vector<double> one_hot(int index, int n) {
  require(index >= 0 && index < n, "one_hot index out of range");
  std::vector<double> v(n, 0.0);
  v[index] = 1.0;
  return v;
}

void SgdOptimizer::step(ParameterStore& ps, const GradientBundle& grads) {
  require(grads.flat.size() == ps.flat.size(), "gradient size mismatch");
  if (velocity_.size() != ps.flat.size()) velocity_.assign(ps.flat.size(), 0.0);

  double scale = 1.0;
  if (cfg_.grad_clip > 0.0) {
    double norm = grads.trainable_norm(ps);
    if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
  }

  const std::pair<const HeadSlice*, double> slices[] = {
      {&ps.backbone, cfg_.lr_backbone},
      {&ps.action_head, cfg_.lr_action},
      {&ps.mc_head, cfg_.lr_critic},
      {&ps.gcv_head, cfg_.lr_critic},
  };
  for (const auto& [slice, lr] : slices) {
    if (slice->frozen) continue;
    for (int i = slice->offset; i < slice->offset + slice->size; ++i) {
      velocity_[i] = cfg_.momentum * velocity_[i] + scale * grads.flat[i];
      ps.flat[i] -= lr * velocity_[i];
    }
  }
}

void SgdOptimizer::reset_slice(const HeadSlice& slice) {
  if (velocity_.empty()) return;
  std::fill(velocity_.begin() + slice.offset, velocity_.begin() + slice.offset + slice.size, 0.0);
}

void save_checkpoint(const ParameterStore& ps, const std::string& path) {
  nlohmann::json header;
  header["obs_dim"] = ps.obs_dim;
  header["goal_dim"] = ps.goal_dim;
  header["goal_embed_dim"] = ps.goal_embed_dim;
  header["hidden"] = ps.hidden;
  header["action_kind"] = ps.action.kind == ActionKind::kCategorical ? "categorical" : "gaussian";
  header["action_dim"] = ps.action.dim;
  header["value_mode"] = ps.value_mode == ValueMode::kV ? "v" : "q";
  header["init_seed"] = ps.init_seed;
  header["n_params"] = ps.n_params();
  header["frozen"] = {ps.backbone.frozen, ps.action_head.frozen, ps.mc_head.frozen,
                      ps.gcv_head.frozen};

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  out << header.dump() << '\n';
  out.write(reinterpret_cast<const char*>(ps.flat.data()),
            static_cast<std::streamsize>(ps.flat.size() * sizeof(double)));
  if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

ParameterStore load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string header_line;
  if (!std::getline(in, header_line)) throw std::runtime_error("checkpoint missing header: " + path);
  nlohmann::json header = nlohmann::json::parse(header_line);

  ActionSpec action;
  action.kind = header.at("action_kind").get<std::string>() == "categorical"
                    ? ActionKind::kCategorical
                    : ActionKind::kGaussian;
  action.dim = header.at("action_dim").get<int>();
  ValueMode mode = header.at("value_mode").get<std::string>() == "v" ? ValueMode::kV : ValueMode::kQ;

  ParameterStore ps;
  ps.obs_dim = header.at("obs_dim").get<int>();
  ps.goal_dim = header.at("goal_dim").get<int>();
  ps.goal_embed_dim = header.at("goal_embed_dim").get<int>();
  ps.hidden = header.at("hidden").get<std::vector<int>>();
  ps.action = action;
  ps.value_mode = mode;
  ps.init_seed = header.at("init_seed").get<std::uint64_t>();
  Layout lay = compute_layout(ps.obs_dim, ps.goal_dim, ps.goal_embed_dim, ps.hidden, action, mode);
  apply_layout(ps, lay);

  int n = header.at("n_params").get<int>();
  if (n != lay.total) throw std::runtime_error("checkpoint parameter count mismatch: " + path);
  ps.flat.resize(n);
  in.read(reinterpret_cast<char*>(ps.flat.data()),
          static_cast<std::streamsize>(ps.flat.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(ps.flat.size() * sizeof(double)))
    throw std::runtime_error("checkpoint truncated: " + path);

  auto frozen = header.at("frozen").get<std::vector<bool>>();
  if (frozen.size() != 4) throw std::runtime_error("checkpoint frozen flags malformed: " + path);
  ps.backbone.frozen = frozen[0];
  ps.action_head.frozen = frozen[1];
  ps.mc_head.frozen = frozen[2];
  ps.gcv_head.frozen = frozen[3];
  return ps;
}

GradCheckResult grad_check(const ParameterStore& params, const LossProbe& loss, int n_probes,
                           Rng& rng) {
  GradientBundle analytic = loss.gradient(params);
  std::vector<int> trainable;
  for (int i = 0; i < params.n_params(); ++i)
    if (params.trainable_at(i)) trainable.push_back(i);
  require(!trainable.empty(), "grad_check: no trainable parameters");

  const double h = 1e-5;
  double f0 = loss.value(params);
  ParameterStore probe = params;
  GradCheckResult res;
  int redraw_budget = 10 * n_probes;

  auto eval_at = [&](int idx, double delta) {
    probe.flat[idx] = params.flat[idx] + delta;
    double f = loss.value(probe);
    probe.flat[idx] = params.flat[idx];
    return f;
  };

  for (int k = 0; k < n_probes; ++k) {
    for (;;) {
      int idx = trainable[uniform_int(rng, 0, static_cast<int>(trainable.size()) - 1)];
      double fp = eval_at(idx, h);
      double fm = eval_at(idx, -h);
      double slope_gap_h = ((fp - f0) / h) - ((f0 - fm) / h);

      // one-sided slope disagreement that fails to shrink with the step is a
      // kink (clip boundary); smooth curvature shrinks linearly
      bool kink = false;
      if (std::abs(slope_gap_h) > 1e-7 * std::max(1.0, std::abs((fp - fm) / (2.0 * h)))) {
        double h2 = h / 4.0;
        double fp2 = eval_at(idx, h2);
        double fm2 = eval_at(idx, -h2);
        double slope_gap_h2 = ((fp2 - f0) / h2) - ((f0 - fm2) / h2);
        kink = std::abs(slope_gap_h2) > 0.5 * std::abs(slope_gap_h);
      }
      if (kink && redraw_budget > 0) {
        --redraw_budget;
        ++res.redraws;
        continue;
      }

      double fd = (fp - fm) / (2.0 * h);
      double g = analytic.flat[idx];
      double rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), 1e-6});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.probes;
      break;
    }
  }
  return res;
}

}  // namespace crl
