#pragma once

#include <cstdint>
#include <vector>

namespace crl {

/// Reverse-mode scalar computation graph. Values are computed eagerly on node
/// creation together with the local partials; backward() sweeps the tape once
/// in reverse. Nodes are plain indices into flat arrays, and n-ary ops (dot,
/// sum, vmax) store their operands in one shared argument pool, so a dense
/// layer costs one node per output unit.
class Tape {
 public:
  using Id = std::int32_t;

  Id constant(double v) { return push0(v); }

  Id add(Id a, Id b) { return push2(val_[a] + val_[b], a, 1.0, b, 1.0); }
  Id sub(Id a, Id b) { return push2(val_[a] - val_[b], a, 1.0, b, -1.0); }
  Id mul(Id a, Id b) { return push2(val_[a] * val_[b], a, val_[b], b, val_[a]); }
  Id div(Id a, Id b) {
    double vb = val_[b];
    return push2(val_[a] / vb, a, 1.0 / vb, b, -val_[a] / (vb * vb));
  }
  Id neg(Id a) { return push1(-val_[a], a, -1.0); }
  Id add_const(Id a, double c) { return push1(val_[a] + c, a, 1.0); }
  Id scale(Id a, double c) { return push1(val_[a] * c, a, c); }
  Id square(Id a) { return push1(val_[a] * val_[a], a, 2.0 * val_[a]); }
  Id tanh(Id a);
  Id exp(Id a);
  Id log(Id a);
  /// Subgradient 0 outside (lo, hi) and at the boundary itself.
  Id clamp(Id a, double lo, double hi);
  Id min(Id a, Id b) {
    return val_[a] <= val_[b] ? push2(val_[a], a, 1.0, b, 0.0)
                              : push2(val_[b], a, 0.0, b, 1.0);
  }
  Id max(Id a, Id b) {
    return val_[a] >= val_[b] ? push2(val_[a], a, 1.0, b, 0.0)
                              : push2(val_[b], a, 0.0, b, 1.0);
  }

  /// Fused inner product of two equal-length id spans.
  Id dot(const Id* a, const Id* b, int n);
  Id sum(const std::vector<Id>& xs);
  Id mean(const std::vector<Id>& xs);
  /// Maximum of a span; gradient flows to the first argmax.
  Id vmax(const std::vector<Id>& xs);

  double value(Id id) const { return val_[id]; }
  std::size_t size() const { return val_.size(); }

  /// Seeds d(root)/d(root) = 1 and accumulates adjoints down the tape.
  void backward(Id root);
  double adjoint(Id id) const { return adj_[id]; }

  /// Drops all nodes but keeps allocated capacity.
  void clear();

 private:
  Id push0(double v);
  Id push1(double v, Id a, double pa);
  Id push2(double v, Id a, double pa, Id b, double pb);

  std::vector<double> val_;
  std::vector<double> adj_;
  std::vector<std::int64_t> arg_begin_;  // per node, span end = next begin
  std::vector<Id> args_;
  std::vector<double> partials_;
};

}  // namespace crl
