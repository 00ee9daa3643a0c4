#include "crl/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace crl {

Tape::Id Tape::push0(double v) {
  arg_begin_.push_back(static_cast<std::int64_t>(args_.size()));
  val_.push_back(v);
  return static_cast<Id>(val_.size() - 1);
}

Tape::Id Tape::push1(double v, Id a, double pa) {
  arg_begin_.push_back(static_cast<std::int64_t>(args_.size()));
  args_.push_back(a);
  partials_.push_back(pa);
  val_.push_back(v);
  return static_cast<Id>(val_.size() - 1);
}

Tape::Id Tape::push2(double v, Id a, double pa, Id b, double pb) {
  arg_begin_.push_back(static_cast<std::int64_t>(args_.size()));
  args_.push_back(a);
  args_.push_back(b);
  partials_.push_back(pa);
  partials_.push_back(pb);
  val_.push_back(v);
  return static_cast<Id>(val_.size() - 1);
}

Tape::Id Tape::tanh(Id a) {
  double t = std::tanh(val_[a]);
  return push1(t, a, 1.0 - t * t);
}

Tape::Id Tape::exp(Id a) {
  double e = std::exp(val_[a]);
  return push1(e, a, e);
}

Tape::Id Tape::log(Id a) {
  return push1(std::log(val_[a]), a, 1.0 / val_[a]);
}

Tape::Id Tape::clamp(Id a, double lo, double hi) {
  double v = val_[a];
  if (v < lo) return push1(lo, a, 0.0);
  if (v > hi) return push1(hi, a, 0.0);
  return push1(v, a, 1.0);
}

Tape::Id Tape::dot(const Id* a, const Id* b, int n) {
  double v = 0.0;
  arg_begin_.push_back(static_cast<std::int64_t>(args_.size()));
  args_.reserve(args_.size() + 2 * n);
  partials_.reserve(partials_.size() + 2 * n);
  for (int i = 0; i < n; ++i) {
    v += val_[a[i]] * val_[b[i]];
    args_.push_back(a[i]);
    partials_.push_back(val_[b[i]]);
  }
  for (int i = 0; i < n; ++i) {
    args_.push_back(b[i]);
    partials_.push_back(val_[a[i]]);
  }
  val_.push_back(v);
  return static_cast<Id>(val_.size() - 1);
}

Tape::Id Tape::sum(const std::vector<Id>& xs) {
  double v = 0.0;
  arg_begin_.push_back(static_cast<std::int64_t>(args_.size()));
  for (Id x : xs) {
    v += val_[x];
    args_.push_back(x);
    partials_.push_back(1.0);
  }
  val_.push_back(v);
  return static_cast<Id>(val_.size() - 1);
}

Tape::Id Tape::mean(const std::vector<Id>& xs) {
  if (xs.empty()) throw std::invalid_argument("tape mean of empty span");
  double inv = 1.0 / static_cast<double>(xs.size());
  double v = 0.0;
  arg_begin_.push_back(static_cast<std::int64_t>(args_.size()));
  for (Id x : xs) {
    v += val_[x];
    args_.push_back(x);
    partials_.push_back(inv);
  }
  val_.push_back(v * inv);
  return static_cast<Id>(val_.size() - 1);
}

Tape::Id Tape::vmax(const std::vector<Id>& xs) {
  if (xs.empty()) throw std::invalid_argument("tape vmax of empty span");
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (val_[xs[i]] > val_[xs[best]]) best = i;
  arg_begin_.push_back(static_cast<std::int64_t>(args_.size()));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    args_.push_back(xs[i]);
    partials_.push_back(i == best ? 1.0 : 0.0);
  }
  val_.push_back(val_[xs[best]]);
  return static_cast<Id>(val_.size() - 1);
}

void Tape::backward(Id root) {
  adj_.assign(val_.size(), 0.0);
  adj_[root] = 1.0;
  for (Id id = root; id >= 0; --id) {
    double a = adj_[id];
    if (a == 0.0) continue;
    std::int64_t begin = arg_begin_[id];
    std::int64_t end = (static_cast<std::size_t>(id) + 1 < arg_begin_.size())
                           ? arg_begin_[id + 1]
                           : static_cast<std::int64_t>(args_.size());
    for (std::int64_t k = begin; k < end; ++k) adj_[args_[k]] += a * partials_[k];
  }
}

void Tape::clear() {
  val_.clear();
  adj_.clear();
  arg_begin_.clear();
  args_.clear();
  partials_.clear();
}

}  // namespace crl
