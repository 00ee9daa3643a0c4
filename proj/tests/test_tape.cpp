#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <vector>

#include "crl/rng.hpp"
#include "crl/tape.hpp"
#include "doctest.h"

using namespace crl;

namespace {

// central-difference oracle for a scalar function of n inputs
std::vector<double> finite_diff(const std::function<double(const std::vector<double>&)>& f,
                                std::vector<double> x, double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + h;
    double up = f(x);
    x[i] = keep - h;
    double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

}  // namespace

TEST_CASE("fan-out accumulates exactly: d(x*x + x)/dx = 2x + 1") {
  Tape t;
  auto x = t.constant(1.7);
  auto y = t.add(t.mul(x, x), x);
  t.backward(y);
  CHECK(t.adjoint(x) == 2.0 * 1.7 + 1.0);
}

TEST_CASE("linear expressions differentiate exactly") {
  Tape t;
  auto x = t.constant(0.3);
  auto y = t.constant(-1.2);
  auto z = t.add(t.scale(x, 2.5), t.scale(y, -4.0));
  t.backward(z);
  CHECK(t.adjoint(x) == 2.5);
  CHECK(t.adjoint(y) == -4.0);
}

TEST_CASE("composite expression matches finite differences") {
  Rng rng = make_rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> x0 = {uniform(rng, -2, 2), uniform(rng, -2, 2), uniform(rng, 0.5, 2.0)};
    auto f = [](const std::vector<double>& v) {
      return std::tanh(v[0] * v[1]) + std::exp(0.3 * v[1]) / v[2] + std::log(v[2]) * v[0] * v[0];
    };
    Tape t;
    auto a = t.constant(x0[0]);
    auto b = t.constant(x0[1]);
    auto c = t.constant(x0[2]);
    auto expr = t.add(t.add(t.tanh(t.mul(a, b)), t.div(t.exp(t.scale(b, 0.3)), c)),
                      t.mul(t.log(c), t.square(a)));
    CHECK(t.value(expr) == doctest::Approx(f(x0)).epsilon(1e-12));
    t.backward(expr);
    auto fd = finite_diff(f, x0);
    CHECK(t.adjoint(a) == doctest::Approx(fd[0]).epsilon(1e-6));
    CHECK(t.adjoint(b) == doctest::Approx(fd[1]).epsilon(1e-6));
    CHECK(t.adjoint(c) == doctest::Approx(fd[2]).epsilon(1e-6));
  }
}

TEST_CASE("dot node value and gradient") {
  Rng rng = make_rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    int n = uniform_int(rng, 1, 9);
    Tape t;
    std::vector<Tape::Id> a(n), b(n);
    std::vector<double> av(n), bv(n);
    for (int i = 0; i < n; ++i) {
      av[i] = uniform(rng, -2, 2);
      bv[i] = uniform(rng, -2, 2);
      a[i] = t.constant(av[i]);
      b[i] = t.constant(bv[i]);
    }
    auto d = t.dot(a.data(), b.data(), n);
    double manual = 0.0;
    for (int i = 0; i < n; ++i) manual += av[i] * bv[i];
    CHECK(t.value(d) == manual);  // same accumulation order, bit-identical
    t.backward(d);
    for (int i = 0; i < n; ++i) {
      CHECK(t.adjoint(a[i]) == bv[i]);
      CHECK(t.adjoint(b[i]) == av[i]);
    }
  }
}

TEST_CASE("log-sum-exp built from vmax has softmax gradient") {
  Rng rng = make_rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    int n = uniform_int(rng, 2, 6);
    Tape t;
    std::vector<Tape::Id> logits(n);
    std::vector<double> lv(n);
    for (int i = 0; i < n; ++i) {
      lv[i] = uniform(rng, -4, 4);
      logits[i] = t.constant(lv[i]);
    }
    auto m = t.vmax(logits);
    std::vector<Tape::Id> exps(n);
    for (int i = 0; i < n; ++i) exps[i] = t.exp(t.sub(logits[i], m));
    auto lse = t.add(m, t.log(t.sum(exps)));
    t.backward(lse);

    double mx = *std::max_element(lv.begin(), lv.end());
    double z = 0.0;
    for (double v : lv) z += std::exp(v - mx);
    for (int i = 0; i < n; ++i) {
      double softmax = std::exp(lv[i] - mx) / z;
      CHECK(t.adjoint(logits[i]) == doctest::Approx(softmax).epsilon(1e-12));
    }
  }
}

TEST_CASE("min, max and clamp pick the active branch") {
  Tape t;
  auto a = t.constant(2.0);
  auto b = t.constant(5.0);
  auto lo = t.min(a, b);
  t.backward(lo);
  CHECK(t.adjoint(a) == 1.0);
  CHECK(t.adjoint(b) == 0.0);

  Tape t2;
  auto x = t2.constant(3.0);
  auto inside = t2.clamp(x, 0.0, 10.0);
  t2.backward(inside);
  CHECK(t2.adjoint(x) == 1.0);

  Tape t3;
  auto y = t3.constant(42.0);
  auto clipped = t3.clamp(y, 0.0, 10.0);
  CHECK(t3.value(clipped) == 10.0);
  t3.backward(clipped);
  CHECK(t3.adjoint(y) == 0.0);
}

TEST_CASE("mean and vmax values") {
  Tape t;
  std::vector<Tape::Id> xs = {t.constant(1.0), t.constant(2.0), t.constant(6.0)};
  CHECK(t.value(t.mean(xs)) == 3.0);
  CHECK(t.value(t.vmax(xs)) == 6.0);
  CHECK_THROWS_AS(t.mean({}), std::invalid_argument);
}

TEST_CASE("identical build sequences give bitwise identical tapes") {
  auto build = [](Tape& t) {
    auto a = t.constant(0.123456789);
    auto b = t.constant(-3.2);
    return t.tanh(t.add(t.mul(a, b), t.exp(t.scale(a, 0.5))));
  };
  Tape t1, t2;
  auto r1 = build(t1);
  auto r2 = build(t2);
  CHECK(t1.value(r1) == t2.value(r2));
  t1.backward(r1);
  t2.backward(r2);
  CHECK(t1.adjoint(0) == t2.adjoint(0));
}

TEST_CASE("clear keeps the tape reusable") {
  Tape t;
  auto a = t.constant(1.0);
  t.backward(a);
  t.clear();
  CHECK(t.size() == 0);
  auto b = t.constant(7.0);
  auto c = t.square(b);
  t.backward(c);
  CHECK(t.adjoint(b) == 14.0);
}
