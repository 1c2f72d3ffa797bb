#ifndef HKIR_TESTS_ORACLE_HPP
#define HKIR_TESTS_ORACLE_HPP

// Brute-force expectation oracle: evaluates unnormalized expectations of
// test functions under a measure program by dense Gaussian quadrature and
// exact enumeration. Deliberately independent of the simplifier and of the
// compiled runtime; only the plain tree-walking evaluator is shared.

#include "hkir/eval.hpp"
#include "hkir/types.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <vector>

namespace hkir::oracle {

struct QuadRule {
  std::vector<double> nodes, weights;
};

// Gauss-Legendre on [-1, 1] by Newton iteration on the Legendre recurrence.
inline QuadRule gauss_legendre(int n) {
  QuadRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  for (int i = 0; i < n; ++i) {
    double x = std::cos(M_PI * (i + 0.75) / (n + 0.5));
    for (int it = 0; it < 100; ++it) {
      double p0 = 1, p1 = x;
      for (int k = 2; k <= n; ++k) {
        double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
        p0 = p1;
        p1 = p2;
      }
      double dp = n * (x * p1 - p0) / (x * x - 1);
      double dx = p1 / dp;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    double p0 = 1, p1 = x;
    for (int k = 2; k <= n; ++k) {
      double p2 = ((2 * k - 1) * x * p1 - (k - 1) * p0) / k;
      p0 = p1;
      p1 = p2;
    }
    double dp = n * (x * p1 - p0) / (x * x - 1);
    r.nodes[i] = x;
    r.weights[i] = 2.0 / ((1 - x * x) * dp * dp);
  }
  return r;
}

// Gauss-Hermite (physicists'), for integrals against exp(-t^2).
inline QuadRule gauss_hermite(int n) {
  QuadRule r;
  r.nodes.resize(n);
  r.weights.resize(n);
  std::vector<double> pos((n + 1) / 2);
  auto eval = [&](double x, double &hn, double &hn1) {
    double h0 = std::pow(M_PI, -0.25), h1 = std::sqrt(2.0) * x * h0;
    for (int k = 2; k <= n; ++k) {
      double h2 = x * std::sqrt(2.0 / k) * h1 - std::sqrt((k - 1.0) / k) * h0;
      h0 = h1;
      h1 = h2;
    }
    hn = h1;
    hn1 = h0;
  };
  double x = 0;
  for (int i = 0; i < (n + 1) / 2; ++i) {
    if (i == 0)
      x = std::sqrt(2.0 * n + 1) - 1.85575 * std::pow(2.0 * n + 1, -1.0 / 6.0);
    else if (i == 1)
      x -= 1.14 * std::pow(static_cast<double>(n), 0.426) / x;
    else if (i == 2)
      x = 1.86 * x - 0.86 * pos[0];
    else if (i == 3)
      x = 1.91 * x - 0.91 * pos[1];
    else
      x = 2 * x - pos[i - 2];
    for (int it = 0; it < 200; ++it) {
      double hn, hn1;
      eval(x, hn, hn1);
      double dh = std::sqrt(2.0 * n) * hn1;
      double dx = hn / dh;
      x -= dx;
      if (std::abs(dx) < 1e-15) break;
    }
    pos[i] = x;
    double hn, hn1;
    eval(x, hn, hn1);
    double dh = std::sqrt(2.0 * n) * hn1;
    double w = 2.0 / (dh * dh);
    r.nodes[n - 1 - i] = x;
    r.weights[n - 1 - i] = w;
    r.nodes[i] = -x;
    r.weights[i] = w;
  }
  return r;
}

using TestFns = std::function<std::vector<double>(const Value &)>;

class Expect {
public:
  explicit Expect(int gauss_nodes = 24, int unit_nodes = 48)
      : gh_(gauss_hermite(gauss_nodes)), gl_(gauss_legendre(unit_nodes)) {}

  // Unnormalized expectation of each test function under the measure.
  std::vector<double> run(const Measure &m, Env &env, const TestFns &h, int nfns) {
    std::vector<double> acc(nfns, 0.0);
    walk(m, env, 1.0, h, acc);
    return acc;
  }

private:
  void walk(const Measure &m, Env &env, double w, const TestFns &h, std::vector<double> &acc) {
    if (w == 0) return;
    const MeasureNode &n = *m;
    switch (n.kind) {
    case Mk::Ret: {
      Value v = eval_expr(n.e, env);
      std::vector<double> hv = h(v);
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * hv[i];
      return;
    }
    case Mk::Weight: {
      double we = eval_real(n.e, env);
      walk(n.m1, env, w * we, h, acc);
      return;
    }
    case Mk::Bind: {
      against(n.m1, env, [&](const Value &v, double wi) {
        bool had = env.count(n.name) > 0;
        Value saved = had ? env[n.name] : Value();
        env[n.name] = v;
        walk(n.m2, env, w * wi, h, acc);
        if (had) env[n.name] = saved; else env.erase(n.name);
      });
      return;
    }
    case Mk::Plate:
    case Mk::Prim: {
      against(m, env, [&](const Value &v, double wi) {
        Value out = v;
        std::vector<double> hv = h(out);
        for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * wi * hv[i];
      });
      return;
    }
    }
  }

  // Enumerates (value, weight) pairs of a distribution-like measure.
  void against(const Measure &m, Env &env, const std::function<void(const Value &, double)> &k) {
    const MeasureNode &n = *m;
    switch (n.kind) {
    case Mk::Prim:
      prim(n, env, k);
      return;
    case Mk::Plate: {
      long sz = std::lround(eval_real(n.e, env));
      std::vector<Value> elems;
      plate_rec(n, env, 0, sz, 1.0, elems, k);
      return;
    }
    case Mk::Ret:
      k(eval_expr(n.e, env), 1.0);
      return;
    case Mk::Weight: {
      double we = eval_real(n.e, env);
      against(n.m1, env, [&](const Value &v, double wi) { k(v, we * wi); });
      return;
    }
    case Mk::Bind:
      against(n.m1, env, [&](const Value &v, double w1) {
        bool had = env.count(n.name) > 0;
        Value saved = had ? env[n.name] : Value();
        env[n.name] = v;
        against(n.m2, env, [&](const Value &v2, double w2) { k(v2, w1 * w2); });
        if (had) env[n.name] = saved; else env.erase(n.name);
      });
      return;
    }
  }

  void plate_rec(const MeasureNode &n, Env &env, long i, long sz, double w,
                 std::vector<Value> &elems, const std::function<void(const Value &, double)> &k) {
    if (i == sz) {
      k(Value::array(elems), w);
      return;
    }
    bool had = env.count(n.name) > 0;
    Value saved = had ? env[n.name] : Value();
    env[n.name] = Value::real(static_cast<double>(i));
    against(n.m1, env, [&](const Value &v, double wi) {
      elems.push_back(v);
      Value idx_saved = env[n.name];
      plate_rec(n, env, i + 1, sz, w * wi, elems, k);
      env[n.name] = idx_saved;
      elems.pop_back();
    });
    if (had) env[n.name] = saved; else env.erase(n.name);
  }

  void prim(const MeasureNode &n, Env &env, const std::function<void(const Value &, double)> &k) {
    switch (n.dist) {
    case Dist::Gaussian: {
      double mu = eval_real(n.params[0], env);
      double sigma = eval_real(n.params[1], env);
      for (std::size_t i = 0; i < gh_.nodes.size(); ++i) {
        double x = mu + sigma * std::sqrt(2.0) * gh_.nodes[i];
        k(Value::real(x), gh_.weights[i] / std::sqrt(M_PI));
      }
      return;
    }
    case Dist::Uniform: {
      double a = eval_real(n.params[0], env);
      double b = eval_real(n.params[1], env);
      for (std::size_t i = 0; i < gl_.nodes.size(); ++i) {
        double x = a + (b - a) * 0.5 * (gl_.nodes[i] + 1);
        k(Value::real(x), gl_.weights[i] * 0.5);
      }
      return;
    }
    case Dist::Beta: {
      double a = eval_real(n.params[0], env);
      double b = eval_real(n.params[1], env);
      double lb = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
      for (std::size_t i = 0; i < gl_.nodes.size(); ++i) {
        double x = 0.5 * (gl_.nodes[i] + 1);
        double dens = std::exp((a - 1) * std::log(x) + (b - 1) * std::log1p(-x) - lb);
        k(Value::real(x), gl_.weights[i] * 0.5 * dens);
      }
      return;
    }
    case Dist::Gamma: {
      // Mapped Gauss-Legendre on (0, k*theta + 12*sqrt(k)*theta).
      double kk = eval_real(n.params[0], env);
      double th = eval_real(n.params[1], env);
      double hi = kk * th + 12 * std::sqrt(kk) * th + 10 * th;
      double lg = std::lgamma(kk);
      for (std::size_t i = 0; i < gl_.nodes.size(); ++i) {
        double x = hi * 0.5 * (gl_.nodes[i] + 1);
        if (x <= 0) continue;
        double dens = std::exp((kk - 1) * std::log(x) - x / th - lg - kk * std::log(th));
        k(Value::real(x), gl_.weights[i] * 0.5 * hi * dens);
      }
      return;
    }
    case Dist::Categorical: {
      Value w = eval_expr(n.params[0], env);
      if (w.kind != Value::Kind::Array) throw EvalError("categorical weights not an array");
      for (std::size_t i = 0; i < w.elems.size(); ++i)
        k(Value::real(static_cast<double>(i)), w.elems[i].as_real());
      return;
    }
    case Dist::Dirichlet:
      throw EvalError("dirichlet must be expanded before the oracle runs");
    }
  }

  QuadRule gh_, gl_;
};

// Deterministic family of bounded polynomial/indicator test functions over
// the flattened outcome.
inline void flatten(const Value &v, std::vector<double> &out) {
  switch (v.kind) {
  case Value::Kind::Real:
    out.push_back(v.d);
    return;
  case Value::Kind::Bool:
    out.push_back(v.b ? 1.0 : 0.0);
    return;
  case Value::Kind::Array:
    for (const Value &e : v.elems) flatten(e, out);
    return;
  case Value::Kind::Pair:
    flatten(v.pr->first, out);
    flatten(v.pr->second, out);
    return;
  case Value::Kind::Unit:
    return;
  }
}

struct RandomTestFns {
  int count;
  unsigned seed;

  std::vector<double> operator()(const Value &v) const {
    std::vector<double> xs;
    flatten(v, xs);
    std::vector<double> out(count);
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int f = 0; f < count; ++f) {
      double a = U(rng), b = U(rng), c = U(rng);
      double acc = 1.0;
      if (f % 3 == 2) {
        // Indicator-style test function, smoothed so dense quadrature
        // converges at the stated tolerance (a hard step would cap the
        // achievable accuracy of any fixed-order rule).
        double t = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) t += (i % 2 ? a : b) * xs[i];
        acc = 1.0 / (1.0 + std::exp(-0.5 * (c * 2 - t)));
      } else {
        for (std::size_t i = 0; i < xs.size(); ++i) {
          double x = xs[i];
          acc *= 1.0 + 0.3 * a * x + (f % 3 == 1 ? 0.05 * b * x * x : 0.0);
        }
      }
      out[f] = acc;
    }
    return out;
  }
};

} // namespace hkir::oracle

#endif
