#ifndef HKIR_EVAL_HPP
#define HKIR_EVAL_HPP

#include "hkir/printer.hpp"
#include "hkir/types.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace hkir {

struct EvalError : std::runtime_error {
  explicit EvalError(const std::string &msg) : std::runtime_error(msg) {}
};

// Reference value domain for the slow tree-walking evaluator. The fast
// interpreter in runtime/ has its own flat representation; this one exists
// for tests, oracles and reducer semantics.
struct Value {
  enum class Kind { Real, Bool, Array, Pair, Unit } kind = Kind::Real;
  double d = 0;
  bool b = false;
  std::vector<Value> elems;            // Array
  std::shared_ptr<std::pair<Value, Value>> pr; // Pair

  static Value real(double x) {
    Value v;
    v.kind = Kind::Real;
    v.d = x;
    return v;
  }
  static Value boolean(bool x) {
    Value v;
    v.kind = Kind::Bool;
    v.b = x;
    return v;
  }
  static Value array(std::vector<Value> xs) {
    Value v;
    v.kind = Kind::Array;
    v.elems = std::move(xs);
    return v;
  }
  static Value pair(Value a, Value b) {
    Value v;
    v.kind = Kind::Pair;
    v.pr = std::make_shared<std::pair<Value, Value>>(std::move(a), std::move(b));
    return v;
  }
  static Value unit() {
    Value v;
    v.kind = Kind::Unit;
    return v;
  }

  double as_real() const {
    if (kind != Kind::Real) throw EvalError("expected a number");
    return d;
  }
  long as_index(long size_hint = -1) const {
    double x = as_real();
    long i = std::lround(x);
    if (std::abs(x - static_cast<double>(i)) > 1e-9) throw EvalError("non-integral index");
    if (i < 0 || (size_hint >= 0 && i >= size_hint)) throw EvalError("index out of bounds");
    return i;
  }
};

using Env = std::map<std::string, Value>;

struct EvalStats {
  long long reducer_updates = 0;
};

Value eval_expr(const Expr &e, Env &env, EvalStats *stats = nullptr);

// ----- reducer semantics -----------------------------------------------------
// A reducer denotes a monoid (identity + merge) plus a per-index map; Hist
// folds the map over the index range with the merge.

inline Value reducer_identity(const ReducerPtr &r, Env &env, EvalStats *stats = nullptr) {
  switch (r->kind) {
  case Rk::RAdd:
    return Value::real(0);
  case Rk::RIdx: {
    long n = eval_expr(r->size, env, stats).as_index();
    std::vector<Value> elems;
    elems.reserve(n);
    bool had = env.count(r->ivar) > 0;
    Value saved = had ? env[r->ivar] : Value();
    for (long i = 0; i < n; ++i) {
      env[r->ivar] = Value::real(static_cast<double>(i));
      elems.push_back(reducer_identity(r->r1, env, stats));
    }
    if (had) env[r->ivar] = saved; else if (n > 0) env.erase(r->ivar);
    return Value::array(std::move(elems));
  }
  case Rk::RSplit:
  case Rk::RFanout:
    return Value::pair(reducer_identity(r->r1, env, stats),
                       reducer_identity(r->r2, env, stats));
  case Rk::RNop:
    return Value::unit();
  }
  throw EvalError("bad reducer");
}

// Updates state in place at loop index j (already bound in env).
inline void reducer_update(const ReducerPtr &r, Value &state, Env &env,
                           EvalStats *stats = nullptr) {
  switch (r->kind) {
  case Rk::RAdd:
    state.d += eval_expr(r->e, env, stats).as_real();
    return;
  case Rk::RIdx: {
    long k = eval_expr(r->e, env, stats).as_index(static_cast<long>(state.elems.size()));
    bool had = env.count(r->ivar) > 0;
    Value saved = had ? env[r->ivar] : Value();
    env[r->ivar] = Value::real(static_cast<double>(k));
    reducer_update(r->r1, state.elems[k], env, stats);
    if (had) env[r->ivar] = saved; else env.erase(r->ivar);
    return;
  }
  case Rk::RSplit: {
    Value g = eval_expr(r->e, env, stats);
    if (g.kind != Value::Kind::Bool) throw EvalError("split guard must be boolean");
    if (g.b)
      reducer_update(r->r1, state.pr->first, env, stats);
    else
      reducer_update(r->r2, state.pr->second, env, stats);
    return;
  }
  case Rk::RFanout:
    reducer_update(r->r1, state.pr->first, env, stats);
    reducer_update(r->r2, state.pr->second, env, stats);
    return;
  case Rk::RNop:
    return;
  }
}

inline Value eval_hist(const std::string &j, long lo, long hi, const ReducerPtr &r, Env &env,
                       EvalStats *stats = nullptr) {
  Value state = reducer_identity(r, env, stats);
  bool had = env.count(j) > 0;
  Value saved = had ? env[j] : Value();
  for (long k = lo; k <= hi; ++k) {
    env[j] = Value::real(static_cast<double>(k));
    reducer_update(r, state, env, stats);
    if (stats) ++stats->reducer_updates;
  }
  if (had) env[j] = saved; else env.erase(j);
  return state;
}

// ----- expression evaluation -------------------------------------------------

inline double lgamma_pos(double x) {
  if (!(x > 0)) throw EvalError("gamma function argument must be positive");
  return std::lgamma(x);
}

inline Value eval_expr(const Expr &e, Env &env, EvalStats *stats) {
  const ExprNode &n = *e;
  auto scoped = [&](const std::string &name, Value v, const Expr &body) {
    bool had = env.count(name) > 0;
    Value saved = had ? env[name] : Value();
    env[name] = std::move(v);
    Value r = eval_expr(body, env, stats);
    if (had) env[name] = saved; else env.erase(name);
    return r;
  };
  switch (n.kind) {
  case Ek::Num:
    return Value::real(to_double(n.num));
  case Ek::Var: {
    auto it = env.find(n.name);
    if (it == env.end()) throw EvalError("unbound variable '" + n.name + "'");
    return it->second;
  }
  case Ek::Pi:
    return Value::real(M_PI);
  case Ek::BoolLit:
    return Value::boolean(n.bval);
  case Ek::Add: {
    double acc = 0;
    for (const Expr &a : n.args) acc += eval_expr(a, env, stats).as_real();
    return Value::real(acc);
  }
  case Ek::Mul: {
    double acc = 1;
    for (const Expr &a : n.args) acc *= eval_expr(a, env, stats).as_real();
    return Value::real(acc);
  }
  case Ek::Pow: {
    double b = eval_expr(n.args[0], env, stats).as_real();
    double x = eval_expr(n.args[1], env, stats).as_real();
    return Value::real(std::pow(b, x));
  }
  case Ek::Exp:
    return Value::real(std::exp(eval_expr(n.args[0], env, stats).as_real()));
  case Ek::Log:
    return Value::real(std::log(eval_expr(n.args[0], env, stats).as_real()));
  case Ek::Cmp: {
    double a = eval_expr(n.args[0], env, stats).as_real();
    double b = eval_expr(n.args[1], env, stats).as_real();
    switch (n.cmp) {
    case CmpOp::Eq: return Value::boolean(a == b);
    case CmpOp::Ne: return Value::boolean(a != b);
    case CmpOp::Lt: return Value::boolean(a < b);
    case CmpOp::Le: return Value::boolean(a <= b);
    }
    throw EvalError("bad comparison");
  }
  case Ek::And: {
    for (const Expr &a : n.args)
      if (!eval_expr(a, env, stats).b) return Value::boolean(false);
    return Value::boolean(true);
  }
  case Ek::Or: {
    for (const Expr &a : n.args)
      if (eval_expr(a, env, stats).b) return Value::boolean(true);
    return Value::boolean(false);
  }
  case Ek::Not:
    return Value::boolean(!eval_expr(n.args[0], env, stats).b);
  case Ek::Piecewise: {
    for (std::size_t i = 0; i + 1 < n.args.size(); i += 2) {
      Value g = eval_expr(n.args[i], env, stats);
      if (g.b) return eval_expr(n.args[i + 1], env, stats);
    }
    return eval_expr(n.args.back(), env, stats);
  }
  case Ek::Sum:
  case Ek::Prod: {
    long lo = eval_expr(n.args[0], env, stats).as_index();
    double hi_d = eval_expr(n.args[1], env, stats).as_real();
    long hi = std::lround(hi_d);
    double acc = n.kind == Ek::Sum ? 0 : 1;
    bool had = env.count(n.name) > 0;
    Value saved = had ? env[n.name] : Value();
    for (long i = lo; i <= hi; ++i) {
      env[n.name] = Value::real(static_cast<double>(i));
      double b = eval_expr(n.args[2], env, stats).as_real();
      if (n.kind == Ek::Sum) acc += b; else acc *= b;
    }
    if (had) env[n.name] = saved; else if (lo <= hi) env.erase(n.name);
    return Value::real(acc);
  }
  case Ek::ArrayLit: {
    std::vector<Value> xs;
    xs.reserve(n.args.size());
    for (const Expr &a : n.args) xs.push_back(eval_expr(a, env, stats));
    return Value::array(std::move(xs));
  }
  case Ek::ArrayGen: {
    long sz = eval_expr(n.args[0], env, stats).as_index();
    std::vector<Value> xs;
    xs.reserve(sz);
    bool had = env.count(n.name) > 0;
    Value saved = had ? env[n.name] : Value();
    for (long i = 0; i < sz; ++i) {
      env[n.name] = Value::real(static_cast<double>(i));
      xs.push_back(eval_expr(n.args[1], env, stats));
    }
    if (had) env[n.name] = saved; else if (sz > 0) env.erase(n.name);
    return Value::array(std::move(xs));
  }
  case Ek::Index: {
    Value a = eval_expr(n.args[0], env, stats);
    if (a.kind != Value::Kind::Array) throw EvalError("indexing a non-array");
    long i = eval_expr(n.args[1], env, stats).as_index(static_cast<long>(a.elems.size()));
    return a.elems[i];
  }
  case Ek::Size: {
    Value a = eval_expr(n.args[0], env, stats);
    if (a.kind != Value::Kind::Array) throw EvalError("size of a non-array");
    return Value::real(static_cast<double>(a.elems.size()));
  }
  case Ek::MkPair: {
    Value a = eval_expr(n.args[0], env, stats);
    return Value::pair(std::move(a), eval_expr(n.args[1], env, stats));
  }
  case Ek::Fst: {
    Value a = eval_expr(n.args[0], env, stats);
    if (a.kind != Value::Kind::Pair) throw EvalError("fst of a non-pair");
    return a.pr->first;
  }
  case Ek::Snd: {
    Value a = eval_expr(n.args[0], env, stats);
    if (a.kind != Value::Kind::Pair) throw EvalError("snd of a non-pair");
    return a.pr->second;
  }
  case Ek::Let:
    return scoped(n.name, eval_expr(n.args[0], env, stats), n.args[1]);
  case Ek::GammaF:
    return Value::real(std::exp(lgamma_pos(eval_expr(n.args[0], env, stats).as_real())));
  case Ek::BetaF: {
    double a = eval_expr(n.args[0], env, stats).as_real();
    double b = eval_expr(n.args[1], env, stats).as_real();
    return Value::real(std::exp(lgamma_pos(a) + lgamma_pos(b) - lgamma_pos(a + b)));
  }
  case Ek::HistTerm: {
    long lo = eval_expr(n.args[0], env, stats).as_index();
    long hi = std::lround(eval_expr(n.args[1], env, stats).as_real());
    return eval_hist(n.name, lo, hi, n.red, env, stats);
  }
  }
  throw EvalError("bad expression");
}

inline double eval_real(const Expr &e, Env &env) { return eval_expr(e, env).as_real(); }

} // namespace hkir

#endif
