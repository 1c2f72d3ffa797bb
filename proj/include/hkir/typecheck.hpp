#ifndef HKIR_TYPECHECK_HPP
#define HKIR_TYPECHECK_HPP

#include "hkir/printer.hpp"
#include "hkir/types.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace hkir {

struct TypeError : std::runtime_error {
  explicit TypeError(const std::string &msg) : std::runtime_error(msg) {}
};

// Scoped name -> type environment.
class TypeEnv {
public:
  void push(const std::string &n, Type t) { stack_.emplace_back(n, std::move(t)); }
  void pop() { stack_.pop_back(); }
  const Type *lookup(const std::string &n) const {
    for (auto it = stack_.rbegin(); it != stack_.rend(); ++it)
      if (it->first == n) return &it->second;
    return nullptr;
  }

private:
  std::vector<std::pair<std::string, Type>> stack_;
};

using TypeMap = std::map<const ExprNode *, Type>;

Type type_of(const Expr &e, TypeEnv &env, TypeMap *annot);
Type type_of(const Measure &m, TypeEnv &env, TypeMap *annot);

namespace detail {

[[noreturn]] inline void type_err(const std::string &msg, const Expr &e) {
  throw TypeError(msg + " in " + to_string(e));
}

inline Type require_numeric(const Expr &e, TypeEnv &env, TypeMap *annot, const char *what) {
  Type t = type_of(e, env, annot);
  if (!is_numeric(t)) type_err(std::string(what) + " must be numeric, got " + type_to_string(t), e);
  return t;
}

inline void require_sub(const Expr &e, const Type &want, TypeEnv &env, TypeMap *annot,
                        const char *what) {
  Type t = type_of(e, env, annot);
  if (!subtype(t, want))
    type_err(std::string(what) + " must have type " + type_to_string(want) + ", got " +
                 type_to_string(t),
             e);
}

inline Type reducer_type(const ReducerPtr &r, const std::string &j, TypeEnv &env, TypeMap *annot) {
  switch (r->kind) {
  case Rk::RAdd: {
    env.push(j, t_nat());
    Type t = type_of(r->e, env, annot);
    env.pop();
    if (!is_numeric(t)) throw TypeError("reducer add body must be numeric");
    return t;
  }
  case Rk::RIdx: {
    require_sub(r->size, t_nat(), env, annot, "reducer size");
    env.push(j, t_nat());
    require_sub(r->e, t_nat(), env, annot, "reducer selector");
    env.pop();
    env.push(r->ivar, t_nat());
    Type inner = reducer_type(r->r1, j, env, annot);
    env.pop();
    return t_array(inner);
  }
  case Rk::RSplit: {
    env.push(j, t_nat());
    require_sub(r->e, t_bool(), env, annot, "reducer guard");
    env.pop();
    return t_pair(reducer_type(r->r1, j, env, annot), reducer_type(r->r2, j, env, annot));
  }
  case Rk::RFanout:
    return t_pair(reducer_type(r->r1, j, env, annot), reducer_type(r->r2, j, env, annot));
  case Rk::RNop:
    return t_unit();
  }
  throw TypeError("bad reducer");
}

} // namespace detail

inline Type type_of(const Expr &e, TypeEnv &env, TypeMap *annot = nullptr) {
  using detail::require_numeric;
  using detail::require_sub;
  using detail::type_err;
  const ExprNode &n = *e;
  Type result;
  switch (n.kind) {
  case Ek::Num:
    if (is_integer(n.num))
      result = n.num >= 0 ? t_nat() : t_int();
    else if (n.num > 0 && n.num < 1)
      result = t_prob();
    else
      result = n.num >= 0 ? t_rpos() : t_real();
    break;
  case Ek::Var: {
    const Type *t = env.lookup(n.name);
    if (!t) type_err("unbound variable '" + n.name + "'", e);
    result = *t;
    break;
  }
  case Ek::Pi:
    result = t_rpos();
    break;
  case Ek::BoolLit:
    result = t_bool();
    break;
  case Ek::Add:
  case Ek::Mul: {
    auto prob_like = [&](const Expr &a, const Type &t) {
      if (subtype(t, t_prob())) return true;
      return a->kind == Ek::Num && a->num >= 0 && a->num <= 1;
    };
    result = require_numeric(n.args[0], env, annot, "operand");
    bool all_prob = prob_like(n.args[0], result);
    for (std::size_t i = 1; i < n.args.size(); ++i) {
      Type t = require_numeric(n.args[i], env, annot, "operand");
      all_prob = all_prob && prob_like(n.args[i], t);
      auto j = join(result, t);
      result = j ? *j : t_real();
    }
    if (n.kind == Ek::Mul && all_prob) result = t_prob();
    // Complement of a unit-interval value: both 1 - e and the distributed
    // form A - A*p (with A and p in [0,1]) stay in [0,1].
    if (n.kind == Ek::Add && n.args.size() == 2 && !subtype(result, t_rpos())) {
      auto split_term = [](const Expr &a) {
        std::pair<Rational, std::vector<Expr>> out{1, {}};
        if (a->kind == Ek::Mul) {
          for (const Expr &f : a->args) {
            if (f->kind == Ek::Num)
              out.first *= f->num;
            else
              out.second.push_back(f);
          }
        } else if (a->kind == Ek::Num) {
          out.first = a->num;
        } else {
          out.second.push_back(a);
        }
        std::sort(out.second.begin(), out.second.end(),
                  [](const Expr &x, const Expr &y) { return cmp_expr(x, y) < 0; });
        return out;
      };
      auto try_complement = [&](const Expr &pos, const Expr &neg) {
        auto [cp, fp] = split_term(pos);
        auto [cn, fn] = split_term(neg);
        if (cp <= 0 || cp > 1 || cn != -cp) return false;
        if (fn.size() != fp.size() + 1) return false;
        // fn must be fp plus exactly one extra prob-valued factor.
        std::size_t i = 0;
        Expr extra;
        for (const Expr &f : fn) {
          if (i < fp.size() && equal(f, fp[i])) {
            ++i;
          } else if (!extra.defined()) {
            extra = f;
          } else {
            return false;
          }
        }
        if (i != fp.size() || !extra.defined()) return false;
        Type tp = type_of(pos, env, annot);
        Type tx = type_of(extra, env, annot);
        return prob_like(pos, tp) && prob_like(extra, tx);
      };
      if (try_complement(n.args[0], n.args[1]) || try_complement(n.args[1], n.args[0]))
        result = t_prob();
    }
    break;
  }
  case Ek::Pow: {
    Type b = require_numeric(n.args[0], env, annot, "base");
    Type x = require_numeric(n.args[1], env, annot, "exponent");
    bool base_nonneg = subtype(b, t_rpos());
    bool expo_nat = subtype(x, t_nat());
    if (subtype(b, t_prob()) && subtype(x, t_rpos()))
      result = t_prob();
    else if (base_nonneg)
      result = (subtype(b, t_nat()) && expo_nat) ? t_nat() : t_rpos();
    else if (expo_nat)
      result = subtype(b, t_int()) ? t_int() : t_real();
    else
      result = t_real();
    break;
  }
  case Ek::Exp:
    require_sub(n.args[0], t_real(), env, annot, "exp argument");
    result = t_rpos();
    break;
  case Ek::Log:
    require_sub(n.args[0], t_rpos(), env, annot, "log argument");
    result = t_real();
    break;
  case Ek::Cmp:
    require_numeric(n.args[0], env, annot, "comparison operand");
    require_numeric(n.args[1], env, annot, "comparison operand");
    result = t_bool();
    break;
  case Ek::And:
  case Ek::Or:
    for (const Expr &a : n.args) require_sub(a, t_bool(), env, annot, "connective operand");
    result = t_bool();
    break;
  case Ek::Not:
    require_sub(n.args[0], t_bool(), env, annot, "not operand");
    result = t_bool();
    break;
  case Ek::Piecewise: {
    for (std::size_t i = 0; i + 1 < n.args.size(); i += 2)
      require_sub(n.args[i], t_bool(), env, annot, "guard");
    result = type_of(n.args[1], env, annot);
    for (std::size_t i = 3; i < n.args.size(); i += 2) {
      auto j = join(result, type_of(n.args[i], env, annot));
      if (!j) type_err("piecewise branches have incompatible types", e);
      result = *j;
    }
    auto j = join(result, type_of(n.args.back(), env, annot));
    if (!j) type_err("piecewise branches have incompatible types", e);
    result = *j;
    if (!subtype(result, t_prob())) {
      bool all_prob = true;
      for (std::size_t i = 1; i < n.args.size(); i += 2) {
        Type bt = type_of(n.args[i], env, annot);
        if (!subtype(bt, t_prob()) && !(n.args[i]->kind == Ek::Num && n.args[i]->num >= 0 &&
                                        n.args[i]->num <= 1))
          all_prob = false;
      }
      Type dt = type_of(n.args.back(), env, annot);
      if (!subtype(dt, t_prob()) && !(n.args.back()->kind == Ek::Num &&
                                      n.args.back()->num >= 0 && n.args.back()->num <= 1))
        all_prob = false;
      if (all_prob) result = t_prob();
    }
    break;
  }
  case Ek::Sum:
  case Ek::Prod: {
    require_sub(n.args[0], t_int(), env, annot, "loop bound");
    require_sub(n.args[1], t_int(), env, annot, "loop bound");
    env.push(n.name, t_nat());
    Type body = require_numeric(n.args[2], env, annot, "loop body");
    env.pop();
    result = n.kind == Ek::Prod && subtype(body, t_prob()) ? t_prob() : body;
    break;
  }
  case Ek::ArrayLit: {
    result = type_of(n.args[0], env, annot);
    for (std::size_t i = 1; i < n.args.size(); ++i) {
      auto j = join(result, type_of(n.args[i], env, annot));
      if (!j) type_err("array elements have incompatible types", e);
      result = *j;
    }
    result = t_array(result);
    break;
  }
  case Ek::ArrayGen: {
    require_sub(n.args[0], t_int(), env, annot, "array size");
    env.push(n.name, t_nat());
    Type body = type_of(n.args[1], env, annot);
    env.pop();
    result = t_array(body);
    break;
  }
  case Ek::Index: {
    Type a = type_of(n.args[0], env, annot);
    if (!a || a->kind != Tk::Array) type_err("indexing a non-array", e);
    require_sub(n.args[1], t_int(), env, annot, "index");
    result = a->a;
    break;
  }
  case Ek::Size: {
    Type a = type_of(n.args[0], env, annot);
    if (!a || a->kind != Tk::Array) type_err("size of a non-array", e);
    result = t_nat();
    break;
  }
  case Ek::MkPair:
    result = t_pair(type_of(n.args[0], env, annot), type_of(n.args[1], env, annot));
    break;
  case Ek::Fst: {
    Type a = type_of(n.args[0], env, annot);
    if (!a || a->kind != Tk::Pair) type_err("fst of a non-pair", e);
    result = a->a;
    break;
  }
  case Ek::Snd: {
    Type a = type_of(n.args[0], env, annot);
    if (!a || a->kind != Tk::Pair) type_err("snd of a non-pair", e);
    result = a->b;
    break;
  }
  case Ek::Let: {
    Type rhs = type_of(n.args[0], env, annot);
    env.push(n.name, rhs);
    result = type_of(n.args[1], env, annot);
    env.pop();
    break;
  }
  case Ek::GammaF:
    require_sub(n.args[0], t_rpos(), env, annot, "gammafn argument");
    result = t_rpos();
    break;
  case Ek::BetaF:
    require_sub(n.args[0], t_rpos(), env, annot, "betafn argument");
    require_sub(n.args[1], t_rpos(), env, annot, "betafn argument");
    result = t_rpos();
    break;
  case Ek::HistTerm: {
    require_sub(n.args[0], t_int(), env, annot, "hist bound");
    require_sub(n.args[1], t_int(), env, annot, "hist bound");
    result = detail::reducer_type(n.red, n.name, env, annot);
    break;
  }
  }
  if (annot) (*annot)[e.get()] = result;
  return result;
}

inline Type type_of(const Measure &m, TypeEnv &env, TypeMap *annot = nullptr) {
  using detail::require_sub;
  const MeasureNode &n = *m;
  switch (n.kind) {
  case Mk::Ret:
    return t_measure(type_of(n.e, env, annot));
  case Mk::Weight: {
    require_sub(n.e, t_rpos(), env, annot, "weight");
    return type_of(n.m1, env, annot);
  }
  case Mk::Bind: {
    Type mt = type_of(n.m1, env, annot);
    if (!mt || mt->kind != Tk::Measure) throw TypeError("bind of a non-measure");
    env.push(n.name, mt->a);
    Type body = type_of(n.m2, env, annot);
    env.pop();
    if (!body || body->kind != Tk::Measure) throw TypeError("bind body must be a measure");
    return body;
  }
  case Mk::Plate: {
    require_sub(n.e, t_int(), env, annot, "plate size");
    env.push(n.name, t_nat());
    Type body = type_of(n.m1, env, annot);
    env.pop();
    if (!body || body->kind != Tk::Measure) throw TypeError("plate body must be a measure");
    return t_measure(t_array(body->a));
  }
  case Mk::Prim:
    switch (n.dist) {
    case Dist::Uniform:
      require_sub(n.params[0], t_real(), env, annot, "uniform lower");
      require_sub(n.params[1], t_real(), env, annot, "uniform upper");
      if (is_num(n.params[0], 0) && is_num(n.params[1], 1)) return t_measure(t_prob());
      return t_measure(t_real());
    case Dist::Gaussian:
      require_sub(n.params[0], t_real(), env, annot, "gaussian mean");
      require_sub(n.params[1], t_rpos(), env, annot, "gaussian stddev");
      return t_measure(t_real());
    case Dist::Beta:
      require_sub(n.params[0], t_rpos(), env, annot, "beta parameter");
      require_sub(n.params[1], t_rpos(), env, annot, "beta parameter");
      return t_measure(t_prob());
    case Dist::Gamma:
      require_sub(n.params[0], t_rpos(), env, annot, "gamma shape");
      require_sub(n.params[1], t_rpos(), env, annot, "gamma scale");
      return t_measure(t_rpos());
    case Dist::Categorical:
      require_sub(n.params[0], t_array(t_rpos()), env, annot, "categorical weights");
      return t_measure(t_nat());
    case Dist::Dirichlet:
      require_sub(n.params[0], t_array(t_rpos()), env, annot, "dirichlet parameters");
      return t_measure(t_array(t_rpos()));
    }
    throw TypeError("bad primitive");
  }
  throw TypeError("bad measure");
}

inline TypeEnv env_of_params(const std::vector<Param> &params) {
  TypeEnv env;
  for (const Param &p : params) env.push(p.name, p.type);
  return env;
}

// Returns the type of the program body; annotates subterms when a map is
// supplied.
inline Type typecheck(const Program &p, TypeMap *annot = nullptr) {
  TypeEnv env = env_of_params(p.params);
  if (p.is_measure()) return type_of(p.measure_body(), env, annot);
  return type_of(p.expr_body(), env, annot);
}

// Every pass is expected to keep programs closed; this is the cheap check
// run after each stage.
inline void check_closed(const Program &p) {
  std::set<std::string> fv =
      p.is_measure() ? free_vars(p.measure_body()) : free_vars(p.expr_body());
  for (const Param &param : p.params) fv.erase(param.name);
  if (!fv.empty()) {
    std::string msg = "unbound variables after pass:";
    for (const auto &v : fv) msg += " " + v;
    throw TypeError(msg);
  }
}

} // namespace hkir

#endif
