#ifndef HKIR_HISTOGRAM_HPP
#define HKIR_HISTOGRAM_HPP

#include "hkir/simplify.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// The histogram rewrite: a summation over data whose body selects among
// alternatives becomes a single-pass reducer fold whose result an enclosing
// scope can reuse for every class (LICM moves it there). The reducer
// denotes a monoid plus a per-index map; see eval.hpp for the value
// semantics used by tests.

struct HistRewrite {
  ReducerPtr reducer;
  // wrapper(s) with s bound to `wrapper_var`.
  std::string wrapper_var;
  Expr wrapper;
};

// Scope information: binder depth for every variable in scope (program
// inputs at depth 0) plus the inclusive upper bound for loop-bound index
// variables whose range the context entails.
struct ScopeInfo {
  std::map<std::string, int> depth;
  std::map<std::string, Expr> range_hi; // i -> m-1 when context gives i in {0..m-1}

  int depth_of(const std::set<std::string> &vars) const {
    int worst = 0;
    for (const std::string &v : vars) {
      auto it = depth.find(v);
      if (it != depth.end()) worst = std::max(worst, it->second);
    }
    return worst;
  }
};

namespace hist_detail {

inline bool contains_hist(const Expr &e) {
  if (e->kind == Ek::HistTerm) return true;
  for (const Expr &a : e->args)
    if (contains_hist(a)) return true;
  return false;
}

// Splits a conjunction into its parts.
inline void conjuncts(const Expr &g, std::vector<Expr> &out) {
  if (g->kind == Ek::And) {
    for (const Expr &a : g->args) conjuncts(a, out);
  } else {
    out.push_back(g);
  }
}

inline Expr conjoin(const std::vector<Expr> &parts) {
  if (parts.empty()) return boolean(true);
  if (parts.size() == 1) return parts[0];
  return canon_detail::canon_guard(nary(Ek::And, std::vector<Expr>(parts)));
}

// Tries to read guard as i = e with i a loop-bound variable independent of
// j and e an expression (the Idx rule's shapes). Returns (i, e).
inline std::optional<std::pair<std::string, Expr>>
match_index_eq(const Expr &g, const std::string &j, const ScopeInfo &scope) {
  if (g->kind != Ek::Cmp || g->cmp != CmpOp::Eq) return std::nullopt;
  Expr d = g->args[0]; // normalized: d = 0
  std::set<std::string> fv = free_vars(d);
  for (const std::string &cand : fv) {
    if (cand == j) continue;
    if (!scope.range_hi.count(cand)) continue;
    auto p = poly_of(d, cand);
    if (!p || poly_deg(*p) != 1) continue;
    if (!is_num((*p)[1])) continue;
    const Rational &c1 = (*p)[1]->num;
    if (c1 != 1 && c1 != -1) continue;
    Expr e = canon(mul(num(c1 == 1 ? -1 : 1), (*p)[0]));
    if (contains_var(e, cand)) continue;
    return std::make_pair(cand, e);
  }
  return std::nullopt;
}

} // namespace hist_detail

class HistogramPass {
public:
  explicit HistogramPass(NameGen &names) : names_(names) {}

  // histogram(e, j): (reducer, wrapper) with sum_{j} e = wrapper(Hist(r)),
  // per the rewrite rules applied top-down. Rules for j-free case splits
  // produce Fanout; j-dependent splits choose between Split and Idx by
  // whichever incurs the outermost free variables.
  HistRewrite histogram(const Expr &e0, const std::string &j, const ScopeInfo &scope) {
    Expr e = canon(e0);
    // 0 -> Nop
    if (is_num(e, 0)) {
      return {red_nop(), names_.fresh("s"), num(0)};
    }

    if (auto pwm = find_piecewise(e)) {
      auto [ctx_mul, guard, then_e, else_e] = *pwm;
      // Fanout: the guard does not depend on j at all.
      if (!contains_var(guard, j)) {
        HistRewrite a = histogram(canon(mul(ctx_mul, then_e)), j, scope);
        HistRewrite b = histogram(canon(mul(ctx_mul, else_e)), j, scope);
        std::string s = names_.fresh("s");
        Expr wa = subst(a.wrapper, a.wrapper_var, fst(var(s)));
        Expr wb = subst(b.wrapper, b.wrapper_var, snd(var(s)));
        return {red_fanout(a.reducer, b.reducer), s, pw(guard, wa, wb)};
      }
      // Between Split and Idx, prefer the rule whose free variables live
      // outermost; ties go to Idx (it enables the per-class win).
      std::vector<Expr> parts;
      hist_detail::conjuncts(guard, parts);
      struct IdxCand {
        std::size_t conj;
        std::string ivar;
        Expr sel;
        int depth;
      };
      std::optional<IdxCand> idx;
      for (std::size_t k = 0; k < parts.size(); ++k) {
        auto m = hist_detail::match_index_eq(parts[k], j, scope);
        if (!m) continue;
        // Free variables incurred by Idx: the selector expression only.
        std::set<std::string> fv = free_vars(m->second);
        fv.erase(j);
        int d = scope.depth_of(fv);
        if (!idx || d < idx->depth) idx = IdxCand{k, m->first, m->second, d};
      }
      std::set<std::string> gv = free_vars(guard);
      gv.erase(j);
      int split_depth = scope.depth_of(gv);
      if (idx && idx->depth <= split_depth) {
        // Idx rule on the matched conjunct; the rest of the guard stays in
        // the inner rewrite.
        std::vector<Expr> rest;
        for (std::size_t k = 0; k < parts.size(); ++k)
          if (k != idx->conj) rest.push_back(parts[k]);
        Expr inner_then = canon(mul(ctx_mul, then_e));
        if (!rest.empty()) inner_then = pw(hist_detail::conjoin(rest), inner_then,
                                           canon(mul(ctx_mul, else_e)));
        // The Idx rule requires the else branch to vanish for mismatched
        // classes: sum over j of the full piecewise equals hist[i] only
        // when else contributes nothing once i != sel.
        if (!is_num(canon(mul(ctx_mul, else_e)), 0))
          return add_rule(e);
        HistRewrite a = histogram(inner_then, j, scope);
        const Expr &hi = scope.range_hi.at(idx->ivar);
        Expr size = canon(add(hi, num(1)));
        std::string s = names_.fresh("s");
        // The reducer binds its own element variable; the wrapper looks up
        // the outer class index.
        std::string elem = names_.fresh(idx->ivar);
        ReducerPtr inner = subst_reducer(a.reducer, idx->ivar, var(elem));
        Expr w = subst(a.wrapper, a.wrapper_var, index(var(s), var(idx->ivar)));
        return {red_idx(elem, size, idx->sel, inner), s, w};
      }
      // Split rule.
      HistRewrite a = histogram(canon(mul(ctx_mul, then_e)), j, scope);
      HistRewrite b = histogram(canon(mul(ctx_mul, else_e)), j, scope);
      std::string s = names_.fresh("s");
      Expr wa = subst(a.wrapper, a.wrapper_var, fst(var(s)));
      Expr wb = subst(b.wrapper, b.wrapper_var, snd(var(s)));
      return {red_split(guard, a.reducer, b.reducer), s, add(wa, wb)};
    }

    return add_rule(e);
  }

  // Offers every summation to the histogram rewrite and replaces the
  // profitable ones (reducer contains Idx or Fanout) by
  // let h = Hist(...) in wrapper(h).
  Expr apply(const Expr &e, ScopeInfo &scope, int depth) {
    ExprNode n = *e;
    switch (n.kind) {
    case Ek::Sum: {
      n.args[0] = apply(n.args[0], scope, depth);
      n.args[1] = apply(n.args[1], scope, depth);
      bool fresh = !scope.depth.count(n.name);
      scope.depth[n.name] = depth + 1;
      bool had_range = scope.range_hi.count(n.name);
      Expr saved_range = had_range ? scope.range_hi[n.name] : Expr();
      if (is_num(canon(n.args[0]), 0)) scope.range_hi[n.name] = canon(n.args[1]);
      n.args[2] = apply(n.args[2], scope, depth + 1);
      Expr rebuilt = make_expr(ExprNode(n));
      Expr out = rebuilt;
      // A summand that already contains a histogram (from an inner rewrite)
      // must not be folded into a reducer body: the inner fold would then
      // rerun on every update, which defeats the point.
      if (is_num(canon(n.args[0]), 0) && !hist_detail::contains_hist(n.args[2])) {
        HistRewrite hr = histogram(n.args[2], n.name, scope);
        if (profitable(hr.reducer)) {
          std::string h = names_.fresh("hist");
          Expr wrapped = subst(hr.wrapper, hr.wrapper_var, var(h));
          out = let_(h, hist_term(n.name, n.args[0], n.args[1], hr.reducer), wrapped);
        }
      }
      if (fresh) scope.depth.erase(n.name);
      if (had_range) scope.range_hi[n.name] = saved_range;
      else scope.range_hi.erase(n.name);
      return out;
    }
    case Ek::Prod:
      n.args[0] = apply(n.args[0], scope, depth);
      n.args[1] = apply(n.args[1], scope, depth);
      return with_binder(n, 2, scope, depth, canon(n.args[0]), canon(n.args[1]));
    case Ek::ArrayGen:
      n.args[0] = apply(n.args[0], scope, depth);
      return with_binder(n, 1, scope, depth, num(0), canon(sub(n.args[0], num(1))));
    case Ek::Let: {
      n.args[0] = apply(n.args[0], scope, depth);
      bool fresh = !scope.depth.count(n.name);
      scope.depth[n.name] = depth + 1;
      n.args[1] = apply(n.args[1], scope, depth + 1);
      if (fresh) scope.depth.erase(n.name);
      return make_expr(std::move(n));
    }
    default:
      for (Expr &a : n.args) a = apply(a, scope, depth);
      return make_expr(std::move(n));
    }
  }

  Measure apply(const Measure &m, ScopeInfo &scope, int depth) {
    MeasureNode n = *m;
    switch (n.kind) {
    case Mk::Ret:
      n.e = apply(n.e, scope, depth);
      break;
    case Mk::Weight:
      n.e = apply(n.e, scope, depth);
      n.m1 = apply(n.m1, scope, depth);
      break;
    case Mk::Bind: {
      n.m1 = apply(n.m1, scope, depth);
      bool fresh = !scope.depth.count(n.name);
      scope.depth[n.name] = depth + 1;
      // A categorical bind entails the support range for its variable.
      bool set_range = false;
      if (n.m1->kind == Mk::Prim && n.m1->dist == Dist::Categorical) {
        Expr sz = canon(size_of(n.m1->params[0]));
        scope.range_hi[n.name] = canon(sub(sz, num(1)));
        set_range = true;
      }
      n.m2 = apply(n.m2, scope, depth + 1);
      if (fresh) scope.depth.erase(n.name);
      if (set_range) scope.range_hi.erase(n.name);
      break;
    }
    case Mk::Plate: {
      n.e = apply(n.e, scope, depth);
      bool fresh = !scope.depth.count(n.name);
      scope.depth[n.name] = depth + 1;
      scope.range_hi[n.name] = canon(sub(n.e, num(1)));
      n.m1 = apply(n.m1, scope, depth + 1);
      if (fresh) scope.depth.erase(n.name);
      scope.range_hi.erase(n.name);
      break;
    }
    case Mk::Prim:
      for (Expr &p : n.params) p = apply(p, scope, depth);
      break;
    }
    return make_measure(std::move(n));
  }

  static bool profitable(const ReducerPtr &r) {
    switch (r->kind) {
    case Rk::RIdx:
    case Rk::RFanout:
      return true;
    case Rk::RSplit:
      return profitable(r->r1) || profitable(r->r2);
    default:
      return false;
    }
  }

private:
  HistRewrite add_rule(const Expr &e) {
    std::string s = names_.fresh("s");
    return {red_add(e), s, var(s)};
  }

  Expr with_binder(ExprNode n, std::size_t body_at, ScopeInfo &scope, int depth, Expr lo,
                   Expr hi) {
    bool fresh = !scope.depth.count(n.name);
    scope.depth[n.name] = depth + 1;
    bool set_range = is_num(lo, 0);
    if (set_range) scope.range_hi[n.name] = hi;
    n.args[body_at] = apply(n.args[body_at], scope, depth + 1);
    if (fresh) scope.depth.erase(n.name);
    if (set_range) scope.range_hi.erase(n.name);
    return make_expr(std::move(n));
  }

  // Finds the outermost piecewise factor of a product (context C around
  // the case split), returning (other factors, guard, then, else).
  std::optional<std::tuple<Expr, Expr, Expr, Expr>> find_piecewise(const Expr &e) {
    std::vector<Expr> factors;
    if (e->kind == Ek::Mul) {
      factors = e->args;
    } else {
      factors = {e};
    }
    for (std::size_t i = 0; i < factors.size(); ++i) {
      if (factors[i]->kind != Ek::Piecewise) continue;
      const ExprNode &pwn = *factors[i];
      std::vector<Expr> rest;
      for (std::size_t k = 0; k < factors.size(); ++k)
        if (k != i) rest.push_back(factors[k]);
      Expr ctx = rest.empty() ? num(1) : rest.size() == 1 ? rest[0] : mul(std::move(rest));
      Expr guard = pwn.args[0];
      Expr then_e = pwn.args[1];
      Expr else_e = pwn.args.size() == 3
                        ? pwn.args[2]
                        : piecewise(std::vector<Expr>(pwn.args.begin() + 2, pwn.args.end()));
      return std::make_tuple(ctx, guard, then_e, else_e);
    }
    return std::nullopt;
  }

  NameGen &names_;
};

// The pass entry point: rewrites profitable summations in a simplified
// program into histogram lets.
inline Program apply_histogram_pass(const Program &p) {
  NameGen names;
  HistogramPass pass(names);
  ScopeInfo scope;
  for (const Param &param : p.params) scope.depth[param.name] = 0;
  Program out = p;
  if (p.is_measure())
    out.body = pass.apply(p.measure_body(), scope, 0);
  else
    out.body = pass.apply(p.expr_body(), scope, 0);
  check_closed(out);
  return out;
}

} // namespace hkir

#endif
