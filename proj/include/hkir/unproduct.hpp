#ifndef HKIR_UNPRODUCT_HPP
#define HKIR_UNPRODUCT_HPP

#include "hkir/linear.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// unproduct(e, x, H) rewrites H[e] as residual * prod_i g(i, x[i]) where g
// never mentions the array x itself. H is the "heap": a one-hole context
// accumulated during the descent, restricted so that it factors over the
// mode of its hole (multiplication outside exp-like frames, addition
// inside). Guards pushed by the piecewise case and the frames' own
// constants must not mention x.

struct HeapFrame {
  enum Kind { PowC, BasePow, ExpF, ScaleC, LoopProd, LoopSum, Guard } kind;
  Expr c;            // PowC exponent / BasePow base / ScaleC factor / Guard guard
  std::string ivar;  // LoopProd / LoopSum
  Expr lo, hi;
};

struct Heap {
  std::vector<HeapFrame> frames; // outermost first

  // Mode of the hole: false = multiplicative (identity 1), true = additive
  // (identity 0).
  bool add_mode() const {
    bool add = false;
    for (const HeapFrame &f : frames) {
      switch (f.kind) {
      case HeapFrame::BasePow:
      case HeapFrame::ExpF:
        add = true;
        break;
      case HeapFrame::PowC:
      case HeapFrame::LoopProd:
        add = false;
        break;
      default:
        break; // ScaleC, LoopSum, Guard preserve the mode
      }
    }
    return add;
  }

  bool add_mode_at(std::size_t depth) const {
    bool add = false;
    for (std::size_t i = 0; i < depth && i < frames.size(); ++i) {
      switch (frames[i].kind) {
      case HeapFrame::BasePow:
      case HeapFrame::ExpF:
        add = true;
        break;
      case HeapFrame::PowC:
      case HeapFrame::LoopProd:
        add = false;
        break;
      default:
        break;
      }
    }
    return add;
  }

  Heap pushed(HeapFrame f) const {
    Heap h = *this;
    h.frames.push_back(std::move(f));
    return h;
  }
};

namespace unprod_detail {

inline Expr plug_frame(const HeapFrame &f, Expr e, bool inside_add) {
  switch (f.kind) {
  case HeapFrame::PowC:
    return pow_(std::move(e), f.c);
  case HeapFrame::BasePow:
    return pow_(f.c, std::move(e));
  case HeapFrame::ExpF:
    return exp_(std::move(e));
  case HeapFrame::ScaleC:
    return mul(f.c, std::move(e));
  case HeapFrame::LoopProd:
    return prod_(f.ivar, f.lo, f.hi, std::move(e));
  case HeapFrame::LoopSum:
    return sum_(f.ivar, f.lo, f.hi, std::move(e));
  case HeapFrame::Guard:
    return pw(f.c, std::move(e), num(inside_add ? 0 : 1));
  }
  return e;
}

// Plugs e into the frames [from, to).
inline Expr plug_range(const Heap &h, std::size_t from, std::size_t to, Expr e) {
  for (std::size_t i = to; i-- > from;) e = plug_frame(h.frames[i], std::move(e), h.add_mode_at(i));
  return e;
}

inline Expr plug(const Heap &h, Expr e) { return plug_range(h, 0, h.frames.size(), std::move(e)); }

// Collects the occurrences of Index(x, idx) in e whose index expressions are
// scoped entirely outside e. Returns false when x occurs outside indexing
// (whole-array use) or under an internal binder's index (either disables the
// single-index workhorse; structural descent handles those shapes).
inline bool collect_index_uses(const Expr &e, const std::string &x, std::vector<Expr> &idxs,
                               std::set<std::string> &bound) {
  const ExprNode &n = *e;
  if (n.kind == Ek::Var) return n.name != x;
  if (n.kind == Ek::Index && n.args[0]->kind == Ek::Var && n.args[0]->name == x) {
    if (contains_var(n.args[1], x)) return false; // x inside its own index
    for (const std::string &b : bound)
      if (contains_var(n.args[1], b)) return false; // internally-scoped index
    if (!collect_index_uses(n.args[1], x, idxs, bound)) return false;
    idxs.push_back(n.args[1]);
    return true;
  }
  if (n.kind == Ek::HistTerm) {
    if (!collect_index_uses(n.args[0], x, idxs, bound)) return false;
    if (!collect_index_uses(n.args[1], x, idxs, bound)) return false;
    std::set<std::string> fv, b2{n.name};
    free_vars_reducer(n.red, n.name, fv, b2);
    return fv.count(x) == 0; // conservatively whole-array when mentioned
  }
  std::vector<std::pair<const std::string *, const Expr *>> binders;
  detail::binder_views(n, binders);
  for (const Expr &a : n.args) {
    const std::string *bn = nullptr;
    for (auto &[name, scope] : binders)
      if (scope == &a) bn = name;
    if (bn && !bn->empty()) {
      bool fresh = bound.insert(*bn).second;
      bool ok = collect_index_uses(a, x, idxs, bound);
      if (fresh) bound.erase(*bn);
      if (!ok) return false;
    } else {
      if (!collect_index_uses(a, x, idxs, bound)) return false;
    }
  }
  return true;
}

inline Expr subst_indexed(const Expr &e, const std::string &x, const Expr &idx,
                          const Expr &replacement) {
  const ExprNode &n = *e;
  if (n.kind == Ek::Index && n.args[0]->kind == Ek::Var && n.args[0]->name == x &&
      equal(canon(n.args[1]), idx))
    return replacement;
  ExprNode out = n;
  for (Expr &a : out.args) a = subst_indexed(a, x, idx, replacement);
  return make_expr(std::move(out));
}

} // namespace unprod_detail

struct FactorResult {
  Expr residual;  // uses x only as a whole (from the fallback) or not at all
  Expr body;      // factor body over (ivar, xivar); never mentions x
};

class Unproduct {
public:
  Unproduct(std::string array, std::string ivar, std::string xivar, Expr lo, Expr hi,
            const Facts &facts)
      : x_(std::move(array)), i_(std::move(ivar)), xi_(std::move(xivar)), lo_(std::move(lo)),
        hi_(std::move(hi)), facts_(facts) {}

  FactorResult run(const Expr &e, const Heap &h) {
    // Case 1: no x at all.
    if (!contains_var(e, x_)) return {canon(unprod_detail::plug(h, e)), num(1)};

    // Case 2 (workhorse): x used at a single outer-scoped index.
    std::vector<Expr> idxs;
    std::set<std::string> bound;
    if (unprod_detail::collect_index_uses(e, x_, idxs, bound) && !idxs.empty()) {
      Expr first = canon(idxs[0]);
      bool unique = true;
      for (const Expr &ix : idxs)
        if (!equal(canon(ix), first)) unique = false;
      if (unique) return workhorse(e, first, h);
    }

    const ExprNode &n = *e;
    bool add = h.add_mode();
    switch (n.kind) {
    case Ek::Mul: {
      if (add) {
        // c * e with c free of x.
        std::vector<Expr> free_parts, dep_parts;
        for (const Expr &a : n.args)
          (contains_var(a, x_) ? dep_parts : free_parts).push_back(a);
        if (!free_parts.empty() && dep_parts.size() >= 1) {
          HeapFrame f;
          f.kind = HeapFrame::ScaleC;
          f.c = mul_of(free_parts);
          if (dep_parts.size() == 1) return run(dep_parts[0], h.pushed(std::move(f)));
        }
        return fallback(e, h);
      }
      // Multiplicative split: same heap for every factor.
      FactorResult acc{num(1), num(1)};
      for (const Expr &a : n.args) acc = combine(acc, run(a, h));
      return acc;
    }
    case Ek::Add: {
      if (!add) {
        // A sum in a multiplicative context: pull out the common monomial
        // factor, if any, so shapes like prod(p) - prod(p)*q become
        // prod(p) * (1 - q) and factor elementwise.
        NF nf = canon_detail::to_nf(e);
        if (nf.size() >= 2 && !nf[0].factors.empty()) {
          Monomial common;
          for (const Factor &f : nf[0].factors) {
            if (!f.has_rat || f.rexp <= 0) continue;
            Rational mn = f.rexp;
            bool everywhere = true;
            for (std::size_t k = 1; k < nf.size() && everywhere; ++k) {
              bool found = false;
              for (const Factor &g : nf[k].factors)
                if (g.has_rat && equal(g.base, f.base)) {
                  if (g.rexp < mn) mn = g.rexp;
                  found = g.rexp > 0;
                }
              everywhere = found;
            }
            if (everywhere && mn > 0) {
              Factor cf = f;
              cf.rexp = mn;
              common.factors.push_back(std::move(cf));
            }
          }
          if (!common.factors.empty()) {
            Monomial inv = common;
            for (Factor &f : inv.factors) f.rexp = -f.rexp;
            Expr rest =
                canon_detail::nf_to_expr(canon_detail::nf_mul(nf, NF{inv}));
            Expr ce = canon_detail::mono_to_expr(common);
            return run(mul(ce, rest), h);
          }
        }
        return fallback(e, h);
      }
      FactorResult acc{num(1), num(1)};
      for (const Expr &a : n.args) acc = combine(acc, run(a, h));
      return acc;
    }
    case Ek::Pow: {
      const Expr &base = n.args[0], &expo = n.args[1];
      if (!add && !contains_var(expo, x_)) {
        HeapFrame f;
        f.kind = HeapFrame::PowC;
        f.c = expo;
        return run(base, h.pushed(std::move(f)));
      }
      if (!add && !contains_var(base, x_)) {
        HeapFrame f;
        f.kind = HeapFrame::BasePow;
        f.c = base;
        return run(expo, h.pushed(std::move(f)));
      }
      return fallback(e, h);
    }
    case Ek::Exp: {
      if (!add) {
        HeapFrame f;
        f.kind = HeapFrame::ExpF;
        return run(n.args[0], h.pushed(std::move(f)));
      }
      return fallback(e, h);
    }
    case Ek::Prod:
    case Ek::Sum: {
      bool want_add = n.kind == Ek::Sum;
      if (add != want_add) return fallback(e, h);
      if (contains_var(n.args[0], x_) || contains_var(n.args[1], x_)) return fallback(e, h);
      HeapFrame f;
      f.kind = want_add ? HeapFrame::LoopSum : HeapFrame::LoopProd;
      f.ivar = n.name;
      f.lo = n.args[0];
      f.hi = n.args[1];
      return run(n.args[2], h.pushed(std::move(f)));
    }
    case Ek::Piecewise: {
      // Split into guarded branches; guards must not mention x.
      Expr guard = n.args[0];
      if (contains_var(guard, x_)) return fallback(e, h);
      Expr rest = n.args.size() == 3 ? n.args[2]
                                     : piecewise(std::vector<Expr>(n.args.begin() + 2, n.args.end()));
      HeapFrame ft;
      ft.kind = HeapFrame::Guard;
      ft.c = guard;
      HeapFrame ff;
      ff.kind = HeapFrame::Guard;
      ff.c = canon_detail::canon_guard(not_(guard));
      FactorResult r1 = run(n.args[1], h.pushed(std::move(ft)));
      FactorResult r2 = run(rest, h.pushed(std::move(ff)));
      return combine(r1, r2);
    }
    default:
      return fallback(e, h);
    }
  }

private:
  FactorResult fallback(const Expr &e, const Heap &h) {
    return {canon(unprod_detail::plug(h, e)), num(1)};
  }

  static Expr mul_of(const std::vector<Expr> &parts) {
    if (parts.size() == 1) return parts[0];
    return mul(std::vector<Expr>(parts));
  }

  FactorResult combine(const FactorResult &a, const FactorResult &b) {
    return {canon(mul(a.residual, b.residual)), canon(mul(a.body, b.body))};
  }

  // The workhorse: e uses x only at index a. Result before reduction is
  //   g = \(i, xi). H[(i = a) ? e[x[a] := xi]]
  // then the algebraic steps: (1) hoist the test maximally out of H,
  // (2) solve the test to turn the surviving loop into a let, (3,4) push
  // prod/sum inward (performed by canon's loop splitting).
  FactorResult workhorse(const Expr &e, const Expr &a, const Heap &h) {
    Expr core = unprod_detail::subst_indexed(e, x_, a, var(xi_));
    Expr guard = canon_detail::canon_cmp(CmpOp::Eq, var(i_), a);

    // Step 1: find the innermost loop frame binding a variable of the guard.
    std::set<std::string> gv = free_vars(guard);
    std::size_t split = 0; // frames [0, split) stay outside the test
    for (std::size_t k = 0; k < h.frames.size(); ++k) {
      const HeapFrame &f = h.frames[k];
      if ((f.kind == HeapFrame::LoopProd || f.kind == HeapFrame::LoopSum) && gv.count(f.ivar))
        split = k + 1;
    }

    // Step 2: if the boundary frame is a loop over j and the test solves
    // for j, drop the loop and substitute. The solution is guarded by the
    // loop bounds unless the target's own range entails them.
    while (split > 0) {
      const HeapFrame &f = h.frames[split - 1];
      if (f.kind != HeapFrame::LoopProd && f.kind != HeapFrame::LoopSum) break;
      if (!gv.count(f.ivar)) break;
      auto sol = solve_linear(guard->args[0], guard->args[1], f.ivar);
      if (!sol) break;
      // Inner frames must not depend on the solved index beyond the core.
      bool inner_dep = false;
      for (std::size_t k = split; k < h.frames.size(); ++k) {
        const HeapFrame &g = h.frames[k];
        if ((g.c.defined() && contains_var(g.c, f.ivar)) ||
            (g.lo.defined() && (contains_var(g.lo, f.ivar) || contains_var(g.hi, f.ivar))))
          inner_dep = true;
      }
      if (inner_dep) break;
      Expr j0 = *sol;
      Expr inner = unprod_detail::plug_range(h, split, h.frames.size(), core);
      inner = subst(inner, f.ivar, j0);
      // Range guard: a <= j0 <= b, dropped when entailed by i's range.
      Expr range_g = range_guard(j0, f.lo, f.hi);
      bool inside_add = h.add_mode_at(split - 1);
      if (range_g.defined()) inner = pw(range_g, inner, num(inside_add ? 0 : 1));
      Expr out = unprod_detail::plug_range(h, 0, split - 1, inner);
      return {num(1), canon(out)};
    }

    // General shape: H_outer[(i=a) ? H_inner[core]].
    bool inside_add = h.add_mode_at(split);
    Expr inner = unprod_detail::plug_range(h, split, h.frames.size(), core);
    Expr guarded = pw(guard, inner, num(inside_add ? 0 : 1));
    Expr out = unprod_detail::plug_range(h, 0, split, guarded);
    return {num(1), canon(out)};
  }

  // Builds lo <= j0 <= hi minus whatever the enclosing range of i entails.
  Expr range_guard(const Expr &j0, const Expr &lo, const Expr &hi) {
    std::vector<Expr> conds;
    if (!entailed_le(lo, j0)) conds.push_back(canon_detail::canon_cmp(CmpOp::Le, lo, j0));
    if (!entailed_le(j0, hi)) conds.push_back(canon_detail::canon_cmp(CmpOp::Le, j0, hi));
    if (conds.empty()) return Expr();
    return conds.size() == 1 ? conds[0] : and_(conds[0], conds[1]);
  }

  // Entailment of a <= b given i in [lo_, hi_]: the difference b - a must be
  // affine in i with a literal slope; check the worst endpoint.
  bool entailed_le(const Expr &a, const Expr &b) {
    Expr d = canon(sub(b, a));
    auto p = poly_of(d, i_);
    if (!p) return false;
    if (poly_deg(*p) <= 0) {
      Expr c = p->empty() ? num(0) : (*p)[0];
      return provably_nonneg(c, facts_);
    }
    if (poly_deg(*p) != 1 || !is_num((*p)[1])) return false;
    const Rational &slope = (*p)[1]->num;
    Expr worst = slope > 0 ? lo_ : hi_;
    Expr at = poly_eval(*p, worst);
    return provably_nonneg(at, facts_);
  }

  std::string x_, i_, xi_;
  Expr lo_, hi_;
  const Facts &facts_;
};

// Rewrites e (under empty heap) as residual * prod_{i=lo}^{hi} body(i, x[i]).
inline FactorResult unproduct(const Expr &e, const std::string &x, const std::string &ivar,
                              const std::string &xivar, const Expr &lo, const Expr &hi,
                              const Facts &facts) {
  Unproduct u(x, ivar, xivar, lo, hi, facts);
  return u.run(canon(e), Heap{});
}

} // namespace hkir

#endif
