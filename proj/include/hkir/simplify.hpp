#ifndef HKIR_SIMPLIFY_HPP
#define HKIR_SIMPLIFY_HPP

#include "hkir/unproduct.hpp"

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// ----- binder uniquification ---------------------------------------------------
// Downstream passes substitute terms under binders; globally unique binder
// names make that capture-free by construction.

namespace simp_detail {

struct Uniquify {
  std::set<std::string> seen;
  NameGen names;

  std::string pick(const std::string &base) {
    std::string n = base;
    while (!seen.insert(n).second) n = names.fresh(base);
    return n;
  }

  Expr expr(const Expr &e) {
    if (!e.defined()) return e;
    ExprNode n = *e;
    for (Expr &a : n.args) a = expr(a);
    switch (n.kind) {
    case Ek::Sum:
    case Ek::Prod: {
      std::string fresh = pick(n.name);
      if (fresh != n.name) {
        n.args[2] = subst(n.args[2], n.name, var(fresh));
        n.name = fresh;
      }
      n.args[2] = expr_under(n.args[2]);
      return make_expr(std::move(n));
    }
    case Ek::ArrayGen:
    case Ek::Let: {
      std::string fresh = pick(n.name);
      if (fresh != n.name) {
        n.args[1] = subst(n.args[1], n.name, var(fresh));
        n.name = fresh;
      }
      n.args[1] = expr_under(n.args[1]);
      return make_expr(std::move(n));
    }
    default:
      return make_expr(std::move(n));
    }
  }

  // args were already processed; only the binder body needs a re-walk for
  // nested binders. Processing twice is harmless (idempotent) but wasteful;
  // keep it simple at this scale.
  Expr expr_under(const Expr &e) { return expr(e); }

  Measure measure(const Measure &m) {
    MeasureNode n = *m;
    switch (n.kind) {
    case Mk::Ret:
      n.e = expr(n.e);
      break;
    case Mk::Weight:
      n.e = expr(n.e);
      n.m1 = measure(n.m1);
      break;
    case Mk::Bind: {
      n.m1 = measure(n.m1);
      std::string fresh = pick(n.name);
      if (fresh != n.name) {
        n.m2 = subst(n.m2, n.name, var(fresh));
        n.name = fresh;
      }
      n.m2 = measure(n.m2);
      break;
    }
    case Mk::Plate: {
      n.e = expr(n.e);
      std::string fresh = pick(n.name);
      if (fresh != n.name) {
        n.m1 = subst(n.m1, n.name, var(fresh));
        n.name = fresh;
      }
      n.m1 = measure(n.m1);
      break;
    }
    case Mk::Prim:
      for (Expr &p : n.params) p = expr(p);
      break;
    }
    return make_measure(std::move(n));
  }
};

} // namespace simp_detail

inline Program uniquify_binders(const Program &p) {
  simp_detail::Uniquify u;
  for (const Param &param : p.params) u.seen.insert(param.name);
  Program out = p;
  if (p.is_measure())
    out.body = u.measure(p.measure_body());
  else
    out.body = u.expr(p.expr_body());
  return out;
}

// ----- Dirichlet expansion -------------------------------------------------------
// dirichlet(alpha) of size m becomes m-1 stick-breaking Beta draws followed
// by the deterministic stick array. The Beta parameters are the classical
// ones: p[i] ~ Beta(sum_{k>i} alpha[k], alpha[i]).

inline Measure expand_dirichlet(const Measure &m, NameGen &names) {
  MeasureNode n = *m;
  switch (n.kind) {
  case Mk::Ret:
    return m;
  case Mk::Weight:
    n.m1 = expand_dirichlet(n.m1, names);
    return make_measure(std::move(n));
  case Mk::Bind:
    n.m1 = expand_dirichlet(n.m1, names);
    n.m2 = expand_dirichlet(n.m2, names);
    return make_measure(std::move(n));
  case Mk::Plate:
    n.m1 = expand_dirichlet(n.m1, names);
    return make_measure(std::move(n));
  case Mk::Prim: {
    if (n.dist != Dist::Dirichlet) return m;
    Expr alpha = n.params[0];
    Expr sz = canon(size_of(alpha));
    if (is_num(sz, 1)) return ret(array_lit({num(1)}));
    std::string p = names.fresh("sb");
    std::string i = names.fresh("sbi");
    std::string k = names.fresh("sbk");
    std::string j = names.fresh("sbj");
    Expr m1 = canon(sub(sz, num(1)));       // number of sticks
    Expr a = sum_(k, add(var(i), num(1)), canon(sub(sz, num(1))), index(alpha, var(k)));
    Expr b = index(alpha, var(i));
    Measure sticks = plate(m1, i, beta_m(a, b));
    Expr prefix = prod_(k, num(0), sub(var(j), num(1)), index(var(p), var(k)));
    Expr last = pw(cmp(CmpOp::Lt, var(j), m1), sub(num(1), index(var(p), var(j))), num(1));
    Expr theta = array_gen(j, sz, mul(prefix, last));
    return bind(std::move(sticks), p, ret(theta));
  }
  }
  return m;
}

inline Program expand_dirichlet(const Program &p, NameGen &names) {
  if (!p.is_measure()) return p;
  Program out = p;
  out.body = expand_dirichlet(p.measure_body(), names);
  return out;
}

// ----- latent-variable elimination ------------------------------------------------

namespace simp_detail {

struct Eliminator {
  Facts *facts;
  NameGen *names;
  std::vector<Expr> *sides;

  // Integrates acc over the (possibly product) space of var v. Fails softly.
  std::optional<Expr> integrate_space(Expr acc, const std::string &v, const Space &space) {
    std::string cur = v;
    struct Level {
      Expr residual;
      std::string ivar;
      Expr lo, hi;
    };
    std::vector<Level> levels;
    for (const SpaceBinder &b : space.binders) {
      std::string iv = names->fresh(b.ivar);
      std::string xv = names->fresh(cur);
      FactorResult fr = unproduct(acc, cur, iv, xv, b.lo, b.hi, *facts);
      if (contains_var(fr.residual, cur)) return std::nullopt; // could not separate
      levels.push_back({fr.residual, iv, b.lo, b.hi});
      acc = fr.body;
      cur = xv;
    }
    Expr inner;
    if (space.discrete) {
      inner = canon(sum_(cur, space.cell.lo, space.cell.hi, acc));
    } else {
      auto r = integrate_1d(acc, cur, space.cell, *facts, sides);
      if (!r) return std::nullopt;
      inner = *r;
    }
    for (std::size_t k = levels.size(); k-- > 0;) {
      const Level &L = levels[k];
      inner = canon(mul(L.residual, prod_(L.ivar, L.lo, L.hi, inner)));
    }
    return inner;
  }

  // Pushes the integral over v inward, accumulating v-dependent scale
  // weights until only v-free structure remains, then integrates.
  std::optional<Lin> push(const std::string &v, const Space &space, const Lin &node, Expr acc) {
    switch (node->kind) {
    case Lk::Scale: {
      if (contains_var(node->e, v))
        return push(v, space, node->children[0], canon(mul(acc, node->e)));
      auto inner = push(v, space, node->children[0], std::move(acc));
      if (!inner) return std::nullopt;
      return lin_scale(node->e, *inner);
    }
    case Lk::Integral: {
      if (lin_contains_var(node, v) || node->v == v) {
        // The other integral's bounds must not mention v, and the swap
        // needs the body push to succeed.
        for (const SpaceBinder &b : node->space.binders)
          if (contains_var(b.lo, v) || contains_var(b.hi, v)) return std::nullopt;
        auto in_cell = [&](const Expr &e) { return e.defined() && contains_var(e, v); };
        if (in_cell(node->space.cell.lo) || in_cell(node->space.cell.hi)) return std::nullopt;
        auto inner = push(v, space, node->children[0], std::move(acc));
        if (!inner) return std::nullopt;
        return lin_integral(node->v, node->space, *inner);
      }
      // v is gone below: integrate acc here and keep the subtree.
      auto w = integrate_space(std::move(acc), v, space);
      if (!w) return std::nullopt;
      return lin_scale(*w, node);
    }
    case Lk::SumOf: {
      std::vector<Lin> parts;
      for (const Lin &c : node->children) {
        auto r = push(v, space, c, acc);
        if (!r) return std::nullopt;
        parts.push_back(*r);
      }
      return lin_sum(std::move(parts));
    }
    case Lk::Branch: {
      if (contains_var(node->e, v)) return std::nullopt;
      auto t = push(v, space, node->children[0], acc);
      auto f = push(v, space, node->children[1], acc);
      if (!t || !f) return std::nullopt;
      return lin_branch(node->e, *t, *f);
    }
    case Lk::Hole: {
      if (contains_var(node->e, v)) return std::nullopt;
      auto w = integrate_space(std::move(acc), v, space);
      if (!w) return std::nullopt;
      return lin_scale(*w, node);
    }
    }
    return std::nullopt;
  }

  Lin eliminate(const Lin &node, const std::vector<Expr> &hole_args) {
    LinNode n = *node;
    for (Lin &c : n.children) c = eliminate(c, hole_args);
    Lin cur = make_lin(std::move(n));
    if (cur->kind != Lk::Integral) return cur;
    bool latent = true;
    for (const Expr &arg : hole_args)
      if (contains_var(arg, cur->v)) latent = false;
    if (!latent) return cur;
    auto r = push(cur->v, cur->space, cur->children[0], num(1));
    return r ? *r : cur;
  }
};

} // namespace simp_detail

// Eliminates every latent integration variable it can (those not free in
// any hole argument), innermost first; failures leave nodes unchanged.
inline Lin eliminate_latents(const Lin &l, Facts &facts, NameGen &names,
                             std::vector<Expr> &sides) {
  simp_detail::Eliminator el{&facts, &names, &sides};
  Lin cur = l;
  for (int pass = 0; pass < 8; ++pass) {
    std::vector<Expr> hole_args;
    lin_hole_args(cur, hole_args);
    Lin next = el.eliminate(cur, hole_args);
    if (next == cur) break;
    bool same = to_string(next) == to_string(cur);
    cur = next;
    if (same) break;
  }
  if (!lin_conforms(cur)) throw SimplifyDiag("elimination broke grammar conformance");
  return cur;
}

// ----- conversion back to a program -----------------------------------------------

struct UnrecognizedDensity : SimplifyDiag {
  explicit UnrecognizedDensity(const std::string &m) : SimplifyDiag(m) {}
};

namespace simp_detail {

struct FromLinear {
  Facts *facts;
  NameGen *names;
  std::vector<Expr> *sides;

  // Returns the reconstructed measure plus a floated-out weight.
  std::pair<Measure, Expr> convert(const Lin &node) {
    switch (node->kind) {
    case Lk::Hole:
      return {ret(node->e), num(1)};
    case Lk::Scale: {
      auto [m, w] = convert(node->children[0]);
      return {m, canon(mul(node->e, w))};
    }
    case Lk::Integral:
      return convert_integral(node);
    case Lk::SumOf:
    case Lk::Branch:
      throw UnrecognizedDensity("additive measure structure is not reconstructible");
    }
    throw UnrecognizedDensity("bad linear node");
  }

  std::pair<Measure, Expr> convert_integral(const Lin &node) {
    auto [inner, w] = convert(node->children[0]);
    const std::string &v = node->v;
    const Space &space = node->space;

    if (space.binders.empty() && !space.discrete) {
      auto rec = recognize_density(w, v, space.cell, *facts);
      if (!rec) throw UnrecognizedDensity("no density found for '" + v + "'");
      take_sides(*rec);
      return {bind(prim(rec->dist, rec->params), v, inner), rec->leftover};
    }

    if (space.binders.empty()) {
      // Discrete outcome: any non-negative weight on a finite support is an
      // (unnormalized) categorical mass.
      if (!is_num(space.cell.lo, 0))
        throw UnrecognizedDensity("discrete support must start at 0");
      Expr count = canon(add(space.cell.hi, num(1)));
      Expr warr = array_gen(v, count, w);
      return {bind(categorical_m(warr), v, inner), num(1)};
    }

    // Array variable: factor per element, recognize the scalar density,
    // and rebuild the plate chain.
    std::string cur = v;
    Expr acc = w;
    struct Level {
      Expr residual;
      std::string ivar;
      Expr lo, hi;
    };
    std::vector<Level> levels;
    for (const SpaceBinder &b : space.binders) {
      std::string iv = names->fresh(b.ivar);
      std::string xv = names->fresh(cur);
      FactorResult fr = unproduct(acc, cur, iv, xv, b.lo, b.hi, *facts);
      if (contains_var(fr.residual, cur))
        throw UnrecognizedDensity("array density for '" + v + "' does not factor");
      if (!is_num(b.lo, 0)) throw UnrecognizedDensity("plate ranges must start at 0");
      levels.push_back({fr.residual, iv, b.lo, b.hi});
      acc = fr.body;
      cur = xv;
    }

    Measure elem;
    Expr leftover;
    if (space.discrete) {
      Expr count = canon(add(space.cell.hi, num(1)));
      Expr warr = array_gen(cur, count, acc);
      elem = categorical_m(warr);
      leftover = num(1);
    } else {
      auto rec = recognize_density(acc, cur, space.cell, *facts);
      if (!rec) throw UnrecognizedDensity("no per-element density for '" + v + "'");
      take_sides(*rec);
      elem = prim(rec->dist, rec->params);
      leftover = rec->leftover;
    }

    // Rebuild plates innermost-out, renaming indices back to the original
    // plate names when unambiguous.
    Measure chain = elem;
    for (std::size_t k = levels.size(); k-- > 0;) {
      const Level &L = levels[k];
      Expr size = canon(add(L.hi, num(1)));
      std::string want = space.binders[k].ivar;
      std::string use = L.ivar;
      if (!contains_var_any(chain, leftover, want)) {
        chain = subst(chain, use, var(want));
        leftover = subst(leftover, use, var(want));
        use = want;
      }
      chain = plate(size, use, chain);
      leftover = canon(mul(L.residual, prod_(use, L.lo, L.hi, leftover)));
    }
    return {bind(chain, v, inner), leftover};
  }

  static bool contains_var_any(const Measure &m, const Expr &e, const std::string &v) {
    return free_vars(m).count(v) > 0 || contains_var(e, v);
  }

  void take_sides(const Recognized &r) {
    for (const Expr &sc : r.side_conditions) sides->push_back(sc);
  }
};

} // namespace simp_detail

inline std::pair<Measure, Expr> from_linear(const Lin &l, Facts &facts, NameGen &names,
                                            std::vector<Expr> &sides) {
  simp_detail::FromLinear fl{&facts, &names, &sides};
  return fl.convert(l);
}

// ----- the simplify driver ---------------------------------------------------------

struct SimplifyResult {
  Program program;
  bool changed = false;
  std::string diagnostic;        // set when simplification fell back
  std::vector<Expr> side_conditions;
  std::string dump_before, dump_after; // linear expressions, for --dump
};

inline Facts facts_of_params(const std::vector<Param> &params) {
  Facts f;
  for (const Param &p : params) {
    if (!p.type) continue;
    f.add_var(p.name, p.type->kind);
    if (p.type->kind == Tk::Array && p.type->a &&
        (p.type->a->kind == Tk::Rpos || p.type->a->kind == Tk::N))
      f.nonneg_arrays.insert(p.name);
  }
  return f;
}

inline SimplifyResult simplify(const Program &p0) {
  SimplifyResult out;
  out.program = p0;
  if (!p0.is_measure()) return out;
  try {
    typecheck(p0);
    NameGen names;
    Program p = uniquify_binders(p0);
    p = expand_dirichlet(p, names);
    typecheck(p);
    Facts facts = facts_of_params(p.params);
    Lin lin = to_linear(p.measure_body(), names, facts);
    out.dump_before = to_string(lin);
    std::vector<Expr> sides;
    Lin lin2 = eliminate_latents(lin, facts, names, sides);
    out.dump_after = to_string(lin2);
    auto [m, w] = from_linear(lin2, facts, names, sides);
    Program q;
    q.params = p.params;
    q.body = is_num(w, 1) ? m : weight(w, m);
    typecheck(q);
    check_closed(q);
    out.program = std::move(q);
    out.changed = !equal(out.program.measure_body(), p0.measure_body());
    out.side_conditions = std::move(sides);
  } catch (const std::exception &ex) {
    out.program = p0;
    out.changed = false;
    out.diagnostic = ex.what();
  }
  return out;
}

} // namespace hkir

#endif
