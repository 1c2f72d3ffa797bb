#ifndef HKIR_LINEAR_HPP
#define HKIR_LINEAR_HPP

#include "hkir/algebra.hpp"
#include "hkir/typecheck.hpp"

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// Expressions patently linear in an opaque integrand hole: scaling, finite
// branching, 1-D and product-space integrals, and discrete sums. Nothing
// else may wrap a linear expression, which is what licenses the symbolic
// manipulations of latent-variable elimination.

struct SpaceBinder {
  std::string ivar;
  Expr lo, hi; // inclusive
};

// Integration space: zero or more nested index binders around a base cell.
// An empty binder list is a scalar integral; `discrete` switches the cell
// from an interval to an inclusive integer range.
struct Space {
  std::vector<SpaceBinder> binders;
  Interval cell;
  bool discrete = false;
};

enum class Lk { Hole, Scale, SumOf, Branch, Integral };

struct LinNode;
using Lin = std::shared_ptr<const LinNode>;

struct LinNode {
  Lk kind;
  Expr e;                    // Hole argument / Scale weight / Branch guard
  std::vector<Lin> children; // Scale,Integral: 1; Branch: 2; SumOf: n
  std::string v;             // Integral bound variable
  Space space;               // Integral only
};

inline Lin make_lin(LinNode n) { return std::make_shared<const LinNode>(std::move(n)); }

inline Lin lin_hole(Expr arg) {
  LinNode n;
  n.kind = Lk::Hole;
  n.e = std::move(arg);
  return make_lin(std::move(n));
}

inline Lin lin_scale(Expr w, Lin body) {
  if (is_num(w, 1)) return body;
  LinNode n;
  n.kind = Lk::Scale;
  n.e = std::move(w);
  n.children = {std::move(body)};
  return make_lin(std::move(n));
}

inline Lin lin_sum(std::vector<Lin> parts) {
  if (parts.size() == 1) return parts[0];
  LinNode n;
  n.kind = Lk::SumOf;
  n.children = std::move(parts);
  return make_lin(std::move(n));
}

inline Lin lin_branch(Expr guard, Lin t, Lin f) {
  LinNode n;
  n.kind = Lk::Branch;
  n.e = std::move(guard);
  n.children = {std::move(t), std::move(f)};
  return make_lin(std::move(n));
}

inline Lin lin_integral(std::string v, Space space, Lin body) {
  LinNode n;
  n.kind = Lk::Integral;
  n.v = std::move(v);
  n.space = std::move(space);
  n.children = {std::move(body)};
  return make_lin(std::move(n));
}

// ----- utility ------------------------------------------------------------------

inline void lin_hole_args(const Lin &l, std::vector<Expr> &out) {
  if (l->kind == Lk::Hole) {
    out.push_back(l->e);
    return;
  }
  for (const Lin &c : l->children) lin_hole_args(c, out);
}

inline bool lin_contains_var(const Lin &l, const std::string &v) {
  if (l->e.defined() && contains_var(l->e, v)) return true;
  if (l->kind == Lk::Integral) {
    for (const SpaceBinder &b : l->space.binders)
      if (contains_var(b.lo, v) || contains_var(b.hi, v)) return true;
    if (l->space.cell.lo.defined() && contains_var(l->space.cell.lo, v)) return true;
    if (l->space.cell.hi.defined() && contains_var(l->space.cell.hi, v)) return true;
  }
  for (const Lin &c : l->children)
    if (lin_contains_var(c, v)) return true;
  return false;
}

// Grammar conformance (the Fig.-2 shape check run after construction and
// after every elimination step).
inline bool lin_conforms(const Lin &l) {
  switch (l->kind) {
  case Lk::Hole:
    return l->e.defined();
  case Lk::Scale:
    return l->children.size() == 1 && l->e.defined() && lin_conforms(l->children[0]);
  case Lk::SumOf:
    if (l->children.size() < 2) return false;
    for (const Lin &c : l->children)
      if (!lin_conforms(c)) return false;
    return true;
  case Lk::Branch:
    return l->children.size() == 2 && l->e.defined() && lin_conforms(l->children[0]) &&
           lin_conforms(l->children[1]);
  case Lk::Integral: {
    if (l->children.size() != 1 || l->v.empty()) return false;
    for (const SpaceBinder &b : l->space.binders)
      if (b.ivar.empty() || !b.lo.defined() || !b.hi.defined()) return false;
    if (l->space.discrete && (!l->space.cell.lo.defined() || !l->space.cell.hi.defined()))
      return false;
    return lin_conforms(l->children[0]);
  }
  }
  return false;
}

// ----- printing (for --dump simplify) --------------------------------------------

inline void print_lin(std::ostream &os, const Lin &l, int indent = 0) {
  auto pad = [&](int k) {
    for (int i = 0; i < k; ++i) os << ' ';
  };
  pad(indent);
  switch (l->kind) {
  case Lk::Hole:
    os << "(hole ";
    print_expr(os, l->e);
    os << ")\n";
    return;
  case Lk::Scale:
    os << "(scale ";
    print_expr(os, l->e);
    os << '\n';
    print_lin(os, l->children[0], indent + 2);
    pad(indent);
    os << ")\n";
    return;
  case Lk::SumOf:
    os << "(sum-of\n";
    for (const Lin &c : l->children) print_lin(os, c, indent + 2);
    pad(indent);
    os << ")\n";
    return;
  case Lk::Branch:
    os << "(branch ";
    print_expr(os, l->e);
    os << '\n';
    print_lin(os, l->children[0], indent + 2);
    print_lin(os, l->children[1], indent + 2);
    pad(indent);
    os << ")\n";
    return;
  case Lk::Integral: {
    os << (l->space.discrete ? "(dsum " : "(integral ") << l->v << " (space";
    for (const SpaceBinder &b : l->space.binders) {
      os << " (" << b.ivar << ' ';
      print_expr(os, b.lo);
      os << ' ';
      print_expr(os, b.hi);
      os << ')';
    }
    os << " (cell ";
    if (l->space.cell.lo.defined()) print_expr(os, l->space.cell.lo); else os << "-inf";
    os << ' ';
    if (l->space.cell.hi.defined()) print_expr(os, l->space.cell.hi); else os << "+inf";
    os << "))\n";
    print_lin(os, l->children[0], indent + 2);
    pad(indent);
    os << ")\n";
    return;
  }
  }
}

inline std::string to_string(const Lin &l) {
  std::ostringstream os;
  print_lin(os, l);
  return os.str();
}

// ----- to_linear (program -> patently linear expression) --------------------------

struct SimplifyDiag : std::runtime_error {
  explicit SimplifyDiag(const std::string &m) : std::runtime_error(m) {}
};

namespace lin_detail {

// e indexed by every binder in B, outermost first.
inline Expr index_by(const Expr &e, const std::vector<SpaceBinder> &B) {
  Expr out = e;
  for (const SpaceBinder &b : B) out = index(out, var(b.ivar));
  return out;
}

// ary(B, e): nested array comprehension with the binders of B.
inline Expr ary_by(const Expr &e, const std::vector<SpaceBinder> &B) {
  Expr out = e;
  for (std::size_t i = B.size(); i-- > 0;) {
    Expr n = canon(add({B[i].hi, neg(B[i].lo), num(1)}));
    out = array_gen(B[i].ivar, n, out);
  }
  return out;
}

// prod_B e: definite products over every binder of B.
inline Expr prod_by(const Expr &e, const std::vector<SpaceBinder> &B) {
  Expr out = e;
  for (std::size_t i = B.size(); i-- > 0;) out = prod_(B[i].ivar, B[i].lo, B[i].hi, out);
  return out;
}

struct ToLinear {
  NameGen *names;
  Facts *facts;

  Lin run(const Measure &m, std::vector<SpaceBinder> B, const std::string &hint) {
    const MeasureNode &n = *m;
    switch (n.kind) {
    case Mk::Ret:
      return lin_hole(ary_by(n.e, B));
    case Mk::Weight:
      return lin_scale(canon(prod_by(n.e, B)), run(n.m1, B, hint));
    case Mk::Bind: {
      Measure body = subst(n.m2, n.name, index_by(var(n.name), B));
      Lin inner = run(body, B, names->fresh(n.name));
      Lin outer = run(n.m1, B, n.name);
      return plug(outer, n.name, inner);
    }
    case Mk::Plate: {
      std::vector<SpaceBinder> B2 = B;
      B2.push_back({n.name, num(0), canon(sub(n.e, num(1)))});
      return run(n.m1, std::move(B2), hint);
    }
    case Mk::Prim: {
      std::string x = hint.empty() ? names->fresh("t") : hint;
      if (n.dist == Dist::Dirichlet)
        throw SimplifyDiag("dirichlet must be expanded before simplification");
      if (n.dist == Dist::Categorical) {
        // Discrete: sum over the support. Categorical weights denote an
        // unnormalized sum of point masses; samplers normalize at draw time.
        const Expr &w = n.params[0];
        Expr hi = canon(sub(size_of(w), num(1)));
        Expr elem = index_by(var(x), B);
        Expr mass = canon(prod_by(index(w, elem), B));
        Space sp;
        sp.binders = B;
        sp.discrete = true;
        sp.cell = {num(0), hi};
        // Support bounds must not depend on the space's own indices.
        for (const SpaceBinder &b : B)
          if (contains_var(hi, b.ivar))
            throw SimplifyDiag("categorical support depends on plate index");
        facts->nonneg.insert(x);
        if (!B.empty()) facts->nonneg_arrays.insert(x);
        return lin_integral(x, std::move(sp), lin_scale(mass, lin_hole(var(x))));
      }
      Expr elem = index_by(var(x), B);
      Expr dens = density_of(n.dist, n.params, elem);
      if (!dens.defined()) throw SimplifyDiag("unsupported primitive distribution");
      Space sp;
      sp.binders = B;
      sp.cell = interval_of(n.dist, n.params);
      if (n.dist == Dist::Beta || n.dist == Dist::Gamma) {
        facts->positive.insert(x);
        if (!B.empty()) facts->nonneg_arrays.insert(x);
      }
      return lin_integral(x, std::move(sp), lin_scale(canon(prod_by(dens, B)), lin_hole(var(x))));
    }
    }
    throw SimplifyDiag("bad measure");
  }

  // Replace every hole ĥ(arg) in `outer` by inner[x := arg].
  Lin plug(const Lin &outer, const std::string &x, const Lin &inner) {
    if (outer->kind == Lk::Hole) return subst_lin(inner, x, outer->e);
    LinNode n = *outer;
    for (Lin &c : n.children) c = plug(c, x, inner);
    return make_lin(std::move(n));
  }

  static Lin subst_lin(const Lin &l, const std::string &x, const Expr &rep) {
    LinNode n = *l;
    if (n.e.defined()) n.e = subst(n.e, x, rep);
    if (n.kind == Lk::Integral) {
      // Bounds stay canonical so that latent-variable detection sees
      // through shapes like size(ary(n, i, ...)).
      for (SpaceBinder &b : n.space.binders) {
        b.lo = canon(subst(b.lo, x, rep));
        b.hi = canon(subst(b.hi, x, rep));
      }
      if (n.space.cell.lo.defined()) n.space.cell.lo = canon(subst(n.space.cell.lo, x, rep));
      if (n.space.cell.hi.defined()) n.space.cell.hi = canon(subst(n.space.cell.hi, x, rep));
      if (n.v == x) throw SimplifyDiag("binder collision in to_linear");
    }
    for (Lin &c : n.children) c = subst_lin(c, x, rep);
    return make_lin(std::move(n));
  }
};

} // namespace lin_detail

// Converts a measure term into a patently linear expression. B starts empty;
// plate nesting grows it. The Facts gather positivity knowledge about bound
// variables for later side-condition discharge.
inline Lin to_linear(const Measure &m, NameGen &names, Facts &facts) {
  lin_detail::ToLinear tl{&names, &facts};
  Lin l = tl.run(m, {}, "");
  if (!lin_conforms(l)) throw SimplifyDiag("to_linear produced a non-conforming expression");
  return l;
}

} // namespace hkir

#endif
