#ifndef HKIR_EXPR_HPP
#define HKIR_EXPR_HPP

#include "hkir/rational.hpp"

#include <cassert>
#include <memory>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// Pure expressions. Subtraction, division and sqrt are normalized away at
// construction (a-b = a + (-1)*b, a/b = a * b^-1, sqrt e = e^(1/2)), so the
// algebra passes only ever see this kernel.
enum class Ek {
  Num,      // exact rational literal
  Var,
  Pi,       // the circle constant, kept symbolic
  BoolLit,
  Add,      // n-ary
  Mul,      // n-ary
  Pow,      // [base, exponent]
  Exp,      // e^arg
  Log,      // natural log
  Cmp,      // [lhs, rhs] with CmpOp
  And,      // n-ary
  Or,       // n-ary
  Not,
  Piecewise, // [g0,v0, g1,v1, ..., default]; guards tried in order
  Sum,      // name=index, [lo, hi, body], inclusive bounds
  Prod,     // name=index, [lo, hi, body], inclusive bounds
  ArrayLit,
  ArrayGen, // name=index, [size, body]
  Index,    // [array, index]
  Size,     // [array]
  MkPair,   // [fst, snd]
  Fst,
  Snd,
  Let,      // name=var, [rhs, body]
  GammaF,   // Euler Gamma function (arises as a normalization constant)
  BetaF,    // Euler Beta function
  HistTerm, // histogram loop; name=index, [lo, hi], reducer payload
};

enum class CmpOp { Eq, Ne, Lt, Le };

struct Reducer;
struct ExprNode;

class Expr {
public:
  Expr() = default;
  explicit Expr(std::shared_ptr<const ExprNode> n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const ExprNode &operator*() const { return *node_; }
  const ExprNode *operator->() const { return node_.get(); }
  const ExprNode *get() const { return node_.get(); }
  bool same_object(const Expr &o) const { return node_ == o.node_; }

private:
  std::shared_ptr<const ExprNode> node_;
};

struct ExprNode {
  Ek kind;
  Rational num;
  bool bval = false;
  std::string name;
  CmpOp cmp = CmpOp::Eq;
  std::vector<Expr> args;
  std::shared_ptr<const Reducer> red;
};

// Reducer bodies of histogram loops. The loop index is free in Add bodies,
// Idx selectors and Split guards only.
enum class Rk { RAdd, RIdx, RSplit, RFanout, RNop };

struct Reducer {
  Rk kind;
  Expr e;          // RAdd body / RIdx selector / RSplit guard
  std::string ivar; // RIdx element binder
  Expr size;       // RIdx array size (index-free in the loop variable)
  std::shared_ptr<const Reducer> r1, r2; // RIdx inner / RSplit,RFanout children
};
using ReducerPtr = std::shared_ptr<const Reducer>;

inline Expr make_expr(ExprNode n) {
  return Expr(std::make_shared<const ExprNode>(std::move(n)));
}

inline Expr num(Rational q) {
  ExprNode n;
  n.kind = Ek::Num;
  n.num = std::move(q);
  return make_expr(std::move(n));
}
inline Expr num(long v) { return num(Rational(v)); }

inline Expr var(std::string name) {
  ExprNode n;
  n.kind = Ek::Var;
  n.name = std::move(name);
  return make_expr(std::move(n));
}

inline Expr pi_const() {
  ExprNode n;
  n.kind = Ek::Pi;
  return make_expr(std::move(n));
}

inline Expr boolean(bool b) {
  ExprNode n;
  n.kind = Ek::BoolLit;
  n.bval = b;
  return make_expr(std::move(n));
}

inline Expr nary(Ek k, std::vector<Expr> args) {
  assert(!args.empty());
  if (args.size() == 1) return args[0];
  ExprNode n;
  n.kind = k;
  n.args = std::move(args);
  return make_expr(std::move(n));
}

inline Expr add(std::vector<Expr> args) { return nary(Ek::Add, std::move(args)); }
inline Expr add(Expr a, Expr b) { return add({std::move(a), std::move(b)}); }
inline Expr mul(std::vector<Expr> args) { return nary(Ek::Mul, std::move(args)); }
inline Expr mul(Expr a, Expr b) { return mul({std::move(a), std::move(b)}); }

inline Expr pow_(Expr base, Expr e) {
  ExprNode n;
  n.kind = Ek::Pow;
  n.args = {std::move(base), std::move(e)};
  return make_expr(std::move(n));
}
inline Expr neg(Expr a) { return mul(num(-1), std::move(a)); }
inline Expr sub(Expr a, Expr b) { return add(std::move(a), neg(std::move(b))); }
inline Expr div(Expr a, Expr b) { return mul(std::move(a), pow_(std::move(b), num(-1))); }
inline Expr sqrt_(Expr a) { return pow_(std::move(a), num(Rational(1, 2))); }

inline Expr unary(Ek k, Expr a) {
  ExprNode n;
  n.kind = k;
  n.args = {std::move(a)};
  return make_expr(std::move(n));
}
inline Expr exp_(Expr a) { return unary(Ek::Exp, std::move(a)); }
inline Expr log_(Expr a) { return unary(Ek::Log, std::move(a)); }
inline Expr not_(Expr a) { return unary(Ek::Not, std::move(a)); }
inline Expr fst(Expr a) { return unary(Ek::Fst, std::move(a)); }
inline Expr snd(Expr a) { return unary(Ek::Snd, std::move(a)); }
inline Expr size_of(Expr a) { return unary(Ek::Size, std::move(a)); }
inline Expr gamma_fn(Expr a) { return unary(Ek::GammaF, std::move(a)); }

inline Expr beta_fn(Expr a, Expr b) {
  ExprNode n;
  n.kind = Ek::BetaF;
  n.args = {std::move(a), std::move(b)};
  return make_expr(std::move(n));
}

inline Expr cmp(CmpOp op, Expr a, Expr b) {
  ExprNode n;
  n.kind = Ek::Cmp;
  n.cmp = op;
  n.args = {std::move(a), std::move(b)};
  return make_expr(std::move(n));
}
inline Expr eq(Expr a, Expr b) { return cmp(CmpOp::Eq, std::move(a), std::move(b)); }
inline Expr and_(Expr a, Expr b) { return nary(Ek::And, {std::move(a), std::move(b)}); }
inline Expr or_(Expr a, Expr b) { return nary(Ek::Or, {std::move(a), std::move(b)}); }

// args = [g0,v0,...,default]
inline Expr piecewise(std::vector<Expr> args) {
  assert(args.size() % 2 == 1);
  if (args.size() == 1) return args[0];
  ExprNode n;
  n.kind = Ek::Piecewise;
  n.args = std::move(args);
  return make_expr(std::move(n));
}
// Single guard with explicit otherwise-value.
inline Expr pw(Expr guard, Expr then, Expr otherwise) {
  return piecewise({std::move(guard), std::move(then), std::move(otherwise)});
}

inline Expr loop(Ek k, std::string idx, Expr lo, Expr hi, Expr body) {
  ExprNode n;
  n.kind = k;
  n.name = std::move(idx);
  n.args = {std::move(lo), std::move(hi), std::move(body)};
  return make_expr(std::move(n));
}
inline Expr sum_(std::string i, Expr lo, Expr hi, Expr body) {
  return loop(Ek::Sum, std::move(i), std::move(lo), std::move(hi), std::move(body));
}
inline Expr prod_(std::string i, Expr lo, Expr hi, Expr body) {
  return loop(Ek::Prod, std::move(i), std::move(lo), std::move(hi), std::move(body));
}

inline Expr array_lit(std::vector<Expr> elems) {
  ExprNode n;
  n.kind = Ek::ArrayLit;
  n.args = std::move(elems);
  return make_expr(std::move(n));
}

inline Expr array_gen(std::string idx, Expr size, Expr body) {
  ExprNode n;
  n.kind = Ek::ArrayGen;
  n.name = std::move(idx);
  n.args = {std::move(size), std::move(body)};
  return make_expr(std::move(n));
}

inline Expr index(Expr arr, Expr i) {
  ExprNode n;
  n.kind = Ek::Index;
  n.args = {std::move(arr), std::move(i)};
  return make_expr(std::move(n));
}

inline Expr mk_pair(Expr a, Expr b) {
  ExprNode n;
  n.kind = Ek::MkPair;
  n.args = {std::move(a), std::move(b)};
  return make_expr(std::move(n));
}

inline Expr let_(std::string x, Expr rhs, Expr body) {
  ExprNode n;
  n.kind = Ek::Let;
  n.name = std::move(x);
  n.args = {std::move(rhs), std::move(body)};
  return make_expr(std::move(n));
}

inline Expr hist_term(std::string j, Expr lo, Expr hi, ReducerPtr r) {
  ExprNode n;
  n.kind = Ek::HistTerm;
  n.name = std::move(j);
  n.args = {std::move(lo), std::move(hi)};
  n.red = std::move(r);
  return make_expr(std::move(n));
}

inline ReducerPtr red_add(Expr body) {
  Reducer r;
  r.kind = Rk::RAdd;
  r.e = std::move(body);
  return std::make_shared<const Reducer>(std::move(r));
}
inline ReducerPtr red_idx(std::string ivar, Expr size, Expr selector, ReducerPtr inner) {
  Reducer r;
  r.kind = Rk::RIdx;
  r.ivar = std::move(ivar);
  r.size = std::move(size);
  r.e = std::move(selector);
  r.r1 = std::move(inner);
  return std::make_shared<const Reducer>(std::move(r));
}
inline ReducerPtr red_split(Expr guard, ReducerPtr left, ReducerPtr right) {
  Reducer r;
  r.kind = Rk::RSplit;
  r.e = std::move(guard);
  r.r1 = std::move(left);
  r.r2 = std::move(right);
  return std::make_shared<const Reducer>(std::move(r));
}
inline ReducerPtr red_fanout(ReducerPtr left, ReducerPtr right) {
  Reducer r;
  r.kind = Rk::RFanout;
  r.r1 = std::move(left);
  r.r2 = std::move(right);
  return std::make_shared<const Reducer>(std::move(r));
}
inline ReducerPtr red_nop() {
  Reducer r;
  r.kind = Rk::RNop;
  return std::make_shared<const Reducer>(std::move(r));
}

inline bool is_num(const Expr &e) { return e.defined() && e->kind == Ek::Num; }
inline bool is_num(const Expr &e, const Rational &q) { return is_num(e) && e->num == q; }
inline bool is_num(const Expr &e, long q) { return is_num(e, Rational(q)); }
inline bool is_var(const Expr &e, const std::string &n) {
  return e.defined() && e->kind == Ek::Var && e->name == n;
}

// ----- structural comparison ------------------------------------------------

int cmp_expr(const Expr &a, const Expr &b);

inline int cmp_reducer(const ReducerPtr &a, const ReducerPtr &b) {
  if (a == b) return 0;
  if (!a || !b) return a ? 1 : -1;
  if (a->kind != b->kind) return a->kind < b->kind ? -1 : 1;
  if (int c = a->ivar.compare(b->ivar)) return c < 0 ? -1 : 1;
  if (int c = cmp_expr(a->e, b->e)) return c;
  if (int c = cmp_expr(a->size, b->size)) return c;
  if (int c = cmp_reducer(a->r1, b->r1)) return c;
  return cmp_reducer(a->r2, b->r2);
}

inline int cmp_expr(const Expr &a, const Expr &b) {
  if (a.get() == b.get()) return 0;
  if (!a.defined() || !b.defined()) return a.defined() ? 1 : -1;
  if (a->kind != b->kind) return a->kind < b->kind ? -1 : 1;
  switch (a->kind) {
  case Ek::Num:
    if (a->num == b->num) return 0;
    return a->num < b->num ? -1 : 1;
  case Ek::BoolLit:
    if (a->bval == b->bval) return 0;
    return b->bval ? -1 : 1;
  default:
    break;
  }
  if (a->kind == Ek::Cmp && a->cmp != b->cmp) return a->cmp < b->cmp ? -1 : 1;
  if (int c = a->name.compare(b->name)) return c < 0 ? -1 : 1;
  if (a->args.size() != b->args.size()) return a->args.size() < b->args.size() ? -1 : 1;
  for (std::size_t i = 0; i < a->args.size(); ++i)
    if (int c = cmp_expr(a->args[i], b->args[i])) return c;
  if (a->kind == Ek::HistTerm) return cmp_reducer(a->red, b->red);
  return 0;
}

inline bool equal(const Expr &a, const Expr &b) { return cmp_expr(a, b) == 0; }

// ----- variable occurrence and substitution ---------------------------------

namespace detail {

inline void binder_views(const ExprNode &n, std::vector<std::pair<const std::string *, const Expr *>> &out) {
  // (binder name, subterm where it is in scope); other args have no binder.
  switch (n.kind) {
  case Ek::Sum:
  case Ek::Prod:
    out.push_back({&n.name, &n.args[2]});
    break;
  case Ek::ArrayGen:
  case Ek::Let:
    out.push_back({&n.name, &n.args[1]});
    break;
  default:
    break;
  }
}

} // namespace detail

inline void free_vars_into(const Expr &e, std::set<std::string> &out,
                           std::set<std::string> &bound);

inline void free_vars_reducer(const ReducerPtr &r, const std::string &j,
                              std::set<std::string> &out, std::set<std::string> &bound) {
  if (!r) return;
  switch (r->kind) {
  case Rk::RAdd:
    free_vars_into(r->e, out, bound);
    break;
  case Rk::RIdx: {
    free_vars_into(r->e, out, bound);
    free_vars_into(r->size, out, bound);
    bool fresh = bound.insert(r->ivar).second;
    free_vars_reducer(r->r1, j, out, bound);
    if (fresh) bound.erase(r->ivar);
    break;
  }
  case Rk::RSplit:
    free_vars_into(r->e, out, bound);
    free_vars_reducer(r->r1, j, out, bound);
    free_vars_reducer(r->r2, j, out, bound);
    break;
  case Rk::RFanout:
    free_vars_reducer(r->r1, j, out, bound);
    free_vars_reducer(r->r2, j, out, bound);
    break;
  case Rk::RNop:
    break;
  }
}

inline void free_vars_into(const Expr &e, std::set<std::string> &out,
                           std::set<std::string> &bound) {
  if (!e.defined()) return;
  const ExprNode &n = *e;
  if (n.kind == Ek::Var) {
    if (!bound.count(n.name)) out.insert(n.name);
    return;
  }
  std::vector<std::pair<const std::string *, const Expr *>> binders;
  detail::binder_views(n, binders);
  if (n.kind == Ek::HistTerm) {
    free_vars_into(n.args[0], out, bound);
    free_vars_into(n.args[1], out, bound);
    bool fresh = bound.insert(n.name).second;
    free_vars_reducer(n.red, n.name, out, bound);
    if (fresh) bound.erase(n.name);
    return;
  }
  for (const Expr &a : n.args) {
    bool is_binder_scope = false;
    for (auto &[bn, scope] : binders)
      if (scope == &a) {
        bool fresh = bound.insert(*bn).second;
        free_vars_into(a, out, bound);
        if (fresh) bound.erase(*bn);
        is_binder_scope = true;
      }
    if (!is_binder_scope) free_vars_into(a, out, bound);
  }
}

inline std::set<std::string> free_vars(const Expr &e) {
  std::set<std::string> out, bound;
  free_vars_into(e, out, bound);
  return out;
}

inline bool contains_var(const Expr &e, const std::string &v) {
  if (!e.defined()) return false;
  const ExprNode &n = *e;
  if (n.kind == Ek::Var) return n.name == v;
  std::vector<std::pair<const std::string *, const Expr *>> binders;
  detail::binder_views(n, binders);
  if (n.kind == Ek::HistTerm) {
    if (contains_var(n.args[0], v) || contains_var(n.args[1], v)) return true;
    if (n.name == v) return false;
    std::set<std::string> fv, bound{n.name};
    free_vars_reducer(n.red, n.name, fv, bound);
    return fv.count(v) > 0;
  }
  for (const Expr &a : n.args) {
    bool shadowed = false;
    for (auto &[bn, scope] : binders)
      if (scope == &a && *bn == v) shadowed = true;
    if (!shadowed && contains_var(a, v)) return true;
  }
  return false;
}

// Deterministic fresh-name source; names with '$' are reserved for the
// compiler (the surface parser rejects them).
class NameGen {
public:
  std::string fresh(const std::string &base) {
    return base + "$" + std::to_string(counter_++);
  }
  void reset(unsigned c = 0) { counter_ = c; }

private:
  unsigned counter_ = 0;
};

Expr subst(const Expr &e, const std::string &v, const Expr &replacement);

inline ReducerPtr subst_reducer(const ReducerPtr &r, const std::string &v, const Expr &rep) {
  if (!r) return r;
  Reducer out = *r;
  switch (r->kind) {
  case Rk::RAdd:
    out.e = subst(r->e, v, rep);
    break;
  case Rk::RIdx:
    out.e = subst(r->e, v, rep);
    out.size = subst(r->size, v, rep);
    if (r->ivar != v) out.r1 = subst_reducer(r->r1, v, rep);
    break;
  case Rk::RSplit:
    out.e = subst(r->e, v, rep);
    out.r1 = subst_reducer(r->r1, v, rep);
    out.r2 = subst_reducer(r->r2, v, rep);
    break;
  case Rk::RFanout:
    out.r1 = subst_reducer(r->r1, v, rep);
    out.r2 = subst_reducer(r->r2, v, rep);
    break;
  case Rk::RNop:
    break;
  }
  return std::make_shared<const Reducer>(std::move(out));
}

inline Expr subst(const Expr &e, const std::string &v, const Expr &replacement) {
  if (!e.defined() || !contains_var(e, v)) return e;
  const ExprNode &n = *e;
  if (n.kind == Ek::Var) return n.name == v ? replacement : e;

  ExprNode out = n;
  // Capture check: binders whose name occurs free in the replacement get
  // renamed before descending.
  auto rename_binder_if_needed = [&](ExprNode &m, std::vector<Expr *> scoped) {
    if (m.name.empty() || m.name == v) return;
    if (!free_vars(replacement).count(m.name)) return;
    static thread_local unsigned rename_counter = 0;
    std::string fresh = m.name + "$r" + std::to_string(rename_counter++);
    Expr fv = var(fresh);
    for (Expr *s : scoped) *s = subst(*s, m.name, fv);
    if (m.kind == Ek::HistTerm) m.red = subst_reducer(m.red, m.name, fv);
    m.name = fresh;
  };

  switch (n.kind) {
  case Ek::Sum:
  case Ek::Prod:
    out.args[0] = subst(n.args[0], v, replacement);
    out.args[1] = subst(n.args[1], v, replacement);
    if (n.name != v) {
      rename_binder_if_needed(out, {&out.args[2]});
      out.args[2] = subst(out.args[2], v, replacement);
    }
    return make_expr(std::move(out));
  case Ek::ArrayGen:
  case Ek::Let:
    out.args[0] = subst(n.args[0], v, replacement);
    if (n.name != v) {
      rename_binder_if_needed(out, {&out.args[1]});
      out.args[1] = subst(out.args[1], v, replacement);
    }
    return make_expr(std::move(out));
  case Ek::HistTerm:
    out.args[0] = subst(n.args[0], v, replacement);
    out.args[1] = subst(n.args[1], v, replacement);
    if (n.name != v) {
      rename_binder_if_needed(out, {});
      out.red = subst_reducer(out.red, v, replacement);
    }
    return make_expr(std::move(out));
  default:
    for (Expr &a : out.args) a = subst(a, v, replacement);
    return make_expr(std::move(out));
  }
}

} // namespace hkir

#endif
