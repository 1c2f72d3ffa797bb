#ifndef HKIR_CANON_HPP
#define HKIR_CANON_HPP

#include "hkir/expr.hpp"

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

namespace hkir {

// Canonicalization to a sum-of-products normal form.
//
// A term is  coeff * prod(base_k ^ expo_k) * exp(arg),  where coeff is an
// exact rational, bases are ordered atoms (variables, indexing, pi, prime
// radicals, loop nodes, piecewise, special functions, ...), exponents are
// either rationals or whole expressions, and at most one exp() factor
// remains per term (exp(a)*exp(b) fuses to exp(a+b), and c^e1 * c^e2 fuses
// to c^(e1+e2)). Rational bases are split into prime powers with the
// integer part of each power folded into the coefficient, which makes
// forms like sqrt(3/2) and sqrt(6)/2 identical.
//
// Guards normalize comparisons to `lhs - rhs (op) 0` with a sign-normalized
// left side, so syntactic permutations of the same test coincide.

struct Factor {
  Expr base;
  bool has_rat = true;
  Rational rexp;  // valid when has_rat
  Expr sexp;      // valid otherwise; canonical

  Expr expo_as_expr() const { return has_rat ? num(rexp) : sexp; }
};

struct Monomial {
  Rational coeff = 1;
  std::vector<Factor> factors; // sorted by base
  Expr exp_arg;                // undefined if absent

  bool is_rational() const { return factors.empty() && !exp_arg.defined(); }
};

// Normal form: sum of monomials with distinct skeletons, sorted.
using NF = std::vector<Monomial>;

Expr canon(const Expr &e);

namespace canon_detail {

inline int cmp_factor(const Factor &a, const Factor &b) {
  if (int c = cmp_expr(a.base, b.base)) return c;
  if (a.has_rat != b.has_rat) return a.has_rat ? -1 : 1;
  if (a.has_rat) {
    if (a.rexp == b.rexp) return 0;
    return a.rexp < b.rexp ? -1 : 1;
  }
  return cmp_expr(a.sexp, b.sexp);
}

// Skeleton comparison ignores the coefficient.
inline int cmp_skeleton(const Monomial &a, const Monomial &b) {
  if (a.factors.size() != b.factors.size())
    return a.factors.size() < b.factors.size() ? -1 : 1;
  for (std::size_t i = 0; i < a.factors.size(); ++i)
    if (int c = cmp_factor(a.factors[i], b.factors[i])) return c;
  return cmp_expr(a.exp_arg, b.exp_arg);
}

inline NF nf_num(Rational q) {
  if (q == 0) return {};
  Monomial m;
  m.coeff = std::move(q);
  return {m};
}

inline NF nf_atom(Expr base) {
  Monomial m;
  Factor f;
  f.base = std::move(base);
  f.rexp = 1;
  m.factors.push_back(std::move(f));
  return {m};
}

inline NF nf_add(const NF &a, const NF &b) {
  NF out;
  out.reserve(a.size() + b.size());
  std::size_t i = 0, j = 0;
  while (i < a.size() || j < b.size()) {
    int c = i == a.size() ? 1 : j == b.size() ? -1 : cmp_skeleton(a[i], b[j]);
    if (c < 0) {
      out.push_back(a[i++]);
    } else if (c > 0) {
      out.push_back(b[j++]);
    } else {
      Monomial m = a[i++];
      m.coeff += b[j++].coeff;
      if (m.coeff != 0) out.push_back(std::move(m));
    }
  }
  return out;
}

inline NF nf_scale(NF a, const Rational &q) {
  if (q == 0) return {};
  for (Monomial &m : a) m.coeff *= q;
  return a;
}

bool provably_nonneg_base(const Expr &e);
void mono_mul_rat_pow(Monomial &m, const Rational &base, const Rational &expo);

// Inserts a factor into the sorted factor list, merging exponents for equal
// bases. Rational bases with integer exponents fold into the coefficient;
// fractional powers of rational bases renormalize through the prime split.
inline void mono_insert(Monomial &m, Factor f) {
  if (f.has_rat && f.rexp == 0) return;
  if (f.has_rat && f.base->kind == Ek::Num && f.base->num != 0 && is_integer(f.rexp)) {
    m.coeff *= rat_pow(f.base->num, f.rexp.convert_to<long>());
    return;
  }
  // Bases are unique in the factor list; order and search by base alone.
  auto base_less = [](const Factor &x, const Factor &y) {
    return cmp_expr(x.base, y.base) < 0;
  };
  auto it = std::lower_bound(m.factors.begin(), m.factors.end(), f, base_less);
  if (it != m.factors.end() && cmp_expr(it->base, f.base) == 0) {
    // Merge exponents for the existing base.
    if (it->has_rat && f.has_rat) {
      Rational total = it->rexp + f.rexp;
      Expr base = it->base;
      m.factors.erase(it);
      if (total != 0) {
        if (base->kind == Ek::Num && base->num > 0) {
          mono_mul_rat_pow(m, base->num, total);
        } else {
          Factor g;
          g.base = std::move(base);
          g.rexp = total;
          mono_insert(m, std::move(g));
        }
      }
      return;
    }
    Expr sum = canon(add(it->expo_as_expr(), f.expo_as_expr()));
    if (is_num(sum)) {
      Expr base = it->base;
      m.factors.erase(it);
      if (!is_num(sum, 0)) {
        Factor g;
        g.base = std::move(base);
        g.rexp = sum->num;
        mono_insert(m, std::move(g));
      }
    } else {
      it->has_rat = false;
      it->sexp = sum;
      it->rexp = 0;
    }
    return;
  }
  m.factors.insert(it, std::move(f));
}

// Rational base ^ rational exponent: fold integer powers exactly; split the
// remainder into prime radicals with fractional exponents in (0,1).
inline void mono_mul_rat_pow(Monomial &m, const Rational &base, const Rational &expo) {
  if (base == 0) return; // caller handles 0 bases
  if (is_integer(expo)) {
    m.coeff *= rat_pow(base, expo.convert_to<long>());
    return;
  }
  Rational b = base;
  if (b < 0) {
    // Negative base with fractional exponent has no real canonical form;
    // keep it opaque.
    Factor f;
    f.base = num(b);
    f.rexp = expo;
    mono_insert(m, std::move(f));
    return;
  }
  auto handle = [&](const BigInt &n, bool inverted) {
    for (auto &[p, k] : factorize(n)) {
      Rational ex = expo * k;
      if (inverted) ex = -ex;
      // Split ex = whole + frac with frac in [0,1).
      BigInt nu = numer(ex), de = denom(ex);
      BigInt whole = nu / de;
      if (nu < 0 && nu % de != 0) whole -= 1;
      Rational frac = ex - Rational(whole);
      if (whole != 0) m.coeff *= rat_pow(Rational(p), whole.convert_to<long>());
      if (frac != 0) {
        Factor f;
        f.base = num(Rational(p));
        f.rexp = frac;
        mono_insert(m, std::move(f));
      }
    }
  };
  handle(numer(b), false);
  handle(denom(b), true);
}

inline Monomial mono_mul(const Monomial &a, const Monomial &b) {
  Monomial out = a;
  out.coeff *= b.coeff;
  for (const Factor &f : b.factors) mono_insert(out, f);
  if (b.exp_arg.defined()) {
    if (!out.exp_arg.defined())
      out.exp_arg = b.exp_arg;
    else
      out.exp_arg = canon(add(out.exp_arg, b.exp_arg));
    if (is_num(out.exp_arg, 0)) out.exp_arg = Expr();
  }
  return out;
}

inline NF nf_mul(const NF &a, const NF &b) {
  NF out;
  for (const Monomial &x : a)
    for (const Monomial &y : b) {
      Monomial m = mono_mul(x, y);
      if (m.coeff != 0) out = nf_add(out, NF{std::move(m)});
    }
  return out;
}

Expr nf_to_expr(const NF &nf);
Expr mono_to_expr(const Monomial &m);

inline NF nf_pow(const NF &base, const NF &expo);

} // namespace canon_detail

Expr canon_pow(const Expr &base, const Expr &expo);

// ----- positivity (structural; no typing facts) ------------------------------

namespace canon_detail {

inline bool provably_nonneg_base(const Expr &e) {
  const ExprNode &n = *e;
  switch (n.kind) {
  case Ek::Num:
    return n.num >= 0;
  case Ek::Pi:
  case Ek::Exp:
  case Ek::GammaF:
  case Ek::BetaF:
    return true;
  case Ek::Pow:
    return provably_nonneg_base(n.args[0]);
  case Ek::Mul: {
    for (const Expr &a : n.args)
      if (!provably_nonneg_base(a)) return false;
    return true;
  }
  default:
    return false;
  }
}

} // namespace canon_detail

// ----- main canonicalizer -----------------------------------------------------

namespace canon_detail {

NF to_nf(const Expr &e);

inline Expr canon_guard(const Expr &g);

// Piecewise canonicalization helper: args already canonical.
inline Expr canon_piecewise(std::vector<Expr> args) {
  std::vector<Expr> out;
  for (std::size_t i = 0; i + 1 < args.size(); i += 2) {
    const Expr &g = args[i];
    if (g->kind == Ek::BoolLit) {
      if (g->bval) {
        // This branch always fires: it becomes the default, rest unreachable.
        out.push_back(args[i + 1]);
        return canon_piecewise(std::move(out));
      }
      continue; // guard never fires
    }
    out.push_back(g);
    out.push_back(args[i + 1]);
  }
  out.push_back(args.back());

  if (out.size() == 1) return out[0];
  // All branches equal: collapse.
  bool all_equal = true;
  for (std::size_t i = 1; i + 2 < out.size(); i += 2)
    if (!equal(out[i], out[i + 2])) all_equal = false;
  if (all_equal && equal(out[1], out.back())) return out[1];
  // Single guard whose value is itself a single-guard piecewise with the
  // same default: fuse guards conjunctively.
  if (out.size() == 3 && out[1]->kind == Ek::Piecewise && out[1]->args.size() == 3 &&
      equal(out[1]->args[2], out[2])) {
    Expr fused = canon_guard(and_(out[0], out[1]->args[0]));
    return canon_piecewise({fused, out[1]->args[1], out[2]});
  }
  return piecewise(std::move(out));
}

// Comparison normal form: lhs-rhs compared against 0, with the difference
// sign-normalized for symmetric operators.
inline Expr canon_cmp(CmpOp op, const Expr &a, const Expr &b) {
  Expr d = canon(sub(a, b));
  if (is_num(d)) {
    const Rational &q = d->num;
    switch (op) {
    case CmpOp::Eq: return boolean(q == 0);
    case CmpOp::Ne: return boolean(q != 0);
    case CmpOp::Lt: return boolean(q < 0);
    case CmpOp::Le: return boolean(q <= 0);
    }
  }
  if (op == CmpOp::Eq || op == CmpOp::Ne) {
    NF nf = to_nf(d);
    if (!nf.empty() && nf[0].coeff < 0) d = nf_to_expr(nf_scale(nf, -1));
  }
  return cmp(op, d, num(0));
}

inline Expr canon_guard(const Expr &g) {
  const ExprNode &n = *g;
  switch (n.kind) {
  case Ek::BoolLit:
    return g;
  case Ek::Cmp:
    return canon_cmp(n.cmp, canon(n.args[0]), canon(n.args[1]));
  case Ek::Not: {
    Expr a = canon_guard(n.args[0]);
    if (a->kind == Ek::BoolLit) return boolean(!a->bval);
    if (a->kind == Ek::Not) return a->args[0];
    if (a->kind == Ek::Cmp) {
      switch (a->cmp) {
      case CmpOp::Eq: return cmp(CmpOp::Ne, a->args[0], a->args[1]);
      case CmpOp::Ne: return cmp(CmpOp::Eq, a->args[0], a->args[1]);
      case CmpOp::Lt: return canon_cmp(CmpOp::Le, a->args[1], a->args[0]);
      case CmpOp::Le: return canon_cmp(CmpOp::Lt, a->args[1], a->args[0]);
      }
    }
    return not_(a);
  }
  case Ek::And:
  case Ek::Or: {
    bool is_and = n.kind == Ek::And;
    std::vector<Expr> parts;
    for (const Expr &a : n.args) {
      Expr c = canon_guard(a);
      if (c->kind == Ek::BoolLit) {
        if (c->bval == is_and) continue;  // identity element
        return boolean(!is_and);          // absorbing element
      }
      if (c->kind == n.kind) {
        for (const Expr &x : c->args) parts.push_back(x);
      } else {
        parts.push_back(c);
      }
    }
    if (parts.empty()) return boolean(is_and);
    std::sort(parts.begin(), parts.end(),
              [](const Expr &x, const Expr &y) { return cmp_expr(x, y) < 0; });
    parts.erase(std::unique(parts.begin(), parts.end(),
                            [](const Expr &x, const Expr &y) { return equal(x, y); }),
                parts.end());
    // Complementary comparison pairs: d = 0 with d /= 0, and d < 0 with
    // -d <= 0 (i.e. d >= 0). All comparisons here are normalized to `d op 0`.
    auto complementary = [](const Expr &x, const Expr &y) {
      if (x->kind != Ek::Cmp || y->kind != Ek::Cmp) return false;
      bool eq_pair = (x->cmp == CmpOp::Eq && y->cmp == CmpOp::Ne) ||
                     (x->cmp == CmpOp::Ne && y->cmp == CmpOp::Eq);
      if (eq_pair) return equal(x->args[0], y->args[0]);
      bool lt_pair = (x->cmp == CmpOp::Lt && y->cmp == CmpOp::Le) ||
                     (x->cmp == CmpOp::Le && y->cmp == CmpOp::Lt);
      if (lt_pair) return is_num(canon(add(x->args[0], y->args[0])), 0);
      return false;
    };
    for (std::size_t a = 0; a < parts.size(); ++a)
      for (std::size_t b = a + 1; b < parts.size(); ++b)
        if (complementary(parts[a], parts[b])) return boolean(!is_and);
    return nary(n.kind, std::move(parts));
  }
  default:
    // Boolean-valued non-connectives (e.g. variables) pass through.
    return canon(g);
  }
}

inline NF nf_pow(const NF &base, const NF &expo) {
  // Rational exponent?
  bool expo_rat = expo.empty() || (expo.size() == 1 && expo[0].is_rational());
  Rational rexp = expo.empty() ? Rational(0) : (expo_rat ? expo[0].coeff : Rational(0));

  if (expo_rat && rexp == 0) return nf_num(1);
  if (expo_rat && rexp == 1) return base;

  // 0, and rational^rational.
  if (base.empty()) {
    if (expo_rat && rexp > 0) return {}; // 0^positive = 0
    Monomial m;
    Factor f;
    f.base = num(0);
    if (expo_rat) {
      f.rexp = rexp;
    } else {
      f.has_rat = false;
      f.sexp = nf_to_expr(expo);
    }
    mono_insert(m, std::move(f));
    return {m};
  }

  if (expo_rat && is_integer(rexp)) {
    long k = rexp.convert_to<long>();
    if (k > 0 && k <= 16) {
      // Small positive integer powers expand (multinomial expansion keeps
      // cancellation visible to the recognizers).
      NF acc = nf_num(1);
      NF sq = base;
      unsigned long kk = static_cast<unsigned long>(k);
      while (kk) {
        if (kk & 1ul) acc = nf_mul(acc, sq);
        kk >>= 1;
        if (kk) sq = nf_mul(sq, sq);
      }
      return acc;
    }
    if (base.size() == 1) {
      // Invert/power a single term exactly.
      const Monomial &m = base[0];
      Monomial out;
      out.coeff = 1;
      mono_mul_rat_pow(out, m.coeff, rexp);
      for (const Factor &f : m.factors) {
        Factor g = f;
        if (f.has_rat) {
          Rational e2 = f.rexp * rexp;
          if (f.base->kind == Ek::Num) {
            mono_mul_rat_pow(out, f.base->num, e2);
            continue;
          }
          g.rexp = e2;
        } else {
          Expr e2 = canon(mul(f.sexp, num(rexp)));
          if (is_num(e2)) {
            g.has_rat = true;
            g.rexp = e2->num;
            g.sexp = Expr();
          } else {
            g.sexp = e2;
          }
        }
        mono_insert(out, std::move(g));
      }
      if (m.exp_arg.defined()) {
        Expr u = canon(mul(m.exp_arg, num(rexp)));
        if (!is_num(u, 0)) out.exp_arg = u;
      }
      return {out};
    }
  }

  // Single-term base with general exponent distributes across provably
  // non-negative parts; otherwise the whole base becomes an opaque factor.
  if (base.size() == 1) {
    const Monomial &m = base[0];
    bool distributable = m.coeff > 0;
    for (const Factor &f : m.factors)
      if (!(f.has_rat && provably_nonneg_base(f.base))) distributable = false;
    if (distributable) {
      Expr expo_e = nf_to_expr(expo);
      Monomial out;
      if (m.exp_arg.defined()) {
        Expr u = canon(mul(m.exp_arg, expo_e));
        if (!is_num(u, 0)) out.exp_arg = u;
      }
      if (expo_rat) {
        mono_mul_rat_pow(out, m.coeff, rexp);
        for (const Factor &f : m.factors) {
          Factor g = f;
          if (f.base->kind == Ek::Num) {
            mono_mul_rat_pow(out, f.base->num, f.rexp * rexp);
          } else {
            g.rexp = f.rexp * rexp;
            mono_insert(out, std::move(g));
          }
        }
      } else {
        if (m.coeff != 1) {
          // coeff^expo: split the rational coefficient into prime powers
          // with symbolic exponents.
          auto emit = [&](const BigInt &nmr, bool inverted) {
            for (auto &[p, k] : factorize(nmr)) {
              long kk = inverted ? -k : k;
              Expr e2 = canon(mul(num(Rational(kk)), expo_e));
              Factor f2;
              f2.base = num(Rational(p));
              if (is_num(e2)) {
                f2.rexp = e2->num;
              } else {
                f2.has_rat = false;
                f2.sexp = e2;
              }
              mono_insert(out, std::move(f2));
            }
          };
          emit(numer(m.coeff), false);
          emit(denom(m.coeff), true);
        }
        for (const Factor &f : m.factors) {
          Expr e2 = canon(mul(f.expo_as_expr(), expo_e));
          Factor g;
          g.base = f.base;
          if (is_num(e2)) {
            g.rexp = e2->num;
          } else {
            g.has_rat = false;
            g.sexp = e2;
          }
          mono_insert(out, std::move(g));
        }
      }
      return {out};
    }
  }

  // Opaque: (base)^(expo) as a single factor.
  Monomial m;
  Factor f;
  f.base = nf_to_expr(base);
  if (expo_rat) {
    f.rexp = rexp;
  } else {
    f.has_rat = false;
    f.sexp = nf_to_expr(expo);
  }
  mono_insert(m, std::move(f));
  return {m};
}

// Loop splitting. For prod: pull index-free factors out as powers, turn
// exp factors into exp of a sum, and leave an index-dependent residue.
// For sum: split additive terms and pull index-free multiplicative parts out.
NF split_sum(const std::string &i, const Expr &lo, const Expr &hi, const NF &body);
NF split_prod(const std::string &i, const Expr &lo, const Expr &hi, const NF &body);

inline Expr range_count(const Expr &lo, const Expr &hi) {
  return canon(add({hi, neg(lo), num(1)}));
}

// Expands the piecewise factors of a monomial into (conjunctive guard,
// residual monomial) cases. Guards are exclusive by construction since a
// piecewise tries its guards in order. Only exponent-1 piecewise factors
// participate; others stay opaque.
struct MaskedMono {
  Expr guard; // undefined = unconditional
  Monomial m;
};

inline Expr guard_and(const Expr &a, const Expr &b) {
  if (!a.defined()) return b;
  if (!b.defined()) return a;
  return canon_guard(and_(a, b));
}

// distribute_sums: under a summation a sum-valued branch may be split into
// separate masked terms; under a product it must stay whole (it is a factor
// of each masked iteration, not a sum of cases), so it is kept opaque.
inline void expand_pw_cases(const Monomial &m, const Expr &guard, bool distribute_sums,
                            std::vector<MaskedMono> &out) {
  for (std::size_t fi = 0; fi < m.factors.size(); ++fi) {
    const Factor &f = m.factors[fi];
    if (f.base->kind != Ek::Piecewise || !f.has_rat || f.rexp != 1) continue;
    const ExprNode &pwn = *f.base;
    Monomial rest = m;
    rest.factors.erase(rest.factors.begin() + static_cast<long>(fi));
    auto emit_branch = [&](const Expr &value, const Expr &g) {
      NF branch = to_nf(value);
      if (branch.size() > 1 && !distribute_sums) {
        Monomial one = rest;
        Factor vf;
        vf.base = value;
        vf.rexp = 1;
        mono_insert(one, std::move(vf));
        expand_pw_cases(one, g, distribute_sums, out);
        return;
      }
      NF whole = nf_mul(NF{rest}, branch);
      for (const Monomial &bm : whole) expand_pw_cases(bm, g, distribute_sums, out);
    };
    Expr not_prev; // conjunction of negated earlier guards
    for (std::size_t k = 0; k + 1 < pwn.args.size(); k += 2) {
      emit_branch(pwn.args[k + 1], guard_and(guard, guard_and(not_prev, pwn.args[k])));
      not_prev = guard_and(not_prev, canon_guard(not_(pwn.args[k])));
    }
    emit_branch(pwn.args.back(), guard_and(guard, not_prev));
    return;
  }
  out.push_back({guard, m});
}

// Splits one masked case into index-free and index-dependent parts and
// emits the matching sum. The guard (if any) masks the dependent part, or
// becomes a counting sum when nothing depends on the index.
inline NF emit_sum_case(const std::string &i, const Expr &lo, const Expr &hi,
                        const MaskedMono &c) {
  Monomial free_part, dep_part;
  free_part.coeff = c.m.coeff;
  for (const Factor &f : c.m.factors) {
    bool dep = contains_var(f.base, i) || contains_var(f.expo_as_expr(), i);
    (dep ? dep_part : free_part).factors.push_back(f);
  }
  if (c.m.exp_arg.defined()) {
    if (contains_var(c.m.exp_arg, i))
      dep_part.exp_arg = c.m.exp_arg;
    else
      free_part.exp_arg = c.m.exp_arg;
  }
  bool guard_dep = c.guard.defined() && contains_var(c.guard, i);
  bool has_dep = !dep_part.factors.empty() || dep_part.exp_arg.defined();
  if (!guard_dep && !has_dep) {
    // Nothing mentions the index: sum = count * value, masked by the guard.
    NF v = nf_mul(NF{free_part}, to_nf(range_count(lo, hi)));
    if (!c.guard.defined()) return v;
    Expr masked = pw(c.guard, nf_to_expr(v), num(0));
    return to_nf(masked);
  }
  dep_part.coeff = 1;
  Expr inner = mono_to_expr(dep_part);
  Expr body = c.guard.defined() ? pw(c.guard, inner, num(0)) : inner;
  Expr s = sum_(i, lo, hi, body);
  if (guard_dep || !c.guard.defined()) return nf_mul(NF{free_part}, nf_atom(s));
  // Index-free guard: hoist it out of the sum.
  Expr hoisted = pw(c.guard, nf_to_expr(nf_mul(NF{free_part}, nf_atom(sum_(i, lo, hi, inner)))),
                    num(0));
  return to_nf(hoisted);
}

inline NF split_sum(const std::string &i, const Expr &lo, const Expr &hi, const NF &body) {
  NF out;
  for (const Monomial &t : body) {
    std::vector<MaskedMono> cases;
    expand_pw_cases(t, Expr(), /*distribute_sums=*/true, cases);
    for (const MaskedMono &c : cases) out = nf_add(out, emit_sum_case(i, lo, hi, c));
  }
  return out;
}

// prod over one masked case; the guard masks exponents additively
// (x^e under guard g becomes x^(sum of masked e)).
inline NF emit_prod_case(const std::string &i, const Expr &lo, const Expr &hi,
                         const MaskedMono &c) {
  auto masked_total = [&](const Expr &expo) {
    Expr body = c.guard.defined() ? pw(c.guard, expo, num(0)) : expo;
    return canon(sum_(i, lo, hi, body));
  };
  const Monomial &t = c.m;
  Monomial residue;
  NF out = nf_num(1);
  if (t.coeff != 1) out = nf_mul(out, nf_pow(nf_num(t.coeff), to_nf(masked_total(num(1)))));
  for (const Factor &f : t.factors) {
    if (!contains_var(f.base, i)) {
      out = nf_mul(out, nf_pow(nf_atom(f.base), to_nf(masked_total(f.expo_as_expr()))));
    } else {
      residue.factors.push_back(f);
    }
  }
  if (t.exp_arg.defined()) {
    Expr total = masked_total(t.exp_arg);
    NF e;
    Monomial m;
    if (!is_num(total, 0)) m.exp_arg = total;
    e.push_back(std::move(m));
    out = nf_mul(out, e);
  }
  if (!residue.factors.empty()) {
    residue.coeff = 1;
    Expr inner = mono_to_expr(residue);
    if (c.guard.defined()) inner = pw(c.guard, inner, num(1));
    out = nf_mul(out, nf_atom(prod_(i, lo, hi, inner)));
  }
  return out;
}

inline NF split_prod(const std::string &i, const Expr &lo, const Expr &hi, const NF &body) {
  Expr count = range_count(lo, hi);
  if (body.empty()) {
    // prod of zeros: zero when the range is non-empty; keep it atomic since
    // the bound check is not decidable here unless literal.
    if (is_num(count) && count->num > 0) return {};
    return nf_atom(prod_(i, lo, hi, num(0)));
  }
  if (body.size() > 1) {
    // Sum-valued body stays atomic unless index-free.
    Expr inner = nf_to_expr(body);
    if (!contains_var(inner, i)) return nf_pow(body, to_nf(count));
    return nf_atom(prod_(i, lo, hi, inner));
  }
  std::vector<MaskedMono> cases;
  expand_pw_cases(body[0], Expr(), /*distribute_sums=*/false, cases);
  if (cases.size() == 1 && !cases[0].guard.defined()) return emit_prod_case(i, lo, hi, cases[0]);
  // prod of a case split: product of masked products (cases are exclusive
  // and exhaustive, so each iteration lands in exactly one case).
  NF out = nf_num(1);
  for (const MaskedMono &c : cases) {
    if (c.m.is_rational() && c.m.coeff == 1 && !c.guard.defined()) continue;
    out = nf_mul(out, emit_prod_case(i, lo, hi, c));
  }
  return out;
}

inline std::optional<std::pair<long, long>> literal_range(const Expr &lo, const Expr &hi,
                                                          long limit) {
  if (!is_num(lo) || !is_num(hi)) return std::nullopt;
  if (!is_integer(lo->num) || !is_integer(hi->num)) return std::nullopt;
  long a = lo->num.convert_to<long>(), b = hi->num.convert_to<long>();
  if (b - a + 1 > limit) return std::nullopt;
  return std::make_pair(a, b);
}

inline NF to_nf(const Expr &e0) {
  Expr e = e0;
  const ExprNode &n = *e;
  switch (n.kind) {
  case Ek::Num:
    return nf_num(n.num);
  case Ek::Var:
  case Ek::Pi:
    return nf_atom(e);
  case Ek::BoolLit:
    return nf_atom(e); // boolean in arithmetic position: leave opaque
  case Ek::Add: {
    NF out;
    for (const Expr &a : n.args) out = nf_add(out, to_nf(a));
    return out;
  }
  case Ek::Mul: {
    NF out = nf_num(1);
    for (const Expr &a : n.args) {
      out = nf_mul(out, to_nf(a));
      if (out.empty()) return out;
    }
    return out;
  }
  case Ek::Pow:
    return nf_pow(to_nf(n.args[0]), to_nf(n.args[1]));
  case Ek::Exp: {
    Expr u = canon(n.args[0]);
    if (is_num(u, 0)) return nf_num(1);
    if (u->kind == Ek::Log) return to_nf(u->args[0]);
    Monomial m;
    m.exp_arg = u;
    return {m};
  }
  case Ek::Log: {
    Expr u = canon(n.args[0]);
    if (is_num(u, 1)) return {};
    if (u->kind == Ek::Exp) return to_nf(u->args[0]);
    if (u->kind == Ek::Pow && provably_nonneg_base(u->args[0]))
      return to_nf(mul(u->args[1], log_(u->args[0])));
    return nf_atom(log_(u));
  }
  case Ek::Cmp:
  case Ek::And:
  case Ek::Or:
  case Ek::Not:
    return nf_atom(canon_guard(e));
  case Ek::Piecewise: {
    std::vector<Expr> args;
    args.reserve(n.args.size());
    for (std::size_t i = 0; i < n.args.size(); ++i)
      args.push_back(i + 1 < n.args.size() && i % 2 == 0 ? canon_guard(n.args[i])
                                                         : canon(n.args[i]));
    Expr p = canon_piecewise(std::move(args));
    if (p->kind != Ek::Piecewise) return to_nf(p);
    return nf_atom(p);
  }
  case Ek::Sum:
  case Ek::Prod: {
    Expr lo = canon(n.args[0]), hi = canon(n.args[1]);
    if (auto r = literal_range(lo, hi, 16)) {
      // Unroll tiny literal ranges.
      std::vector<Expr> parts;
      for (long k = r->first; k <= r->second; ++k)
        parts.push_back(subst(n.args[2], n.name, num(Rational(k))));
      if (parts.empty()) return n.kind == Ek::Sum ? NF{} : nf_num(1);
      return to_nf(nary(n.kind == Ek::Sum ? Ek::Add : Ek::Mul, std::move(parts)));
    }
    NF body = to_nf(n.args[2]);
    return n.kind == Ek::Sum ? split_sum(n.name, lo, hi, body)
                             : split_prod(n.name, lo, hi, body);
  }
  case Ek::ArrayLit: {
    std::vector<Expr> elems;
    elems.reserve(n.args.size());
    for (const Expr &a : n.args) elems.push_back(canon(a));
    return nf_atom(array_lit(std::move(elems)));
  }
  case Ek::ArrayGen: {
    Expr sz = canon(n.args[0]);
    return nf_atom(array_gen(n.name, sz, canon(n.args[1])));
  }
  case Ek::Index: {
    Expr arr = canon(n.args[0]);
    Expr i = canon(n.args[1]);
    if (arr->kind == Ek::ArrayGen) return to_nf(subst(arr->args[1], arr->name, i));
    if (arr->kind == Ek::ArrayLit) {
      if (is_num(i) && is_integer(i->num)) {
        long k = i->num.convert_to<long>();
        if (k >= 0 && k < static_cast<long>(arr->args.size())) return to_nf(arr->args[k]);
        return nf_atom(index(arr, i)); // out of bounds: undefined, keep
      }
      // Symbolic index into a literal array: piecewise on the index; in
      // bounds by assumption, so the last element is the default.
      std::vector<Expr> pwargs;
      for (std::size_t k = 0; k + 1 < arr->args.size(); ++k) {
        pwargs.push_back(canon_cmp(CmpOp::Eq, i, num(Rational(static_cast<long>(k)))));
        pwargs.push_back(arr->args[k]);
      }
      pwargs.push_back(arr->args.back());
      return to_nf(piecewise(std::move(pwargs)));
    }
    return nf_atom(index(arr, i));
  }
  case Ek::Size: {
    Expr arr = canon(n.args[0]);
    if (arr->kind == Ek::ArrayLit) return nf_num(Rational(static_cast<long>(arr->args.size())));
    if (arr->kind == Ek::ArrayGen) return to_nf(arr->args[0]);
    return nf_atom(size_of(arr));
  }
  case Ek::MkPair:
    return nf_atom(mk_pair(canon(n.args[0]), canon(n.args[1])));
  case Ek::Fst: {
    Expr a = canon(n.args[0]);
    if (a->kind == Ek::MkPair) return to_nf(a->args[0]);
    return nf_atom(fst(a));
  }
  case Ek::Snd: {
    Expr a = canon(n.args[0]);
    if (a->kind == Ek::MkPair) return to_nf(a->args[1]);
    return nf_atom(snd(a));
  }
  case Ek::Let:
    // Lets are transparent to algebra.
    return to_nf(subst(n.args[1], n.name, n.args[0]));
  case Ek::GammaF: {
    Expr a = canon(n.args[0]);
    if (is_num(a) && is_integer(a->num) && a->num >= 1 && a->num <= 64) {
      Rational f = 1;
      for (long k = 2; k < a->num.convert_to<long>(); ++k) f *= k;
      return nf_num(f);
    }
    return nf_atom(gamma_fn(a));
  }
  case Ek::BetaF: {
    Expr a = canon(n.args[0]), b = canon(n.args[1]);
    auto small_int = [](const Expr &x) {
      return is_num(x) && is_integer(x->num) && x->num >= 1 && x->num <= 64;
    };
    if (small_int(a) && small_int(b)) {
      auto fact = [](long k) {
        Rational f = 1;
        for (long i = 2; i <= k; ++i) f *= i;
        return f;
      };
      long m = a->num.convert_to<long>(), k = b->num.convert_to<long>();
      return nf_num(fact(m - 1) * fact(k - 1) / fact(m + k - 1));
    }
    return nf_atom(beta_fn(a, b));
  }
  case Ek::HistTerm: {
    ExprNode out = n;
    out.args[0] = canon(n.args[0]);
    out.args[1] = canon(n.args[1]);
    return nf_atom(make_expr(std::move(out)));
  }
  }
  return nf_atom(e);
}

inline Expr mono_to_expr(const Monomial &m) {
  std::vector<Expr> parts;
  if (m.coeff != 1 || (m.factors.empty() && !m.exp_arg.defined()))
    parts.push_back(num(m.coeff));
  for (const Factor &f : m.factors) {
    if (f.has_rat && f.rexp == 1)
      parts.push_back(f.base);
    else
      parts.push_back(pow_(f.base, f.expo_as_expr()));
  }
  if (m.exp_arg.defined()) parts.push_back(exp_(m.exp_arg));
  if (parts.empty()) return num(1);
  return parts.size() == 1 ? parts[0] : mul(std::move(parts));
}

inline Expr nf_to_expr(const NF &nf) {
  if (nf.empty()) return num(0);
  std::vector<Expr> terms;
  terms.reserve(nf.size());
  for (const Monomial &m : nf) terms.push_back(mono_to_expr(m));
  return terms.size() == 1 ? terms[0] : add(std::move(terms));
}

} // namespace canon_detail

inline Expr canon(const Expr &e) {
  if (!e.defined()) return e;
  // Boolean-valued expressions canonicalize as guards.
  switch (e->kind) {
  case Ek::Cmp:
  case Ek::And:
  case Ek::Or:
  case Ek::Not:
  case Ek::BoolLit:
    return canon_detail::canon_guard(e);
  default:
    break;
  }
  return canon_detail::nf_to_expr(canon_detail::to_nf(e));
}

inline Expr canon_pow(const Expr &base, const Expr &expo) { return canon(pow_(base, expo)); }

// Convenience: canonical equality.
inline bool canon_equal(const Expr &a, const Expr &b) { return equal(canon(a), canon(b)); }

} // namespace hkir

#endif
