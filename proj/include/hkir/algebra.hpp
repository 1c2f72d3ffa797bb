#ifndef HKIR_ALGEBRA_HPP
#define HKIR_ALGEBRA_HPP

#include "hkir/canon.hpp"
#include "hkir/measure.hpp"

#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// ----- positivity facts -------------------------------------------------------
// Collected from parameter and binder types; used to discharge side
// conditions (a Gaussian kernel needs a negative quadratic coefficient, a
// recognized sigma^2 must be positive, ...). What cannot be discharged here
// is recorded and re-checked numerically at run time.

struct Facts {
  std::set<std::string> positive;
  std::set<std::string> nonneg;
  std::set<std::string> nonneg_arrays;

  void add_var(const std::string &name, Tk kind) {
    if (kind == Tk::Rpos || kind == Tk::Prob) positive.insert(name); // validated at run time
    if (kind == Tk::N) nonneg.insert(name);
  }
};

enum class Sign { Pos, Nonneg, Zero, Unknown };

inline Sign sign_of(const Expr &e, const Facts &facts) {
  if (!e.defined()) return Sign::Unknown;
  const ExprNode &n = *e;
  switch (n.kind) {
  case Ek::Num:
    return n.num > 0 ? Sign::Pos : n.num == 0 ? Sign::Zero : Sign::Unknown;
  case Ek::Pi:
  case Ek::Exp:
  case Ek::GammaF:
  case Ek::BetaF:
    return Sign::Pos;
  case Ek::Var:
    if (facts.positive.count(n.name)) return Sign::Pos;
    if (facts.nonneg.count(n.name)) return Sign::Nonneg;
    return Sign::Unknown;
  case Ek::Add: {
    bool any_pos = false;
    for (const Expr &a : n.args) {
      Sign s = sign_of(a, facts);
      if (s == Sign::Unknown) return Sign::Unknown;
      if (s == Sign::Pos) any_pos = true;
    }
    return any_pos ? Sign::Pos : Sign::Nonneg;
  }
  case Ek::Mul: {
    Sign acc = Sign::Pos;
    for (const Expr &a : n.args) {
      Sign s = sign_of(a, facts);
      if (s == Sign::Unknown) return Sign::Unknown;
      if (s == Sign::Zero) return Sign::Zero;
      if (s == Sign::Nonneg) acc = Sign::Nonneg;
    }
    return acc;
  }
  case Ek::Pow: {
    Sign b = sign_of(n.args[0], facts);
    if (b == Sign::Pos) return Sign::Pos;
    if (b == Sign::Nonneg || b == Sign::Zero) {
      Sign x = sign_of(n.args[1], facts);
      if (x == Sign::Pos) return b;
      return Sign::Nonneg; // 0^0 = 1 by convention
    }
    return Sign::Unknown;
  }
  case Ek::Piecewise: {
    Sign acc = Sign::Pos;
    for (std::size_t i = 1; i < n.args.size(); i += 2) {
      Sign s = sign_of(n.args[i], facts);
      if (s == Sign::Unknown) return Sign::Unknown;
      if (s != Sign::Pos) acc = Sign::Nonneg;
    }
    Sign d = sign_of(n.args.back(), facts);
    if (d == Sign::Unknown) return Sign::Unknown;
    if (d != Sign::Pos) acc = Sign::Nonneg;
    return acc;
  }
  case Ek::Sum: {
    Sign s = sign_of(n.args[2], facts);
    if (s == Sign::Pos || s == Sign::Nonneg || s == Sign::Zero) return Sign::Nonneg;
    return Sign::Unknown;
  }
  case Ek::Prod: {
    Sign s = sign_of(n.args[2], facts);
    if (s == Sign::Pos) return Sign::Pos;
    if (s == Sign::Nonneg || s == Sign::Zero) return Sign::Nonneg;
    return Sign::Unknown;
  }
  case Ek::Index: {
    const Expr &arr = n.args[0];
    if (arr->kind == Ek::Var && facts.nonneg_arrays.count(arr->name)) return Sign::Nonneg;
    return Sign::Unknown;
  }
  case Ek::Size:
    return Sign::Nonneg;
  case Ek::HistTerm:
    return Sign::Unknown;
  default:
    return Sign::Unknown;
  }
}

inline bool provably_positive(const Expr &e, const Facts &f) {
  return sign_of(canon(e), f) == Sign::Pos;
}
inline bool provably_nonneg(const Expr &e, const Facts &f) {
  Sign s = sign_of(canon(e), f);
  return s == Sign::Pos || s == Sign::Nonneg || s == Sign::Zero;
}

// ----- dense polynomials in one variable --------------------------------------
// Coefficients are canonical expressions free of the distinguished variable.

using Poly = std::vector<Expr>; // coeffs[k] * v^k; empty = zero

inline void poly_trim(Poly &p) {
  while (!p.empty() && is_num(p.back(), 0)) p.pop_back();
}

inline int poly_deg(const Poly &p) { return static_cast<int>(p.size()) - 1; }

inline Poly poly_add(const Poly &a, const Poly &b) {
  Poly out(std::max(a.size(), b.size()), num(0));
  for (std::size_t i = 0; i < out.size(); ++i) {
    Expr s = num(0);
    if (i < a.size() && i < b.size())
      s = canon(add(a[i], b[i]));
    else if (i < a.size())
      s = a[i];
    else
      s = b[i];
    out[i] = s;
  }
  poly_trim(out);
  return out;
}

inline Poly poly_mul(const Poly &a, const Poly &b) {
  if (a.empty() || b.empty()) return {};
  Poly out(a.size() + b.size() - 1, num(0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b.size(); ++j)
      out[i + j] = canon(add(out[i + j], mul(a[i], b[j])));
  poly_trim(out);
  return out;
}

inline Poly poly_scale(const Poly &a, const Expr &c) {
  Poly out;
  out.reserve(a.size());
  for (const Expr &x : a) out.push_back(canon(mul(x, c)));
  poly_trim(out);
  return out;
}

inline Poly poly_deriv(const Poly &a) {
  Poly out;
  for (std::size_t i = 1; i < a.size(); ++i)
    out.push_back(canon(mul(num(Rational(static_cast<long>(i))), a[i])));
  poly_trim(out);
  return out;
}

inline Expr poly_eval(const Poly &a, const Expr &x) {
  Expr acc = num(0);
  for (std::size_t i = a.size(); i-- > 0;) acc = add(a[i], mul(x, acc));
  return canon(acc);
}

inline Expr poly_to_expr(const Poly &a, const Expr &v) {
  if (a.empty()) return num(0);
  std::vector<Expr> terms;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (is_num(a[i], 0)) continue;
    if (i == 0)
      terms.push_back(a[i]);
    else
      terms.push_back(mul(a[i], pow_(v, num(Rational(static_cast<long>(i))))));
  }
  if (terms.empty()) return num(0);
  return canon(add(std::move(terms)));
}

// Extracts e as a polynomial in v; fails when v occurs under a non-polynomial
// position (exp, fractional power, guard, indexing, loop body, ...).
inline std::optional<Poly> poly_of(const Expr &e, const std::string &v) {
  if (!contains_var(e, v)) {
    if (is_num(e, 0)) return Poly{};
    return Poly{canon(e)};
  }
  const ExprNode &n = *e;
  switch (n.kind) {
  case Ek::Var:
    return Poly{num(0), num(1)};
  case Ek::Add: {
    Poly acc;
    for (const Expr &a : n.args) {
      auto p = poly_of(a, v);
      if (!p) return std::nullopt;
      acc = poly_add(acc, *p);
    }
    return acc;
  }
  case Ek::Mul: {
    Poly acc{num(1)};
    for (const Expr &a : n.args) {
      auto p = poly_of(a, v);
      if (!p) return std::nullopt;
      acc = poly_mul(acc, *p);
    }
    return acc;
  }
  case Ek::Pow: {
    if (contains_var(n.args[1], v)) return std::nullopt;
    if (!is_num(n.args[1])) return std::nullopt;
    const Rational &q = n.args[1]->num;
    if (!is_integer(q) || q < 0 || q > 16) return std::nullopt;
    auto p = poly_of(n.args[0], v);
    if (!p) return std::nullopt;
    Poly acc{num(1)};
    for (long k = 0; k < q.convert_to<long>(); ++k) acc = poly_mul(acc, *p);
    return acc;
  }
  default:
    return std::nullopt;
  }
}

// ----- polynomial fractions (for the holonomic ratio) -------------------------

struct PolyFrac {
  Poly num, den; // den nonzero
};

inline PolyFrac frac_add(const PolyFrac &a, const PolyFrac &b) {
  PolyFrac out;
  out.num = poly_add(poly_mul(a.num, b.den), poly_mul(b.num, a.den));
  out.den = poly_mul(a.den, b.den);
  return out;
}

// Pseudo-remainder: rem(lead(b)^(da-db+1) * a, b). Multiplying through by
// the leading coefficient keeps every step's leading-term cancellation
// exact under canon (no symbolic division, so no opaque inverse atoms).
inline Poly poly_pseudo_rem(Poly a, const Poly &b) {
  poly_trim(a);
  if (b.empty() || poly_deg(a) < poly_deg(b)) return a;
  const Expr &lead_b = b.back();
  while (!a.empty() && poly_deg(a) >= poly_deg(b)) {
    Expr lead_a = a.back();
    int shift = poly_deg(a) - poly_deg(b);
    // a := lead_b * a - lead_a * v^shift * b ; leading coefficients cancel.
    Poly next(a.size() - 1, num(0));
    for (std::size_t i = 0; i + 1 < a.size(); ++i) next[i] = canon(mul(lead_b, a[i]));
    for (std::size_t i = 0; i + 1 < b.size(); ++i) {
      std::size_t k = i + static_cast<std::size_t>(shift);
      next[k] = canon(hkir::sub(next[k], mul(lead_a, b[i])));
    }
    a = std::move(next);
    poly_trim(a);
  }
  return a;
}

inline Poly poly_gcd(Poly a, Poly b) {
  poly_trim(a);
  poly_trim(b);
  if (poly_deg(a) < poly_deg(b)) std::swap(a, b);
  int guard = 0;
  while (!b.empty() && guard++ < 16) {
    Poly r = poly_pseudo_rem(a, b);
    a = std::move(b);
    b = std::move(r);
  }
  if (!a.empty()) {
    // Normalize monic (one symbolic division at the end).
    Expr lead = a.back();
    for (Expr &c : a) c = canon(div(c, lead));
  }
  return a;
}

// Division by a monic divisor; the leading term cancels exactly each step.
// Returns nullopt when the remainder is nonzero.
inline std::optional<Poly> poly_div_monic(const Poly &a, const Poly &b) {
  Poly rem = a, quot;
  poly_trim(rem);
  if (b.empty() || !is_num(b.back(), 1)) return std::nullopt;
  int dq = poly_deg(rem) - poly_deg(b);
  if (dq < 0) return rem.empty() ? std::optional<Poly>(Poly{}) : std::nullopt;
  quot.assign(dq + 1, num(0));
  while (!rem.empty() && poly_deg(rem) >= poly_deg(b)) {
    Expr q = rem.back();
    int shift = poly_deg(rem) - poly_deg(b);
    quot[shift] = q;
    rem.pop_back(); // leading term cancels by construction
    for (std::size_t i = 0; i + 1 < b.size(); ++i) {
      std::size_t k = i + static_cast<std::size_t>(shift);
      rem[k] = canon(hkir::sub(rem[k], mul(q, b[i])));
    }
    poly_trim(rem);
  }
  if (!rem.empty()) return std::nullopt;
  poly_trim(quot);
  return quot;
}

inline void frac_reduce(PolyFrac &f) {
  poly_trim(f.num);
  poly_trim(f.den);
  if (f.num.empty() || poly_deg(f.den) == 0) return;
  Poly g = poly_gcd(f.num, f.den);
  if (poly_deg(g) >= 1) {
    auto n2 = poly_div_monic(f.num, g);
    auto d2 = poly_div_monic(f.den, g);
    if (n2 && d2 && !d2->empty()) {
      f.num = *n2;
      f.den = *d2;
    }
  }
}

// ----- symbolic differentiation ----------------------------------------------

inline std::optional<Expr> differentiate_raw(const Expr &e, const std::string &v) {
  if (!contains_var(e, v)) return num(0);
  const ExprNode &n = *e;
  switch (n.kind) {
  case Ek::Var:
    return num(1);
  case Ek::Add: {
    std::vector<Expr> parts;
    for (const Expr &a : n.args) {
      auto d = differentiate_raw(a, v);
      if (!d) return std::nullopt;
      parts.push_back(*d);
    }
    return add(std::move(parts));
  }
  case Ek::Mul: {
    std::vector<Expr> terms;
    for (std::size_t i = 0; i < n.args.size(); ++i) {
      auto d = differentiate_raw(n.args[i], v);
      if (!d) return std::nullopt;
      std::vector<Expr> fs{*d};
      for (std::size_t j = 0; j < n.args.size(); ++j)
        if (j != i) fs.push_back(n.args[j]);
      terms.push_back(mul(std::move(fs)));
    }
    return add(std::move(terms));
  }
  case Ek::Pow: {
    const Expr &b = n.args[0], &x = n.args[1];
    bool bdep = contains_var(b, v), xdep = contains_var(x, v);
    if (bdep && !xdep) {
      auto db = differentiate_raw(b, v);
      if (!db) return std::nullopt;
      return mul({x, pow_(b, sub(x, num(1))), *db});
    }
    if (!bdep && xdep) {
      auto dx = differentiate_raw(x, v);
      if (!dx) return std::nullopt;
      return mul({pow_(b, x), log_(b), *dx});
    }
    auto db = differentiate_raw(b, v);
    auto dx = differentiate_raw(x, v);
    if (!db || !dx) return std::nullopt;
    return mul(pow_(b, x), add(mul(*dx, log_(b)), mul({x, *db, pow_(b, num(-1))})));
  }
  case Ek::Exp: {
    auto d = differentiate_raw(n.args[0], v);
    if (!d) return std::nullopt;
    return mul(*d, e);
  }
  case Ek::Log: {
    auto d = differentiate_raw(n.args[0], v);
    if (!d) return std::nullopt;
    return mul(*d, pow_(n.args[0], num(-1)));
  }
  case Ek::Piecewise: {
    std::vector<Expr> out;
    for (std::size_t i = 0; i < n.args.size(); ++i) {
      if (i + 1 < n.args.size() && i % 2 == 0) {
        if (contains_var(n.args[i], v)) return std::nullopt; // guard depends on v
        out.push_back(n.args[i]);
      } else {
        auto d = differentiate_raw(n.args[i], v);
        if (!d) return std::nullopt;
        out.push_back(*d);
      }
    }
    return piecewise(std::move(out));
  }
  case Ek::Sum: {
    if (contains_var(n.args[0], v) || contains_var(n.args[1], v)) return std::nullopt;
    auto d = differentiate_raw(n.args[2], v);
    if (!d) return std::nullopt;
    return sum_(n.name, n.args[0], n.args[1], *d);
  }
  case Ek::Let: {
    return differentiate_raw(subst(n.args[1], n.name, n.args[0]), v);
  }
  default:
    return std::nullopt;
  }
}

// Canonicalized derivative; nullopt marks an unsupported shape (for example
// a guard that depends on the variable).
inline std::optional<Expr> differentiate(const Expr &e, const std::string &v) {
  auto d = differentiate_raw(canon(e), v);
  if (!d) return std::nullopt;
  return canon(*d);
}

// ----- linear solving ----------------------------------------------------------

// Solves lhs = rhs for v when both sides are affine in v with a literal
// invertible coefficient. Returns the v-free solution.
inline std::optional<Expr> solve_linear(const Expr &lhs, const Expr &rhs, const std::string &v) {
  Expr d = canon(sub(lhs, rhs));
  auto p = poly_of(d, v);
  if (!p || poly_deg(*p) != 1) return std::nullopt;
  const Expr &c1 = (*p)[1];
  if (!is_num(c1) || c1->num == 0) return std::nullopt;
  Expr b = canon(mul(num(-1), div((*p)[0], c1)));
  if (contains_var(b, v)) return std::nullopt;
  return b;
}

// ----- density expressions ------------------------------------------------------

inline Expr gaussian_density(const Expr &v, const Expr &mu, const Expr &sigma) {
  Expr d = sub(v, mu);
  Expr expo = mul({num(Rational(-1, 2)), d, d, pow_(sigma, num(-2))});
  return mul({pow_(mul(num(2), pi_const()), num(Rational(-1, 2))), pow_(sigma, num(-1)),
              exp_(expo)});
}

inline Expr beta_density(const Expr &v, const Expr &a, const Expr &b) {
  return mul({pow_(v, sub(a, num(1))), pow_(sub(num(1), v), sub(b, num(1))),
              pow_(beta_fn(a, b), num(-1))});
}

inline Expr gamma_density(const Expr &v, const Expr &k, const Expr &theta) {
  return mul({pow_(v, sub(k, num(1))), exp_(neg(div(v, theta))),
              pow_(gamma_fn(k), num(-1)), pow_(theta, neg(k))});
}

inline Expr uniform_density(const Expr &lo, const Expr &hi) {
  return pow_(sub(hi, lo), num(-1));
}

inline Expr density_of(Dist d, const std::vector<Expr> &params, const Expr &v) {
  switch (d) {
  case Dist::Gaussian: return gaussian_density(v, params[0], params[1]);
  case Dist::Beta: return beta_density(v, params[0], params[1]);
  case Dist::Gamma: return gamma_density(v, params[0], params[1]);
  case Dist::Uniform: return uniform_density(params[0], params[1]);
  case Dist::Categorical: {
    // Mass of outcome v under normalized weights.
    Expr w = params[0];
    Expr total = sum_("$cat", num(0), sub(size_of(w), num(1)), index(w, var("$cat")));
    return div(index(w, v), total);
  }
  case Dist::Dirichlet:
    break;
  }
  return Expr();
}

// ----- interval domains -----------------------------------------------------

struct Interval {
  Expr lo, hi; // undefined = infinite in that direction

  bool lo_inf() const { return !lo.defined(); }
  bool hi_inf() const { return !hi.defined(); }
  bool is_full() const { return lo_inf() && hi_inf(); }
  bool is_pos_half() const { return !lo_inf() && is_num(lo, 0) && hi_inf(); }
  bool is_unit() const {
    return !lo_inf() && !hi_inf() && is_num(lo, 0) && is_num(hi, 1);
  }
  bool is_finite() const { return !lo_inf() && !hi_inf(); }
};

inline Interval interval_of(Dist d, const std::vector<Expr> &params) {
  switch (d) {
  case Dist::Gaussian: return {Expr(), Expr()};
  case Dist::Beta: return {num(0), num(1)};
  case Dist::Gamma: return {num(0), Expr()};
  case Dist::Uniform: return {params[0], params[1]};
  default: return {Expr(), Expr()};
  }
}

// ----- recognizer --------------------------------------------------------------

struct Recognized {
  Dist dist;
  std::vector<Expr> params;
  Expr leftover;                    // v-free weight, canonical
  std::vector<Expr> side_conditions; // must be > 0; re-checked at run time
};

namespace algebra_detail {

// Log-derivative of a single canonical monomial as a rational function in v.
inline std::optional<PolyFrac> log_deriv(const Monomial &m, const std::string &v) {
  PolyFrac acc{Poly{}, Poly{num(1)}};
  for (const Factor &f : m.factors) {
    bool base_dep = contains_var(f.base, v);
    Expr ex = f.expo_as_expr();
    bool expo_dep = contains_var(ex, v);
    if (!base_dep && !expo_dep) continue;
    if (base_dep && expo_dep) return std::nullopt;
    if (base_dep) {
      auto fp = poly_of(f.base, v);
      if (!fp) return std::nullopt;
      acc = frac_add(acc, PolyFrac{poly_scale(poly_deriv(*fp), ex), *fp});
    } else {
      // base^e(v): contributes e'(v) * log(base)
      auto ep = poly_of(ex, v);
      if (!ep) return std::nullopt;
      acc = frac_add(acc, PolyFrac{poly_scale(poly_deriv(*ep), log_(f.base)), Poly{num(1)}});
    }
  }
  if (m.exp_arg.defined() && contains_var(m.exp_arg, v)) {
    auto up = poly_of(m.exp_arg, v);
    if (!up) return std::nullopt;
    acc = frac_add(acc, PolyFrac{poly_deriv(*up), Poly{num(1)}});
  }
  frac_reduce(acc);
  return acc;
}

inline std::optional<Expr> vfree_leftover(const Expr &g, const Expr &density,
                                          const std::string &v) {
  Expr left = canon(div(g, density));
  if (contains_var(left, v)) return std::nullopt;
  return left;
}

} // namespace algebra_detail

// Recognizes a canonical factor g as (density of a primitive distribution
// in v over dom) * leftover, by matching the rational function g'/g against
// family templates. Unrecognized shapes return nullopt and the caller keeps
// the factor as an explicit weight.
inline std::optional<Recognized> recognize_density(const Expr &g0, const std::string &v,
                                                   const Interval &dom, const Facts &facts) {
  using namespace algebra_detail;
  Expr g = canon(g0);
  if (!contains_var(g, v)) {
    if (!dom.is_finite()) return std::nullopt;
    Recognized r;
    r.dist = Dist::Uniform;
    r.params = {canon(dom.lo), canon(dom.hi)};
    r.leftover = canon(mul(g, sub(dom.hi, dom.lo)));
    return r;
  }
  NF nf = canon_detail::to_nf(g);
  if (nf.size() != 1) return std::nullopt;
  auto ratio = log_deriv(nf[0], v);
  if (!ratio) return std::nullopt;
  Poly &P = ratio->num, &Q = ratio->den;
  if (P.empty()) return std::nullopt; // truly v-free handled above
  int dp = poly_deg(P), dq = poly_deg(Q);

  auto finish = [&](Recognized r, const Expr &density) -> std::optional<Recognized> {
    auto left = vfree_leftover(g, density, v);
    if (!left) return std::nullopt;
    r.leftover = *left;
    return r;
  };

  if (dq == 0) {
    Expr q0 = Q[0];
    if (dp == 1 && dom.is_full()) {
      // Gaussian: g'/g = (mu - v)/sigma^2
      Expr n1 = canon(div(P[1], q0));
      Expr sigma2 = canon(neg(pow_(n1, num(-1))));
      Expr mu = canon(neg(div(P[0], P[1])));
      Recognized r;
      r.dist = Dist::Gaussian;
      Expr sigma = canon(pow_(sigma2, num(Rational(1, 2))));
      r.params = {mu, sigma};
      if (!provably_positive(sigma2, facts)) {
        if (provably_positive(canon(neg(sigma2)), facts)) return std::nullopt;
        r.side_conditions.push_back(sigma2);
      }
      return finish(std::move(r), gaussian_density(var(v), mu, sigma));
    }
    if (dp == 0 && dom.is_pos_half()) {
      // Exponential tail: Gamma with k = 1, -1/theta = P0/Q0.
      Expr c = canon(div(P[0], q0));
      Expr theta = canon(neg(pow_(c, num(-1))));
      Recognized r;
      r.dist = Dist::Gamma;
      r.params = {num(1), theta};
      if (!provably_positive(theta, facts)) {
        if (provably_positive(canon(neg(theta)), facts)) return std::nullopt;
        r.side_conditions.push_back(theta);
      }
      return finish(std::move(r), gamma_density(var(v), num(1), theta));
    }
    return std::nullopt;
  }

  if (dq == 1 && dp <= 1) {
    // Denominator c*v: Gamma on (0,inf), or a degenerate Beta on (0,1).
    if (!is_num(poly_eval(Q, num(0)), 0)) return std::nullopt;
    Expr d1 = Q[1];
    Expr km1 = canon(div(dp >= 0 ? P[0] : num(0), d1));
    Expr lin = dp == 1 ? canon(div(P[1], d1)) : num(0);
    if (dom.is_pos_half()) {
      if (is_num(lin, 0)) return std::nullopt; // not normalizable
      Expr theta = canon(neg(pow_(lin, num(-1))));
      Expr k = canon(add(km1, num(1)));
      Recognized r;
      r.dist = Dist::Gamma;
      r.params = {k, theta};
      for (const Expr &sc : {k, theta})
        if (!provably_positive(sc, facts)) r.side_conditions.push_back(sc);
      return finish(std::move(r), gamma_density(var(v), k, theta));
    }
    if (dom.is_unit() && is_num(lin, 0)) {
      // v^a' alone: Beta(a'+1, 1).
      Expr a = canon(add(km1, num(1)));
      Recognized r;
      r.dist = Dist::Beta;
      r.params = {a, num(1)};
      if (!provably_positive(a, facts)) r.side_conditions.push_back(a);
      return finish(std::move(r), beta_density(var(v), a, num(1)));
    }
    return std::nullopt;
  }

  if (dq == 2 && dp <= 1 && dom.is_unit()) {
    // Beta: g'/g = a'/v - b'/(1-v); denominator must vanish at 0 and 1.
    if (!is_num(poly_eval(Q, num(0)), 0) || !is_num(poly_eval(Q, num(1)), 0))
      return std::nullopt;
    Poly Qd = poly_deriv(Q);
    Expr alpha1 = canon(div(poly_eval(P, num(0)), poly_eval(Qd, num(0))));
    Expr beta1 = canon(div(poly_eval(P, num(1)), poly_eval(Qd, num(1))));
    Expr a = canon(add(alpha1, num(1)));
    Expr b = canon(add(beta1, num(1)));
    Recognized r;
    r.dist = Dist::Beta;
    r.params = {a, b};
    for (const Expr &sc : {a, b})
      if (!provably_positive(sc, facts)) r.side_conditions.push_back(sc);
    return finish(std::move(r), beta_density(var(v), a, b));
  }

  return std::nullopt;
}

// ----- closed-form integral table ----------------------------------------------

// Integrates a canonical integrand over v in dom using the kernel table:
// Gaussian kernels on R, Beta kernels on (0,1), Gamma kernels on (0,inf),
// polynomials and constants on finite intervals. Piecewise factors with
// v-free guards split the integral; sums and conditionals that do not
// mention v are treated as opaque constants. Unsupported kernels return
// nullopt and the caller leaves the integral unevaluated.
inline std::optional<Expr> integrate_1d(const Expr &f0, const std::string &v,
                                        const Interval &dom, const Facts &facts,
                                        std::vector<Expr> *side_conditions = nullptr) {
  Expr f = canon(f0);
  NF nf = canon_detail::to_nf(f);
  if (nf.empty()) return num(0);
  if (nf.size() > 1) {
    // Re-factor a distributed kernel*(1-v) before resorting to termwise
    // integration: the merged Beta kernel keeps the closed form (and its
    // type) in one piece.
    if (nf.size() == 2 && !nf[0].factors.empty()) {
      Monomial common;
      for (const Factor &fc : nf[0].factors) {
        for (const Factor &g : nf[1].factors) {
          if (!equal(g.base, fc.base)) continue;
          // Exponents differing by a rational: divide out the smaller one
          // (any sign; this is division, not polynomial factoring).
          Expr d = canon(sub(g.expo_as_expr(), fc.expo_as_expr()));
          if (!is_num(d)) break;
          Factor cf = fc;
          if (d->num < 0) {
            cf.has_rat = g.has_rat;
            cf.rexp = g.rexp;
            cf.sexp = g.sexp;
          }
          common.factors.push_back(std::move(cf));
          break;
        }
      }
      if (!common.factors.empty()) {
        common.coeff = nf[0].coeff;
        Monomial inv;
        inv.coeff = Rational(1) / common.coeff;
        inv.factors = common.factors;
        for (Factor &fc : inv.factors) {
          if (fc.has_rat)
            fc.rexp = -fc.rexp;
          else
            fc.sexp = canon(neg(fc.sexp));
        }
        NF rest = canon_detail::nf_mul(nf, NF{inv});
        Expr rest_e = canon_detail::nf_to_expr(rest);
        Expr omv = canon(sub(num(1), var(v)));
        Expr rest_neg = canon(neg(rest_e));
        bool flipped = false;
        if (equal(rest_neg, omv) || equal(rest_neg, var(v))) {
          rest_e = rest_neg;
          flipped = true;
        }
        if (equal(rest_e, omv) || equal(rest_e, var(v))) {
          Monomial merged = common;
          if (flipped) merged.coeff = -merged.coeff;
          Factor extra;
          extra.base = rest_e;
          extra.rexp = 1;
          canon_detail::mono_insert(merged, std::move(extra));
          return integrate_1d(canon_detail::mono_to_expr(merged), v, dom, facts,
                              side_conditions);
        }
      }
    }
    std::vector<Expr> parts;
    for (const Monomial &m : nf) {
      auto r = integrate_1d(canon_detail::mono_to_expr(m), v, dom, facts, side_conditions);
      if (!r) return std::nullopt;
      parts.push_back(*r);
    }
    return canon(add(std::move(parts)));
  }

  const Monomial &m = nf[0];

  // Piecewise factor with v-free guards: split into cases.
  for (std::size_t fi = 0; fi < m.factors.size(); ++fi) {
    const Factor &f_pw = m.factors[fi];
    if (f_pw.base->kind != Ek::Piecewise) continue;
    const ExprNode &pwn = *f_pw.base;
    bool guards_free = true;
    for (std::size_t k = 0; k + 1 < pwn.args.size(); k += 2)
      if (contains_var(pwn.args[k], v)) guards_free = false;
    if (!guards_free) return std::nullopt;
    Monomial rest = m;
    rest.factors.erase(rest.factors.begin() + static_cast<long>(fi));
    Expr rest_e = canon_detail::mono_to_expr(rest);
    std::vector<Expr> out;
    for (std::size_t k = 0; k < pwn.args.size(); ++k) {
      if (k + 1 < pwn.args.size() && k % 2 == 0) {
        out.push_back(pwn.args[k]);
        continue;
      }
      Expr branch = mul(rest_e, pow_(pwn.args[k], f_pw.expo_as_expr()));
      auto r = integrate_1d(branch, v, dom, facts, side_conditions);
      if (!r) return std::nullopt;
      out.push_back(*r);
    }
    return canon(piecewise(std::move(out)));
  }

  // Classify the remaining factors.
  Expr v_pow, one_minus_v_pow; // symbolic exponents of v and (1-v)
  Rational v_pow_rat = 0;
  bool v_pow_is_rat = true;
  Expr mult = num(m.coeff);
  Poly expo_poly;          // exp(u) with u polynomial in v
  bool has_exp_v = false;
  Expr one_minus_v = canon(sub(num(1), var(v)));

  if (m.exp_arg.defined()) {
    if (contains_var(m.exp_arg, v)) {
      auto up = poly_of(m.exp_arg, v);
      if (!up || poly_deg(*up) > 2) return std::nullopt;
      expo_poly = *up;
      has_exp_v = true;
    } else {
      mult = canon(mul(mult, exp_(m.exp_arg)));
    }
  }
  for (const Factor &fc : m.factors) {
    bool base_dep = contains_var(fc.base, v);
    bool expo_dep = contains_var(fc.expo_as_expr(), v);
    if (!base_dep && !expo_dep) {
      mult = canon(mul(mult, pow_(fc.base, fc.expo_as_expr())));
      continue;
    }
    if (expo_dep) return std::nullopt;
    if (fc.base->kind == Ek::Var && fc.base->name == v) {
      if (v_pow.defined()) return std::nullopt;
      v_pow = fc.expo_as_expr();
      v_pow_is_rat = fc.has_rat;
      if (fc.has_rat) v_pow_rat = fc.rexp;
      continue;
    }
    if (equal(fc.base, one_minus_v)) {
      if (one_minus_v_pow.defined()) return std::nullopt;
      one_minus_v_pow = fc.expo_as_expr();
      continue;
    }
    return std::nullopt;
  }

  auto push_side = [&](const Expr &sc) {
    if (!provably_positive(sc, facts) && side_conditions) side_conditions->push_back(sc);
  };

  if (dom.is_full()) {
    // Gaussian kernel: integral of exp(a v^2 + b v + c).
    if (v_pow.defined() || one_minus_v_pow.defined()) return std::nullopt;
    if (!has_exp_v || poly_deg(expo_poly) != 2) return std::nullopt;
    Expr a = expo_poly[2];
    Expr b = expo_poly.size() > 1 ? expo_poly[1] : num(0);
    Expr c = expo_poly.size() > 0 ? expo_poly[0] : num(0);
    Expr neg_a = canon(neg(a));
    if (provably_positive(a, facts)) return std::nullopt; // divergent
    push_side(neg_a);
    Expr scale = canon(pow_(div(pi_const(), neg_a), num(Rational(1, 2))));
    Expr shift = canon(exp_(sub(c, div(mul(b, b), mul(num(4), a)))));
    return canon(mul({mult, scale, shift}));
  }

  if (dom.is_unit()) {
    // Beta kernel: v^a (1-v)^b.
    if (has_exp_v) return std::nullopt;
    Expr a = v_pow.defined() ? v_pow : num(0);
    Expr b = one_minus_v_pow.defined() ? one_minus_v_pow : num(0);
    Expr a1 = canon(add(a, num(1)));
    Expr b1 = canon(add(b, num(1)));
    push_side(a1);
    push_side(b1);
    return canon(mul(mult, beta_fn(a1, b1)));
  }

  if (dom.is_pos_half()) {
    // Gamma kernel: v^(k-1) exp(b v) with b < 0.
    if (one_minus_v_pow.defined()) return std::nullopt;
    if (!has_exp_v || poly_deg(expo_poly) > 1) return std::nullopt;
    Expr b = expo_poly.size() > 1 ? expo_poly[1] : num(0);
    Expr c = expo_poly.empty() ? num(0) : expo_poly[0];
    if (is_num(b, 0)) return std::nullopt;
    Expr neg_b = canon(neg(b));
    if (provably_positive(b, facts)) return std::nullopt;
    push_side(neg_b);
    Expr k = canon(add(v_pow.defined() ? v_pow : num(0), num(1)));
    push_side(k);
    // integral = Gamma(k) * (-b)^(-k) * exp(c)
    return canon(mul({mult, exp_(c), gamma_fn(k), pow_(neg_b, neg(k))}));
  }

  if (dom.is_finite()) {
    if (has_exp_v || one_minus_v_pow.defined()) return std::nullopt;
    if (!v_pow.defined()) {
      return canon(mul(mult, sub(dom.hi, dom.lo)));
    }
    // Power rule for rational exponents != -1.
    if (!v_pow_is_rat || v_pow_rat == -1) return std::nullopt;
    Rational p1 = v_pow_rat + 1;
    Expr anti_hi = pow_(dom.hi, num(p1));
    Expr anti_lo = pow_(dom.lo, num(p1));
    return canon(mul({mult, num(Rational(1) / p1), sub(anti_hi, anti_lo)}));
  }

  return std::nullopt;
}

} // namespace hkir

#endif
