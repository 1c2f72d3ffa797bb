#ifndef HKIR_TYPES_HPP
#define HKIR_TYPES_HPP

#include "hkir/measure.hpp"

#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace hkir {

// Prob is an internal refinement: values in [0,1]. It never appears in the
// surface grammar (it prints as rpos) but lets stick-breaking complements
// 1-p keep a non-negative type.
enum class Tk { R, Rpos, Prob, Z, N, Measure, Array, Pair, Unit, Bool };

struct TypeNode;
using Type = std::shared_ptr<const TypeNode>;

struct TypeNode {
  Tk kind;
  Type a, b; // Measure/Array element in a; Pair in a,b
};

inline Type make_type(Tk k, Type a = nullptr, Type b = nullptr) {
  auto n = std::make_shared<TypeNode>();
  n->kind = k;
  n->a = std::move(a);
  n->b = std::move(b);
  return n;
}

inline Type t_real() { static Type t = make_type(Tk::R); return t; }
inline Type t_rpos() { static Type t = make_type(Tk::Rpos); return t; }
inline Type t_prob() { static Type t = make_type(Tk::Prob); return t; }
inline Type t_int() { static Type t = make_type(Tk::Z); return t; }
inline Type t_nat() { static Type t = make_type(Tk::N); return t; }
inline Type t_unit() { static Type t = make_type(Tk::Unit); return t; }
inline Type t_bool() { static Type t = make_type(Tk::Bool); return t; }
inline Type t_measure(Type a) { return make_type(Tk::Measure, std::move(a)); }
inline Type t_array(Type a) { return make_type(Tk::Array, std::move(a)); }
inline Type t_pair(Type a, Type b) { return make_type(Tk::Pair, std::move(a), std::move(b)); }

inline bool type_equal(const Type &x, const Type &y) {
  if (x == y) return true;
  if (!x || !y) return false;
  if (x->kind != y->kind) return false;
  switch (x->kind) {
  case Tk::Measure:
  case Tk::Array:
    return type_equal(x->a, y->a);
  case Tk::Pair:
    return type_equal(x->a, y->a) && type_equal(x->b, y->b);
  default:
    return true;
  }
}

inline bool is_numeric(const Type &t) {
  return t && (t->kind == Tk::R || t->kind == Tk::Rpos || t->kind == Tk::Prob ||
               t->kind == Tk::Z || t->kind == Tk::N);
}

// Subtype chains N <= Z <= R, N <= Rpos <= R, Prob <= Rpos.
inline bool subtype(const Type &s, const Type &t) {
  if (type_equal(s, t)) return true;
  if (!s || !t) return false;
  if (s->kind == Tk::N && (t->kind == Tk::Z || t->kind == Tk::Rpos || t->kind == Tk::R)) return true;
  if (s->kind == Tk::Prob && (t->kind == Tk::Rpos || t->kind == Tk::R)) return true;
  if ((s->kind == Tk::Z || s->kind == Tk::Rpos) && t->kind == Tk::R) return true;
  if (s->kind == Tk::Array && t->kind == Tk::Array) return subtype(s->a, t->a);
  if (s->kind == Tk::Pair && t->kind == Tk::Pair)
    return subtype(s->a, t->a) && subtype(s->b, t->b);
  if (s->kind == Tk::Measure && t->kind == Tk::Measure) return subtype(s->a, t->a);
  return false;
}

// Least upper bound in the numeric lattice, if any.
inline std::optional<Type> join(const Type &s, const Type &t) {
  if (subtype(s, t)) return t;
  if (subtype(t, s)) return s;
  if (is_numeric(s) && is_numeric(t)) {
    if (subtype(s, t_rpos()) && subtype(t, t_rpos())) return t_rpos();
    return t_real();
  }
  if (s->kind == Tk::Array && t->kind == Tk::Array) {
    auto j = join(s->a, t->a);
    if (!j) return std::nullopt;
    return t_array(*j);
  }
  if (s->kind == Tk::Pair && t->kind == Tk::Pair) {
    auto ja = join(s->a, t->a), jb = join(s->b, t->b);
    if (!ja || !jb) return std::nullopt;
    return t_pair(*ja, *jb);
  }
  return std::nullopt;
}

std::string type_to_string(const Type &t);

inline std::string type_to_string(const Type &t) {
  if (!t) return "?";
  switch (t->kind) {
  case Tk::R: return "real";
  case Tk::Rpos: return "rpos";
  case Tk::Prob: return "rpos"; // internal refinement; surfaces as rpos
  case Tk::Z: return "int";
  case Tk::N: return "nat";
  case Tk::Unit: return "unit";
  case Tk::Bool: return "bool";
  case Tk::Measure: return "(measure " + type_to_string(t->a) + ")";
  case Tk::Array: return "(array " + type_to_string(t->a) + ")";
  case Tk::Pair: return "(pair " + type_to_string(t->a) + " " + type_to_string(t->b) + ")";
  }
  return "?";
}

// Binding-time annotation for specialization (per-argument directive).
enum class StaticKind { Dynamic, KnownSize, KnownValue };

struct Param {
  std::string name;
  Type type;
  StaticKind static_kind = StaticKind::Dynamic;
};

// A program is a parameter list plus either a measure body or a pure
// expression body.
struct Program {
  std::vector<Param> params;
  std::variant<Measure, Expr> body;

  bool is_measure() const { return std::holds_alternative<Measure>(body); }
  const Measure &measure_body() const { return std::get<Measure>(body); }
  const Expr &expr_body() const { return std::get<Expr>(body); }
};

} // namespace hkir

#endif
