#ifndef HKIR_MEASURE_HPP
#define HKIR_MEASURE_HPP

#include "hkir/expr.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// Monadic measure language: Ret/Weight/Bind/Plate plus primitive
// distributions. Dirichlet is surface sugar that expand_dirichlet rewrites
// into its stick-breaking form before any other pass runs.
enum class Mk { Ret, Weight, Bind, Plate, Prim };

enum class Dist { Uniform, Gaussian, Beta, Gamma, Categorical, Dirichlet };

struct MeasureNode;

class Measure {
public:
  Measure() = default;
  explicit Measure(std::shared_ptr<const MeasureNode> n) : node_(std::move(n)) {}
  bool defined() const { return node_ != nullptr; }
  const MeasureNode &operator*() const { return *node_; }
  const MeasureNode *operator->() const { return node_.get(); }
  const MeasureNode *get() const { return node_.get(); }

private:
  std::shared_ptr<const MeasureNode> node_;
};

struct MeasureNode {
  Mk kind;
  Dist dist = Dist::Gaussian;   // Prim
  std::vector<Expr> params;     // Prim parameters
  Expr e;                       // Ret value / Weight weight / Plate size
  std::string name;             // Bind or Plate binder
  Measure m1, m2;               // Bind: m1 then m2; Weight/Plate: m1
};

inline Measure make_measure(MeasureNode n) {
  return Measure(std::make_shared<const MeasureNode>(std::move(n)));
}

inline Measure ret(Expr e) {
  MeasureNode n;
  n.kind = Mk::Ret;
  n.e = std::move(e);
  return make_measure(std::move(n));
}

inline Measure weight(Expr w, Measure m) {
  MeasureNode n;
  n.kind = Mk::Weight;
  n.e = std::move(w);
  n.m1 = std::move(m);
  return make_measure(std::move(n));
}

inline Measure bind(Measure m, std::string x, Measure body) {
  MeasureNode n;
  n.kind = Mk::Bind;
  n.m1 = std::move(m);
  n.name = std::move(x);
  n.m2 = std::move(body);
  return make_measure(std::move(n));
}

inline Measure plate(Expr size, std::string i, Measure body) {
  MeasureNode n;
  n.kind = Mk::Plate;
  n.e = std::move(size);
  n.name = std::move(i);
  n.m1 = std::move(body);
  return make_measure(std::move(n));
}

inline Measure prim(Dist d, std::vector<Expr> params) {
  MeasureNode n;
  n.kind = Mk::Prim;
  n.dist = d;
  n.params = std::move(params);
  return make_measure(std::move(n));
}

inline Measure gaussian_m(Expr mu, Expr sigma) {
  return prim(Dist::Gaussian, {std::move(mu), std::move(sigma)});
}
inline Measure uniform_m(Expr a, Expr b) {
  return prim(Dist::Uniform, {std::move(a), std::move(b)});
}
inline Measure beta_m(Expr a, Expr b) {
  return prim(Dist::Beta, {std::move(a), std::move(b)});
}
inline Measure gamma_m(Expr k, Expr theta) {
  return prim(Dist::Gamma, {std::move(k), std::move(theta)});
}
inline Measure categorical_m(Expr weights) {
  return prim(Dist::Categorical, {std::move(weights)});
}
inline Measure dirichlet_m(Expr alphas) {
  return prim(Dist::Dirichlet, {std::move(alphas)});
}

inline int cmp_measure(const Measure &a, const Measure &b) {
  if (a.get() == b.get()) return 0;
  if (!a.defined() || !b.defined()) return a.defined() ? 1 : -1;
  if (a->kind != b->kind) return a->kind < b->kind ? -1 : 1;
  if (a->kind == Mk::Prim) {
    if (a->dist != b->dist) return a->dist < b->dist ? -1 : 1;
    if (a->params.size() != b->params.size())
      return a->params.size() < b->params.size() ? -1 : 1;
    for (std::size_t i = 0; i < a->params.size(); ++i)
      if (int c = cmp_expr(a->params[i], b->params[i])) return c;
    return 0;
  }
  if (int c = a->name.compare(b->name)) return c < 0 ? -1 : 1;
  if (int c = cmp_expr(a->e, b->e)) return c;
  if (int c = cmp_measure(a->m1, b->m1)) return c;
  return cmp_measure(a->m2, b->m2);
}

inline bool equal(const Measure &a, const Measure &b) { return cmp_measure(a, b) == 0; }

inline void free_vars_into(const Measure &m, std::set<std::string> &out,
                           std::set<std::string> &bound) {
  if (!m.defined()) return;
  const MeasureNode &n = *m;
  switch (n.kind) {
  case Mk::Ret:
    free_vars_into(n.e, out, bound);
    break;
  case Mk::Weight:
    free_vars_into(n.e, out, bound);
    free_vars_into(n.m1, out, bound);
    break;
  case Mk::Bind: {
    free_vars_into(n.m1, out, bound);
    bool fresh = bound.insert(n.name).second;
    free_vars_into(n.m2, out, bound);
    if (fresh) bound.erase(n.name);
    break;
  }
  case Mk::Plate: {
    free_vars_into(n.e, out, bound);
    bool fresh = bound.insert(n.name).second;
    free_vars_into(n.m1, out, bound);
    if (fresh) bound.erase(n.name);
    break;
  }
  case Mk::Prim:
    for (const Expr &p : n.params) free_vars_into(p, out, bound);
    break;
  }
}

inline std::set<std::string> free_vars(const Measure &m) {
  std::set<std::string> out, bound;
  free_vars_into(m, out, bound);
  return out;
}

Measure subst(const Measure &m, const std::string &v, const Expr &rep);

inline Measure subst(const Measure &m, const std::string &v, const Expr &rep) {
  if (!m.defined()) return m;
  MeasureNode out = *m;
  auto rename_if_captured = [&](Measure &scope) {
    if (out.name.empty() || out.name == v) return;
    if (!free_vars(rep).count(out.name)) return;
    static thread_local unsigned rename_counter = 0;
    std::string fresh = out.name + "$m" + std::to_string(rename_counter++);
    scope = subst(scope, out.name, var(fresh));
    out.name = fresh;
  };
  switch (out.kind) {
  case Mk::Ret:
    out.e = subst(out.e, v, rep);
    break;
  case Mk::Weight:
    out.e = subst(out.e, v, rep);
    out.m1 = subst(out.m1, v, rep);
    break;
  case Mk::Bind:
    out.m1 = subst(out.m1, v, rep);
    if (out.name != v) {
      rename_if_captured(out.m2);
      out.m2 = subst(out.m2, v, rep);
    }
    break;
  case Mk::Plate:
    out.e = subst(out.e, v, rep);
    if (out.name != v) {
      rename_if_captured(out.m1);
      out.m1 = subst(out.m1, v, rep);
    }
    break;
  case Mk::Prim:
    for (Expr &p : out.params) p = subst(p, v, rep);
    break;
  }
  return make_measure(std::move(out));
}

} // namespace hkir

#endif
