#ifndef HKIR_LOWER_HPP
#define HKIR_LOWER_HPP

#include "hkir/anf.hpp"
#include "hkir/imp.hpp"

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

struct LowerError : std::runtime_error {
  explicit LowerError(const std::string &m) : std::runtime_error(m) {}
};

// ----- lowering (ANF program -> imperative IR) -------------------------------------

namespace lower_detail {

// Histogram storage: each Add leaf of a reducer gets a flat buffer (or a
// scalar when no Idx level encloses it); pairs from Split/Fanout fan out
// into separate roots.
struct HistDim {
  std::string ivar; // reducer element binder
  Expr size;
};

struct HistLeafStore {
  std::string store;
  std::vector<HistDim> dims;
  Type elem_type; // carrier type of the Add leaf (N for counts, R for sums)
};

// Shape mirror of the reducer type for resolving fst/snd/idx accesses.
struct HistShape {
  enum class K { Leaf, Nop, Pair, Array } kind;
  HistLeafStore leaf;               // K::Leaf
  std::shared_ptr<HistShape> a, b;  // Pair children / Array element
};
using HistShapePtr = std::shared_ptr<HistShape>;

class Lowering {
public:
  Lowering(const std::vector<Param> &params, bool track_weight)
      : track_weight_(track_weight) {
    out_.params = params;
    for (const Param &p : params) env_.push(p.name, p.type);
  }

  ImpProgram run(const Program &p) {
    if (track_weight_) {
      Stmt w;
      w.kind = Sk::DeclScalar;
      w.name = "weight$acc";
      w.init = num(1);
      w.type = t_rpos();
      emit(std::move(w));
      env_.push("weight$acc", t_rpos());
    }
    if (p.is_measure()) {
      Expr v = lower_measure(p.measure_body());
      out_.result = v;
    } else {
      out_.result = lower_block(p.expr_body());
    }
    {
      TypeEnv env_copy = env_;
      out_.result_type = type_of(out_.result, env_copy);
    }
    out_.body = std::move(cur_);
    return std::move(out_);
  }

private:
  // ----- measure skeleton -----

  Expr lower_measure(const Measure &m) {
    const MeasureNode &n = *m;
    switch (n.kind) {
    case Mk::Ret:
      return lower_block(n.e);
    case Mk::Weight: {
      Expr w = lower_block(n.e);
      if (track_weight_) {
        Stmt s;
        s.kind = Sk::Accum;
        s.name = "weight$acc";
        s.op = AccumOp::Mul;
        s.e = w;
        emit(std::move(s));
      }
      return lower_measure(n.m1);
    }
    case Mk::Bind: {
      Expr v = lower_draw(n.m1, n.name);
      (void)v;
      return lower_measure(n.m2);
    }
    case Mk::Plate:
    case Mk::Prim: {
      std::string nm = names_.fresh("out");
      lower_draw(m, nm);
      return var(nm);
    }
    }
    throw LowerError("bad measure");
  }

  // Draws m into a variable called `name` (sampling at run time).
  Expr lower_draw(const Measure &m, const std::string &name) {
    const MeasureNode &n = *m;
    switch (n.kind) {
    case Mk::Prim: {
      if (n.dist == Dist::Dirichlet) throw LowerError("dirichlet must be expanded");
      std::vector<Expr> ps;
      for (const Expr &p : n.params) ps.push_back(lower_block(p));
      Stmt s;
      s.kind = Sk::Sample;
      s.name = name;
      s.dist = n.dist;
      s.params = std::move(ps);
      s.type = sample_type(n.dist);
      env_.push(name, s.type);
      emit(std::move(s));
      return var(name);
    }
    case Mk::Plate: {
      Expr sz = lower_block(n.e);
      if (n.m1->kind != Mk::Prim)
        throw LowerError("only plates of primitive draws lower to loops");
      Type et = sample_type(n.m1->dist);
      Stmt a;
      a.kind = Sk::Alloc;
      a.name = name;
      a.e = sz;
      a.init = num(0);
      a.type = et;
      emit(std::move(a));
      env_.push(name, t_array(et));
      Stmt f;
      f.kind = Sk::For;
      f.name = n.name;
      f.e = num(0);
      f.e2 = canon(sub(sz, num(1)));
      StmtList saved = std::move(cur_);
      cur_ = {};
      env_.push(n.name, t_nat());
      std::vector<Expr> ps;
      for (const Expr &p : n.m1->params) ps.push_back(lower_block(p));
      Stmt s;
      s.kind = Sk::Sample;
      s.name = name;
      s.sample_idx = var(n.name);
      s.dist = n.m1->dist;
      s.params = std::move(ps);
      s.type = et;
      emit(std::move(s));
      f.body = std::move(cur_);
      cur_ = std::move(saved);
      emit(std::move(f));
      return var(name);
    }
    case Mk::Weight: {
      Expr w = lower_block(n.e);
      if (track_weight_) {
        Stmt s;
        s.kind = Sk::Accum;
        s.name = "weight$acc";
        s.op = AccumOp::Mul;
        s.e = w;
        emit(std::move(s));
      }
      return lower_draw(n.m1, name);
    }
    case Mk::Bind: {
      lower_draw(n.m1, n.name);
      return lower_draw(n.m2, name);
    }
    case Mk::Ret: {
      Expr v = lower_block(n.e);
      Stmt s;
      s.kind = Sk::Let;
      s.name = name;
      s.e = v;
      TypeEnv env_copy = env_;
      s.type = type_of(v, env_copy);
      env_.push(name, s.type);
      emit(std::move(s));
      return var(name);
    }
    }
    throw LowerError("bad measure draw");
  }

  static Type sample_type(Dist d) {
    switch (d) {
    case Dist::Gaussian:
    case Dist::Uniform:
      return t_real();
    case Dist::Beta:
      return t_prob();
    case Dist::Gamma:
      return t_rpos();
    case Dist::Categorical:
      return t_nat();
    case Dist::Dirichlet:
      break;
    }
    throw LowerError("bad sample");
  }

  // ----- expression blocks -----

  // Lowers an ANF block (let chain) into statements; returns the block value
  // as an expression over scalars/arrays in scope.
  Expr lower_block(const Expr &e) {
    if (e->kind == Ek::Let) {
      lower_binding(e->name, e->args[0]);
      return lower_block(e->args[1]);
    }
    return resolve(e);
  }

  void lower_binding(const std::string &name, const Expr &rhs0) {
    Expr rhs = rhs0;
    switch (rhs->kind) {
    case Ek::Sum:
    case Ek::Prod: {
      bool is_sum = rhs->kind == Ek::Sum;
      Stmt d;
      d.kind = Sk::DeclScalar;
      d.name = name;
      d.init = num(is_sum ? 0 : 1);
      d.type = body_type(rhs->name, rhs->args[2]);
      if (!is_sum && d.type && d.type->kind == Tk::N) d.type = t_rpos();
      env_.push(name, d.type);
      emit(std::move(d));
      Stmt f;
      f.kind = Sk::For;
      f.name = rhs->name;
      f.e = resolve(rhs->args[0]);
      f.e2 = resolve(rhs->args[1]);
      StmtList saved = std::move(cur_);
      cur_ = {};
      env_.push(rhs->name, t_nat());
      emit_accum_body(name, is_sum, rhs->args[2]);
      f.body = std::move(cur_);
      cur_ = std::move(saved);
      emit(std::move(f));
      return;
    }
    case Ek::ArrayGen: {
      Expr sz = resolve(rhs->args[0]);
      Stmt a;
      a.kind = Sk::Alloc;
      a.name = name;
      a.e = sz;
      a.init = num(0);
      a.type = body_type(rhs->name, rhs->args[1]);
      env_.push(name, t_array(a.type));
      Type et = a.type;
      emit(std::move(a));
      Stmt f;
      f.kind = Sk::For;
      f.name = rhs->name;
      f.e = num(0);
      f.e2 = canon(sub(sz, num(1)));
      StmtList saved = std::move(cur_);
      cur_ = {};
      env_.push(rhs->name, t_nat());
      Expr v = lower_block(rhs->args[1]);
      Stmt st;
      st.kind = Sk::Store;
      st.name = name;
      st.e2 = var(rhs->name);
      st.e = v;
      st.type = et;
      emit(std::move(st));
      f.body = std::move(cur_);
      cur_ = std::move(saved);
      emit(std::move(f));
      return;
    }
    case Ek::HistTerm:
      lower_hist(name, rhs);
      return;
    case Ek::ArrayLit: {
      Stmt a;
      a.kind = Sk::Alloc;
      a.name = name;
      a.e = num(Rational(static_cast<long>(rhs->args.size())));
      a.init = num(0);
      TypeEnv env_copy = env_;
      Type at = type_of(rhs, env_copy);
      a.type = at->a;
      env_.push(name, at);
      emit(std::move(a));
      for (std::size_t i = 0; i < rhs->args.size(); ++i) {
        Stmt st;
        st.kind = Sk::Store;
        st.name = name;
        st.e2 = num(Rational(static_cast<long>(i)));
        st.e = resolve(rhs->args[i]);
        emit(std::move(st));
      }
      return;
    }
    case Ek::Piecewise: {
      bool has_lets = false;
      for (std::size_t i = 1; i < rhs->args.size(); i += 2)
        if (rhs->args[i]->kind == Ek::Let) has_lets = true;
      if (rhs->args.back()->kind == Ek::Let) has_lets = true;
      if (!has_lets) break; // plain expression piecewise falls through
      Stmt d;
      d.kind = Sk::DeclScalar;
      d.name = name;
      d.init = num(0);
      TypeEnv env_copy = env_;
      d.type = strip_lets_type(rhs, env_copy);
      env_.push(name, d.type);
      emit(std::move(d));
      lower_pw_assign(name, rhs, 0);
      return;
    }
    default:
      break;
    }
    {
      // Partial histogram accesses become aliases, not statements.
      PendingAccess pa;
      bool partial = false;
      auto r = resolve_access(rhs, pa, partial);
      if (partial) {
        env_.push(name, shape_type(*pa.shape));
        hist_alias_[name] = std::move(pa);
        return;
      }
      (void)r;
    }
    Stmt s;
    s.kind = Sk::Let;
    s.name = name;
    s.e = resolve(rhs);
    TypeEnv env_copy = env_;
    s.type = type_of(s.e, env_copy);
    env_.push(name, s.type);
    emit(std::move(s));
  }

  // Masked loop bodies (a piecewise whose untaken branch is the monoid
  // identity) lower to guarded accumulations, so fused loops share one test.
  void emit_accum_body(const std::string &name, bool is_sum, const Expr &body) {
    Expr identity = num(is_sum ? 0 : 1);
    if (body->kind == Ek::Let) {
      const Expr &rhs = body->args[0], &rest = body->args[1];
      // Terminal masked value: let x = pw(g, v, identity) in x.
      if (rest->kind == Ek::Var && rest->name == body->name && rhs->kind == Ek::Piecewise &&
          rhs->args.size() == 3 && equal(rhs->args.back(), identity) &&
          rhs->args[0]->kind != Ek::Let) {
        Stmt iff;
        iff.kind = Sk::If;
        iff.e = resolve(rhs->args[0]);
        StmtList saved = std::move(cur_);
        cur_ = {};
        emit_accum_body(name, is_sum, rhs->args[1]);
        iff.body = std::move(cur_);
        cur_ = std::move(saved);
        emit(std::move(iff));
        return;
      }
      lower_binding(body->name, rhs);
      emit_accum_body(name, is_sum, rest);
      return;
    }
    Stmt acc;
    acc.kind = Sk::Accum;
    acc.name = name;
    acc.op = is_sum ? AccumOp::Add : AccumOp::Mul;
    acc.e = resolve(body);
    emit(std::move(acc));
  }

  Type strip_lets_type(const Expr &e, TypeEnv &env) {
    if (e->kind == Ek::Let) {
      Type rt = strip_lets_type(e->args[0], env);
      env.push(e->name, rt);
      Type t = strip_lets_type(e->args[1], env);
      env.pop();
      return t;
    }
    if (e->kind == Ek::Piecewise) {
      Type t = strip_lets_type(e->args[1], env);
      for (std::size_t i = 3; i < e->args.size(); i += 2) {
        auto j = join(t, strip_lets_type(e->args[i], env));
        t = j ? *j : t_real();
      }
      auto j = join(t, strip_lets_type(e->args.back(), env));
      return j ? *j : t_real();
    }
    return type_of(e, env);
  }

  void lower_pw_assign(const std::string &name, const Expr &pw, std::size_t gi) {
    if (gi + 1 >= pw->args.size()) {
      // default branch
      StmtList saved = std::move(cur_);
      cur_ = {};
      Expr v = lower_block(pw->args.back());
      Stmt a;
      a.kind = Sk::Assign;
      a.name = name;
      a.e = v;
      emit(std::move(a));
      StmtList blk = std::move(cur_);
      cur_ = std::move(saved);
      for (Stmt &s : blk) emit(std::move(s));
      return;
    }
    Stmt iff;
    iff.kind = Sk::If;
    iff.e = resolve(pw->args[gi]);
    StmtList saved = std::move(cur_);
    cur_ = {};
    Expr v = lower_block(pw->args[gi + 1]);
    Stmt a;
    a.kind = Sk::Assign;
    a.name = name;
    a.e = v;
    emit(std::move(a));
    iff.body = std::move(cur_);
    cur_ = {};
    lower_pw_assign(name, pw, gi + 2);
    iff.orelse = std::move(cur_);
    cur_ = std::move(saved);
    emit(std::move(iff));
  }

  Type body_type(const std::string &binder, const Expr &body) {
    TypeEnv env_copy = env_;
    env_copy.push(binder, t_nat());
    return strip_lets_type(body, env_copy);
  }

  // ----- histogram lowering -----

  Type shape_type(const HistShape &sh) {
    switch (sh.kind) {
    case HistShape::K::Leaf:
      // Enclosing Array nodes already account for the Idx dimensions.
      return sh.leaf.elem_type ? sh.leaf.elem_type : t_real();
    case HistShape::K::Nop:
      return t_unit();
    case HistShape::K::Pair:
      return t_pair(shape_type(*sh.a), shape_type(*sh.b));
    case HistShape::K::Array:
      return t_array(shape_type(*sh.a));
    }
    return t_unit();
  }

  void lower_hist(const std::string &name, const Expr &h) {
    HistShapePtr shape = declare_reducer(name, h->red, {}, h->name);
    hist_shapes_[name] = shape;
    env_.push(name, shape_type(*shape));
    Stmt f;
    f.kind = Sk::For;
    f.name = h->name;
    f.e = resolve(h->args[0]);
    f.e2 = resolve(h->args[1]);
    StmtList saved = std::move(cur_);
    cur_ = {};
    env_.push(h->name, t_nat());
    emit_update(h->red, *shape, {});
    env_.pop();
    f.body = std::move(cur_);
    cur_ = std::move(saved);
    // Marks a histogram update loop; instrumentation counts its iterations.
    f.params.push_back(var("$hist"));
    emit(std::move(f));
  }

  HistShapePtr declare_reducer(const std::string &base, const ReducerPtr &r,
                               std::vector<HistDim> dims, const std::string &jvar) {
    auto shape = std::make_shared<HistShape>();
    switch (r->kind) {
    case Rk::RAdd: {
      shape->kind = HistShape::K::Leaf;
      shape->leaf.store = dims.empty() ? base : names_.fresh(base + "$buf");
      shape->leaf.dims = dims;
      // Carrier type follows the payload: counting reducers stay natural
      // so type-driven log-space does not lose them downstream.
      {
        TypeEnv env_copy = env_;
        env_copy.push(jvar, t_nat());
        for (const HistDim &d : dims) env_copy.push(d.ivar, t_nat());
        Type bt = type_of(r->e, env_copy);
        shape->leaf.elem_type = subtype(bt, t_nat()) ? t_nat() : t_real();
      }
      if (dims.empty()) {
        Stmt d;
        d.kind = Sk::DeclScalar;
        d.name = shape->leaf.store;
        d.init = num(0);
        d.type = shape->leaf.elem_type;
        env_.push(d.name, d.type);
        emit(std::move(d));
      } else {
        Expr total = dims[0].size;
        for (std::size_t k = 1; k < dims.size(); ++k) {
          if (contains_var(dims[k].size, dims[k - 1].ivar))
            throw LowerError("ragged histogram storage is not lowered");
          total = canon(mul(total, dims[k].size));
        }
        Stmt a;
        a.kind = Sk::Alloc;
        a.name = shape->leaf.store;
        a.e = total;
        a.init = num(0);
        a.type = shape->leaf.elem_type;
        env_.push(a.name, t_array(shape->leaf.elem_type));
        emit(std::move(a));
      }
      return shape;
    }
    case Rk::RNop:
      shape->kind = HistShape::K::Nop;
      return shape;
    case Rk::RIdx: {
      shape->kind = HistShape::K::Array;
      std::vector<HistDim> d2 = dims;
      d2.push_back({r->ivar, resolve(r->size)});
      shape->a = declare_reducer(base, r->r1, std::move(d2), jvar);
      return shape;
    }
    case Rk::RSplit:
    case Rk::RFanout:
      shape->kind = HistShape::K::Pair;
      shape->a = declare_reducer(base, r->r1, dims, jvar);
      shape->b = declare_reducer(base, r->r2, dims, jvar);
      return shape;
    }
    throw LowerError("bad reducer");
  }

  // Emits the per-index update statements; `idxs` are the resolved selector
  // atoms for enclosing Idx levels.
  void emit_update(const ReducerPtr &r, const HistShape &shape, std::vector<Expr> idxs) {
    switch (r->kind) {
    case Rk::RAdd: {
      Stmt s;
      if (idxs.empty()) {
        s.kind = Sk::Accum;
        s.name = shape.leaf.store;
        s.op = AccumOp::Add;
        s.e = resolve(r->e);
      } else {
        s.kind = Sk::AccumElem;
        s.name = shape.leaf.store;
        s.op = AccumOp::Add;
        s.e = resolve(r->e);
        s.e2 = flat_index(shape.leaf.dims, idxs);
      }
      emit(std::move(s));
      return;
    }
    case Rk::RNop:
      return;
    case Rk::RIdx: {
      Expr sel = resolve(r->e);
      idxs.push_back(sel);
      // The element binder stands for the selected index inside the body.
      env_.push(r->ivar, t_nat());
      ReducerPtr inner = subst_reducer(r->r1, r->ivar, sel);
      emit_update(inner, *shape.a, idxs);
      return;
    }
    case Rk::RSplit: {
      Stmt iff;
      iff.kind = Sk::If;
      iff.e = resolve(r->e);
      StmtList saved = std::move(cur_);
      cur_ = {};
      emit_update(r->r1, *shape.a, idxs);
      iff.body = std::move(cur_);
      cur_ = {};
      emit_update(r->r2, *shape.b, idxs);
      iff.orelse = std::move(cur_);
      cur_ = std::move(saved);
      emit(std::move(iff));
      return;
    }
    case Rk::RFanout:
      emit_update(r->r1, *shape.a, idxs);
      emit_update(r->r2, *shape.b, idxs);
      return;
    }
  }

  Expr flat_index(const std::vector<HistDim> &dims, const std::vector<Expr> &idxs) {
    Expr acc = idxs[0];
    for (std::size_t k = 1; k < idxs.size(); ++k)
      acc = canon(add(mul(acc, dims[k].size), idxs[k]));
    return acc;
  }

  // A binding whose right-hand side reaches only part-way into a histogram
  // value (a pair or array level) becomes an alias that later accesses
  // continue from.
  struct PendingAccess {
    const HistShape *shape;
    std::vector<Expr> idxs;
  };

  // Rewrites accesses into histogram values (fst/snd/idx chains rooted at a
  // hist binding or alias) into direct loads from the leaf stores; leaves
  // everything else intact.
  Expr resolve(const Expr &e) {
    PendingAccess pa;
    bool partial = false;
    if (auto r = resolve_access(e, pa, partial)) return *r;
    if (partial) throw LowerError("histogram value used whole in an expression");
    ExprNode n = *e;
    for (Expr &a : n.args) a = resolve(a);
    return make_expr(std::move(n));
  }

  std::optional<Expr> resolve_access(const Expr &e, PendingAccess &out_partial, bool &partial) {
    partial = false;
    // Peel the access path down to a variable root.
    std::vector<std::pair<int, Expr>> path; // (0=fst,1=snd,2=index), index expr
    const Expr *cur = &e;
    while (true) {
      const ExprNode &n = **cur;
      if (n.kind == Ek::Fst) {
        path.push_back({0, Expr()});
        cur = &n.args[0];
      } else if (n.kind == Ek::Snd) {
        path.push_back({1, Expr()});
        cur = &n.args[0];
      } else if (n.kind == Ek::Index) {
        path.push_back({2, n.args[1]});
        cur = &n.args[0];
      } else {
        break;
      }
    }
    if ((*cur)->kind != Ek::Var) return std::nullopt;
    const HistShape *shape = nullptr;
    std::vector<Expr> idxs;
    auto it = hist_shapes_.find((*cur)->name);
    if (it != hist_shapes_.end()) {
      shape = it->second.get();
    } else {
      auto al = hist_alias_.find((*cur)->name);
      if (al == hist_alias_.end()) return std::nullopt;
      shape = al->second.shape;
      idxs = al->second.idxs;
    }
    for (std::size_t k = path.size(); k-- > 0;) {
      auto &[kind, idx] = path[k];
      switch (shape->kind) {
      case HistShape::K::Pair:
        if (kind == 0)
          shape = shape->a.get();
        else if (kind == 1)
          shape = shape->b.get();
        else
          throw LowerError("histogram access shape mismatch");
        break;
      case HistShape::K::Array:
        if (kind != 2) throw LowerError("histogram access shape mismatch");
        idxs.push_back(resolve(idx));
        shape = shape->a.get();
        break;
      default:
        throw LowerError("histogram access shape mismatch");
      }
    }
    if (shape->kind == HistShape::K::Nop) return num(0);
    if (shape->kind != HistShape::K::Leaf) {
      partial = true;
      out_partial.shape = shape;
      out_partial.idxs = std::move(idxs);
      return std::nullopt;
    }
    if (idxs.empty()) return var(shape->leaf.store);
    return index(var(shape->leaf.store), flat_index(shape->leaf.dims, idxs));
  }

  void emit(Stmt s) { cur_.push_back(std::move(s)); }

  ImpProgram out_;
  StmtList cur_;
  TypeEnv env_;
  NameGen names_;
  bool track_weight_;
  std::map<std::string, HistShapePtr> hist_shapes_;
  std::map<std::string, PendingAccess> hist_alias_;
};

} // namespace lower_detail

// ----- loop fusion -------------------------------------------------------------

namespace fuse_detail {

inline void names_of_expr(const Expr &e, std::set<std::string> &out) {
  for (const std::string &v : free_vars(e)) out.insert(v);
}

struct Effects {
  std::set<std::string> reads, writes;
};

inline void effects_of(const Stmt &s, Effects &eff) {
  auto rd = [&](const Expr &e) {
    if (e.defined()) names_of_expr(e, eff.reads);
  };
  switch (s.kind) {
  case Sk::Alloc:
    rd(s.e);
    rd(s.init);
    eff.writes.insert(s.name);
    break;
  case Sk::DeclScalar:
    rd(s.init);
    eff.writes.insert(s.name);
    break;
  case Sk::Let:
    rd(s.e);
    eff.writes.insert(s.name);
    break;
  case Sk::Assign:
    rd(s.e);
    eff.writes.insert(s.name);
    break;
  case Sk::Store:
  case Sk::AccumElem:
    rd(s.e);
    rd(s.e2);
    eff.writes.insert(s.name);
    if (s.kind == Sk::AccumElem) eff.reads.insert(s.name);
    break;
  case Sk::Accum:
    rd(s.e);
    eff.writes.insert(s.name);
    eff.reads.insert(s.name);
    break;
  case Sk::For:
    rd(s.e);
    rd(s.e2);
    for (const Stmt &c : s.body) effects_of(c, eff);
    eff.reads.erase(s.name);
    break;
  case Sk::If:
    rd(s.e);
    for (const Stmt &c : s.body) effects_of(c, eff);
    for (const Stmt &c : s.orelse) effects_of(c, eff);
    break;
  case Sk::Sample:
    for (const Expr &p : s.params) rd(p);
    rd(s.sample_idx);
    eff.writes.insert(s.name);
    break;
  }
}

inline Effects effects_of(const Stmt &s) {
  Effects e;
  effects_of(s, e);
  return e;
}

inline bool disjoint(const std::set<std::string> &a, const std::set<std::string> &b) {
  for (const auto &x : a)
    if (b.count(x)) return false;
  return true;
}

inline Stmt rename_loop_var(Stmt s, const std::string &from, const std::string &to);

inline void rename_in_list(StmtList &list, const std::string &from, const std::string &to) {
  for (Stmt &s : list) s = rename_loop_var(std::move(s), from, to);
}

inline Stmt rename_loop_var(Stmt s, const std::string &from, const std::string &to) {
  Expr v = var(to);
  auto sub = [&](Expr &e) {
    if (e.defined()) e = subst(e, from, v);
  };
  sub(s.e);
  sub(s.e2);
  sub(s.init);
  sub(s.sample_idx);
  for (Expr &p : s.params) sub(p);
  if (s.kind == Sk::For && s.name == from) return s; // shadowed
  rename_in_list(s.body, from, to);
  rename_in_list(s.orelse, from, to);
  return s;
}

// Merges consecutive guarded blocks with the same guard (fused loop bodies
// produce runs of identical tests).
inline void merge_adjacent_ifs(StmtList &list) {
  for (Stmt &s : list) {
    merge_adjacent_ifs(s.body);
    merge_adjacent_ifs(s.orelse);
  }
  for (std::size_t i = 0; i + 1 < list.size();) {
    if (list[i].kind == Sk::If && list[i + 1].kind == Sk::If &&
        equal(list[i].e, list[i + 1].e)) {
      // The first block must not write anything the second guard reads.
      std::set<std::string> guard_reads = free_vars(list[i].e);
      Effects ei;
      for (const Stmt &c : list[i].body) effects_of(c, ei);
      for (const Stmt &c : list[i].orelse) effects_of(c, ei);
      if (disjoint(ei.writes, guard_reads)) {
        for (Stmt &c : list[i + 1].body) list[i].body.push_back(std::move(c));
        for (Stmt &c : list[i + 1].orelse) list[i].orelse.push_back(std::move(c));
        list.erase(list.begin() + static_cast<long>(i + 1));
        continue;
      }
    }
    ++i;
  }
}

// Accumulator initializations (allocs and zero-decls) move to the block top
// when nothing computed in between feeds them, so that the loops they
// initialize become fusion candidates.
inline void hoist_inits(StmtList &list) {
  for (Stmt &s : list) {
    hoist_inits(s.body);
    hoist_inits(s.orelse);
  }
  StmtList front, rest;
  std::set<std::string> blocked;
  for (Stmt &s : list) {
    if (s.kind == Sk::Alloc || s.kind == Sk::DeclScalar) {
      std::set<std::string> fv;
      if (s.e.defined()) names_of_expr(s.e, fv);
      if (s.init.defined()) names_of_expr(s.init, fv);
      if (disjoint(fv, blocked)) {
        front.push_back(std::move(s));
        continue;
      }
    }
    Effects eff = effects_of(s);
    blocked.insert(eff.writes.begin(), eff.writes.end());
    rest.push_back(std::move(s));
  }
  for (Stmt &s : rest) front.push_back(std::move(s));
  list = std::move(front);
}

// Fuses independent for-loops with identical (canonical) bounds within one
// block, allowing moves across intervening independent statements.
inline void fuse_block(StmtList &list) {
  for (Stmt &s : list) {
    fuse_block(s.body);
    fuse_block(s.orelse);
  }
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < list.size() && !changed; ++i) {
      if (list[i].kind != Sk::For) continue;
      Effects ei = effects_of(list[i]);
      Effects between;
      for (std::size_t j = i + 1; j < list.size(); ++j) {
        if (list[j].kind == Sk::For && equal(canon(list[i].e), canon(list[j].e)) &&
            equal(canon(list[i].e2), canon(list[j].e2))) {
          Effects ej = effects_of(list[j]);
          bool dep_between = !disjoint(ej.reads, between.writes) ||
                             !disjoint(ej.writes, between.writes) ||
                             !disjoint(ej.writes, between.reads);
          bool dep_loops = !disjoint(ej.reads, ei.writes) || !disjoint(ei.reads, ej.writes) ||
                           !disjoint(ej.writes, ei.writes);
          if (!dep_between && !dep_loops) {
            Stmt merged = list[i];
            Stmt other = list[j];
            if (other.name != merged.name)
              rename_in_list(other.body, other.name, merged.name);
            for (Stmt &c : other.body) merged.body.push_back(std::move(c));
            // Histogram markers combine.
            for (const Expr &p : other.params) merged.params.push_back(p);
            list[i] = std::move(merged);
            list.erase(list.begin() + static_cast<long>(j));
            changed = true;
            break;
          }
        }
        Effects ejs = effects_of(list[j]);
        between.reads.insert(ejs.reads.begin(), ejs.reads.end());
        between.writes.insert(ejs.writes.begin(), ejs.writes.end());
      }
    }
  }
}

} // namespace fuse_detail

// Lowers a post-LICM ANF program into the imperative IR, fusing independent
// loops with identical bounds on the way out.
namespace fuse_detail {

// Block-local copy propagation: a pure scalar let used exactly once at the
// same nesting level (not under a loop or guard) folds into its use. This
// is lowering hygiene, not one of the ablatable passes.
inline void count_var_uses(const Expr &e, std::map<std::string, int> &uses) {
  if (e->kind == Ek::Var) {
    auto it = uses.find(e->name);
    if (it != uses.end()) ++it->second;
    return;
  }
  for (const Expr &a : e->args) count_var_uses(a, uses);
}

inline void count_uses_stmt(const Stmt &s, std::map<std::string, int> &uses) {
  if (s.e.defined()) count_var_uses(s.e, uses);
  if (s.e2.defined()) count_var_uses(s.e2, uses);
  if (s.init.defined()) count_var_uses(s.init, uses);
  if (s.sample_idx.defined()) count_var_uses(s.sample_idx, uses);
  for (const Expr &p : s.params) count_var_uses(p, uses);
  for (const Stmt &c : s.body) count_uses_stmt(c, uses);
  for (const Stmt &c : s.orelse) count_uses_stmt(c, uses);
}

inline Expr subst_everywhere(const Expr &e, const std::map<std::string, Expr> &env) {
  if (e->kind == Ek::Var) {
    auto it = env.find(e->name);
    return it == env.end() ? e : it->second;
  }
  ExprNode n = *e;
  bool changed = false;
  for (Expr &a : n.args) {
    Expr b = subst_everywhere(a, env);
    if (!b.same_object(a)) changed = true;
    a = b;
  }
  return changed ? make_expr(std::move(n)) : e;
}

inline void inline_single_use(StmtList &list, const std::map<std::string, int> &uses) {
  std::map<std::string, Expr> pending;
  StmtList out;
  auto apply = [&](Expr &e) {
    if (e.defined() && !pending.empty()) e = subst_everywhere(e, pending);
  };
  for (Stmt &s : list) {
    apply(s.e);
    apply(s.e2);
    apply(s.init);
    apply(s.sample_idx);
    for (Expr &p : s.params) apply(p);
    if (s.kind == Sk::Let) {
      auto it = uses.find(s.name);
      if (it != uses.end() && it->second <= 1) {
        // Defer into the (single, same-level) use; nested uses under loops
        // or guards keep the binding to avoid re-evaluation.
        bool used_nested = false;
        for (const Stmt &rest : list) {
          for (const Stmt &c : rest.body) {
            std::map<std::string, int> u{{s.name, 0}};
            count_uses_stmt(c, u);
            if (u[s.name] > 0) used_nested = true;
          }
          for (const Stmt &c : rest.orelse) {
            std::map<std::string, int> u{{s.name, 0}};
            count_uses_stmt(c, u);
            if (u[s.name] > 0) used_nested = true;
          }
        }
        if (!used_nested) {
          pending[s.name] = s.e;
          continue;
        }
      }
    }
    inline_single_use(s.body, uses);
    inline_single_use(s.orelse, uses);
    out.push_back(std::move(s));
  }
  list = std::move(out);
}

inline void copy_propagate(ImpProgram &p) {
  std::map<std::string, int> uses;
  auto seed = [&](const StmtList &l, auto &&self) -> void {
    for (const Stmt &s : l) {
      if (s.kind == Sk::Let) uses.emplace(s.name, 0);
      self(s.body, self);
      self(s.orelse, self);
    }
  };
  seed(p.body, seed);
  for (const Stmt &s : p.body) count_uses_stmt(s, uses);
  count_var_uses(p.result, uses);
  inline_single_use(p.body, uses);
}

} // namespace fuse_detail

inline ImpProgram fuse_and_lower(const Program &p, bool fuse = true, bool track_weight = true) {
  lower_detail::Lowering lowering(p.params, track_weight);
  ImpProgram out = lowering.run(p);
  if (fuse) {
    fuse_detail::hoist_inits(out.body);
    fuse_detail::fuse_block(out.body);
    fuse_detail::merge_adjacent_ifs(out.body);
  }
  fuse_detail::copy_propagate(out);
  return out;
}

// ----- common indexing-expression elimination ---------------------------------

namespace cie_detail {

inline void count_indexing(const Expr &e, const std::set<std::string> &inputs,
                           std::map<std::string, std::pair<Expr, int>> &counts) {
  const ExprNode &n = *e;
  if (n.kind == Ek::Index && n.args[0]->kind == Ek::Var && inputs.count(n.args[0]->name)) {
    std::string key = to_string(e);
    auto it = counts.find(key);
    if (it == counts.end())
      counts[key] = {e, 1};
    else
      it->second.second++;
  }
  for (const Expr &a : n.args) count_indexing(a, inputs, counts);
}

inline Expr replace_indexing(const Expr &e, const std::string &key, const Expr &rep) {
  if (to_string(e) == key) return rep;
  ExprNode n = *e;
  for (Expr &a : n.args) a = replace_indexing(a, key, rep);
  return make_expr(std::move(n));
}

inline void stmt_exprs(Stmt &s, std::vector<Expr *> &out) {
  if (s.e.defined()) out.push_back(&s.e);
  if (s.e2.defined()) out.push_back(&s.e2);
  if (s.init.defined()) out.push_back(&s.init);
  if (s.sample_idx.defined()) out.push_back(&s.sample_idx);
  for (Expr &p : s.params) out.push_back(&p);
}

inline void cie_block(StmtList &list, const std::set<std::string> &inputs, NameGen &names) {
  for (Stmt &s : list) {
    if (s.kind == Sk::For) {
      // Count repeated input-array reads across the loop body (this level
      // only; nested loops handled recursively).
      std::map<std::string, std::pair<Expr, int>> counts;
      for (Stmt &c : s.body) {
        std::vector<Expr *> es;
        stmt_exprs(c, es);
        for (Expr *e : es) count_indexing(*e, inputs, counts);
      }
      StmtList pre;
      for (auto &[key, entry] : counts) {
        auto &[expr, cnt] = entry;
        if (cnt < 2) continue;
        // The index expression must only use names already in scope at the
        // body top; ANF atoms satisfy this.
        std::string tmp = names.fresh("cie");
        Stmt let;
        let.kind = Sk::Let;
        let.name = tmp;
        let.e = expr;
        let.type = t_real();
        pre.push_back(std::move(let));
        for (Stmt &c : s.body) {
          std::vector<Expr *> es;
          stmt_exprs(c, es);
          for (Expr *e : es) *e = replace_indexing(*e, key, var(tmp));
        }
      }
      s.body.insert(s.body.begin(), pre.begin(), pre.end());
      cie_block(s.body, inputs, names);
    }
    cie_block(s.orelse, inputs, names);
    if (s.kind == Sk::If) cie_block(s.body, inputs, names);
  }
}

} // namespace cie_detail

inline ImpProgram eliminate_common_indexing(ImpProgram p) {
  std::set<std::string> inputs;
  for (const Param &param : p.params)
    if (param.type && param.type->kind == Tk::Array) inputs.insert(param.name);
  NameGen names;
  cie_detail::cie_block(p.body, inputs, names);
  return p;
}

// ----- specialization -----------------------------------------------------------

struct StaticInfo {
  std::map<std::string, long> sizes;              // known array sizes
  std::map<std::string, Rational> scalar_values;  // known scalar values
  std::map<std::string, std::vector<Rational>> array_values; // known contents
};

struct SpecializeError : std::runtime_error {
  explicit SpecializeError(const std::string &m) : std::runtime_error(m) {}
};

namespace spec_detail {

inline Expr fold(const Expr &e, const StaticInfo &info) {
  ExprNode n = *e;
  switch (n.kind) {
  case Ek::Size:
    if (n.args[0]->kind == Ek::Var) {
      auto it = info.sizes.find(n.args[0]->name);
      if (it != info.sizes.end()) return num(Rational(it->second));
    }
    break;
  case Ek::Var: {
    auto it = info.scalar_values.find(n.name);
    if (it != info.scalar_values.end()) return num(it->second);
    return e;
  }
  case Ek::Index:
    if (n.args[0]->kind == Ek::Var) {
      auto it = info.array_values.find(n.args[0]->name);
      Expr idx = fold(n.args[1], info);
      if (it != info.array_values.end() && is_num(idx) && is_integer(idx->num)) {
        long k = idx->num.convert_to<long>();
        if (k >= 0 && k < static_cast<long>(it->second.size())) return num(it->second[k]);
      }
      ExprNode m = *e;
      m.args[1] = idx;
      m.args[0] = fold(m.args[0], info);
      return make_expr(std::move(m));
    }
    break;
  default:
    break;
  }
  for (Expr &a : n.args) a = fold(a, info);
  return canon(make_expr(std::move(n)));
}

inline void specialize_block(StmtList &list, const StaticInfo &info,
                             std::map<std::string, long> &alloc_sizes) {
  for (Stmt &s : list) {
    if (s.e.defined()) s.e = fold(s.e, info);
    if (s.e2.defined()) s.e2 = fold(s.e2, info);
    if (s.init.defined()) s.init = fold(s.init, info);
    if (s.sample_idx.defined()) s.sample_idx = fold(s.sample_idx, info);
    for (Expr &p : s.params) p = fold(p, info);
    if (s.kind == Sk::Alloc && is_num(s.e) && is_integer(s.e->num)) {
      long sz = s.e->num.convert_to<long>();
      auto it = alloc_sizes.find(s.name);
      if (it != alloc_sizes.end() && it->second != sz)
        throw SpecializeError("conflicting sizes inferred for '" + s.name + "'");
      alloc_sizes[s.name] = sz;
    }
    specialize_block(s.body, info, alloc_sizes);
    specialize_block(s.orelse, info, alloc_sizes);
  }
}

} // namespace spec_detail

// Substitutes known sizes/values, constant-folds, and moves every
// top-level allocation whose size became a literal into the preamble
// (re-initialization stays in the body, so repeated invocations reuse the
// buffers without allocating).
inline ImpProgram specialize(ImpProgram p, const StaticInfo &info) {
  std::map<std::string, long> alloc_sizes;
  spec_detail::specialize_block(p.preamble, info, alloc_sizes);
  spec_detail::specialize_block(p.body, info, alloc_sizes);
  p.result = spec_detail::fold(p.result, info);
  StmtList body;
  for (Stmt &s : p.body) {
    if (s.kind == Sk::Alloc && is_num(s.e) && is_integer(s.e->num)) {
      Stmt pre = s;
      p.preamble.push_back(std::move(pre));
      // Re-initialize in place each invocation.
      Stmt fill;
      fill.kind = Sk::Store;
      fill.name = s.name;
      fill.e2 = Expr(); // undefined index = fill whole array
      fill.e = s.init;
      fill.type = s.type;
      body.push_back(std::move(fill));
    } else {
      body.push_back(std::move(s));
    }
  }
  p.body = std::move(body);
  return p;
}

} // namespace hkir

#endif
