#ifndef HKIR_ANF_HPP
#define HKIR_ANF_HPP

#include "hkir/typecheck.hpp"

#include <map>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// A-normal form: every compound right-hand side is a single operation over
// atoms, every loop body is itself ANF. Loop-valued bindings (sums,
// products, comprehensions, histogram folds) are placed at the innermost
// enclosing loop rather than inside piecewise branches, so code motion
// only ever reasons about loop nesting. Identical loop bindings in one
// scope are shared (alpha-invariant structural key).

namespace anf_detail {

inline bool is_atom(const Expr &e) {
  switch (e->kind) {
  case Ek::Num:
  case Ek::Var:
  case Ek::Pi:
  case Ek::BoolLit:
    return true;
  default:
    return false;
  }
}

inline bool is_loop_rhs(const Expr &e) {
  switch (e->kind) {
  case Ek::Sum:
  case Ek::Prod:
  case Ek::ArrayGen:
  case Ek::HistTerm:
    return true;
  default:
    return false;
  }
}

// Alpha-invariant structural key for CSE over loop bindings.
inline void cse_key_rec(const Expr &e, std::map<std::string, std::string> &ren, int &counter,
                        std::string &out);

inline void cse_key_reducer(const ReducerPtr &r, std::map<std::string, std::string> &ren,
                            int &counter, std::string &out) {
  if (!r) return;
  out += "(r" + std::to_string(static_cast<int>(r->kind));
  if (r->e.defined()) cse_key_rec(r->e, ren, counter, out);
  if (r->size.defined()) cse_key_rec(r->size, ren, counter, out);
  if (r->kind == Rk::RIdx) {
    std::string b = "b" + std::to_string(counter++);
    auto saved = ren.count(r->ivar) ? std::optional<std::string>(ren[r->ivar]) : std::nullopt;
    ren[r->ivar] = b;
    cse_key_reducer(r->r1, ren, counter, out);
    if (saved) ren[r->ivar] = *saved; else ren.erase(r->ivar);
  } else {
    cse_key_reducer(r->r1, ren, counter, out);
    cse_key_reducer(r->r2, ren, counter, out);
  }
  out += ")";
}

inline void cse_key_rec(const Expr &e, std::map<std::string, std::string> &ren, int &counter,
                        std::string &out) {
  const ExprNode &n = *e;
  switch (n.kind) {
  case Ek::Num:
    out += to_string(n.num);
    return;
  case Ek::Var: {
    auto it = ren.find(n.name);
    out += it == ren.end() ? n.name : it->second;
    return;
  }
  default:
    break;
  }
  out += "(" + std::to_string(static_cast<int>(n.kind));
  if (n.kind == Ek::Cmp) out += cmp_name(n.cmp);
  auto with_binder = [&](std::size_t scope_arg) {
    std::string b = "b" + std::to_string(counter++);
    for (std::size_t i = 0; i < n.args.size(); ++i) {
      if (i == scope_arg) {
        auto saved = ren.count(n.name) ? std::optional<std::string>(ren[n.name]) : std::nullopt;
        ren[n.name] = b;
        out += " ";
        cse_key_rec(n.args[i], ren, counter, out);
        if (saved) ren[n.name] = *saved; else ren.erase(n.name);
      } else {
        out += " ";
        cse_key_rec(n.args[i], ren, counter, out);
      }
    }
  };
  switch (n.kind) {
  case Ek::Sum:
  case Ek::Prod:
    with_binder(2);
    break;
  case Ek::ArrayGen:
  case Ek::Let:
    with_binder(1);
    break;
  case Ek::HistTerm: {
    std::string b = "b" + std::to_string(counter++);
    for (const Expr &a : n.args) {
      out += " ";
      cse_key_rec(a, ren, counter, out);
    }
    auto saved = ren.count(n.name) ? std::optional<std::string>(ren[n.name]) : std::nullopt;
    ren[n.name] = b;
    cse_key_reducer(n.red, ren, counter, out);
    if (saved) ren[n.name] = *saved; else ren.erase(n.name);
    break;
  }
  default:
    for (const Expr &a : n.args) {
      out += " ";
      cse_key_rec(a, ren, counter, out);
    }
    break;
  }
  out += ")";
}

inline std::string cse_key(const Expr &e) {
  std::map<std::string, std::string> ren;
  int counter = 0;
  std::string out;
  cse_key_rec(e, ren, counter, out);
  return out;
}

struct Block {
  enum class Kind { Root, LoopBody, Branch } kind;
  std::vector<std::pair<std::string, Expr>> binds;
  std::map<std::string, std::string> cse; // key -> bound name
  std::set<std::string> bound;            // names introduced in this block
};

class Builder {
public:
  explicit Builder(NameGen &names) : names_(names) {}

  Expr run(const Expr &e) {
    open(Block::Kind::Root);
    Expr v = atom(e);
    return close(v);
  }

  // Normalizes an expression into the current block chain and returns the
  // resulting atom (or small indexable value).
  Expr atom(const Expr &e) {
    if (anf_detail::is_atom(e)) return e;
    Expr rhs = build_rhs(e);
    if (anf_detail::is_atom(rhs)) return rhs;
    return bindit(rhs, e->kind == Ek::Let ? e->name : "t");
  }

private:
  Expr build_rhs(const Expr &e) {
    ExprNode n = *e;
    switch (n.kind) {
    case Ek::Let: {
      Expr rhs = build_rhs(n.args[0]);
      Expr bound = anf_detail::is_atom(rhs) ? rhs : bindit(rhs, n.name);
      return build_rhs(subst(n.args[1], n.name, bound));
    }
    case Ek::Sum:
    case Ek::Prod: {
      // Bounds stay inline: they are tiny and loop-invariant, and binding
      // them would pin the loop inside conditional branches.
      open(Block::Kind::LoopBody, n.name);
      Expr b = atom(n.args[2]);
      n.args[2] = close(b);
      return make_expr(std::move(n));
    }
    case Ek::ArrayGen: {
      open(Block::Kind::LoopBody, n.name);
      Expr b = atom(n.args[1]);
      n.args[1] = close(b);
      return make_expr(std::move(n));
    }
    case Ek::HistTerm:
      // Reducer bodies are small indexed expressions; they stay whole.
      return make_expr(std::move(n));
    case Ek::Piecewise: {
      for (std::size_t i = 0; i < n.args.size(); ++i) {
        if (i + 1 < n.args.size() && i % 2 == 0) {
          n.args[i] = atom(n.args[i]);
        } else {
          open(Block::Kind::Branch);
          Expr b = atom(n.args[i]);
          n.args[i] = close(b);
        }
      }
      return make_expr(std::move(n));
    }
    default:
      if (anf_detail::is_atom(e)) return e;
      for (Expr &a : n.args) a = atom(a);
      return make_expr(std::move(n));
    }
  }

  void open(Block::Kind k, const std::string &binder = "") {
    Block b;
    b.kind = k;
    if (!binder.empty()) b.bound.insert(binder);
    stack_.push_back(std::move(b));
  }

  Expr close(Expr v) {
    Block b = std::move(stack_.back());
    stack_.pop_back();
    for (std::size_t i = b.binds.size(); i-- > 0;)
      v = let_(b.binds[i].first, b.binds[i].second, v);
    return v;
  }

  Expr bindit(const Expr &rhs, const std::string &base) {
    bool loop = anf_detail::is_loop_rhs(rhs);
    // Loop bindings float out of branch blocks when their free variables
    // permit; everything else stays where it is computed.
    std::size_t target = stack_.size() - 1;
    if (loop) {
      std::set<std::string> fv = free_vars(rhs);
      while (target > 0 && stack_[target].kind == Block::Kind::Branch) {
        bool blocked = false;
        for (const std::string &b : stack_[target].bound)
          if (fv.count(b)) blocked = true;
        if (blocked) break;
        --target;
      }
    }
    Block &blk = stack_[target];
    std::string key;
    if (loop) {
      key = anf_detail::cse_key(rhs);
      // Shared binding visible anywhere up the chain.
      for (std::size_t k = 0; k <= target; ++k) {
        auto it = stack_[k].cse.find(key);
        if (it != stack_[k].cse.end()) return var(it->second);
      }
    }
    std::string name = names_.fresh(base);
    blk.binds.emplace_back(name, rhs);
    blk.bound.insert(name);
    if (loop) blk.cse[key] = name;
    return var(name);
  }

  NameGen &names_;
  std::vector<Block> stack_;
};

} // namespace anf_detail

inline Expr anf_expr(const Expr &e, NameGen &names) {
  anf_detail::Builder b(names);
  return b.run(e);
}

inline Measure anf_measure(const Measure &m, NameGen &names) {
  MeasureNode n = *m;
  switch (n.kind) {
  case Mk::Ret:
    n.e = anf_expr(n.e, names);
    break;
  case Mk::Weight:
    n.e = anf_expr(n.e, names);
    n.m1 = anf_measure(n.m1, names);
    break;
  case Mk::Bind:
    n.m1 = anf_measure(n.m1, names);
    n.m2 = anf_measure(n.m2, names);
    break;
  case Mk::Plate:
    n.e = anf_expr(n.e, names);
    n.m1 = anf_measure(n.m1, names);
    break;
  case Mk::Prim:
    for (Expr &p : n.params) p = anf_expr(p, names);
    break;
  }
  return make_measure(std::move(n));
}

inline Program anf(const Program &p) {
  NameGen names;
  Program out = p;
  if (p.is_measure())
    out.body = anf_measure(p.measure_body(), names);
  else
    out.body = anf_expr(p.expr_body(), names);
  check_closed(out);
  return out;
}

// ----- loop-invariant code motion ------------------------------------------------
// Hoists let bindings to the outermost loop level their free variables
// allow. Bindings never cross piecewise-branch boundaries (the loop-valued
// ones were already placed outside branches by ANF).

namespace licm_detail {

struct Licm {
  std::map<std::string, int> level; // binder/binding name -> loop level
  // Pools of hoisted bindings for each open loop level.
  std::vector<std::vector<std::pair<std::string, Expr>>> pools{1};
  // Piecewise-branch boundaries: bindings never hoist past the innermost one.
  std::vector<int> floors{0};

  int level_of(const Expr &e) {
    int worst = 0;
    for (const std::string &v : free_vars(e)) {
      auto it = level.find(v);
      if (it != level.end()) worst = std::max(worst, it->second);
    }
    return worst;
  }

  Expr wrap(int lvl, Expr v) {
    auto &pool = pools[lvl];
    // Identical hoisted computations collapse onto the first occurrence.
    std::map<std::string, std::string> canonical;
    std::vector<std::pair<std::string, std::string>> renames;
    std::vector<std::pair<std::string, Expr>> kept;
    for (auto &[name, rhs] : pool) {
      Expr r = rhs;
      for (auto &[from, to] : renames) r = subst(r, from, var(to));
      std::string key = anf_detail::cse_key(r);
      auto it = canonical.find(key);
      if (it != canonical.end()) {
        renames.emplace_back(name, it->second);
        continue;
      }
      canonical[key] = name;
      kept.emplace_back(name, std::move(r));
    }
    for (auto &[from, to] : renames) v = subst(v, from, var(to));
    for (std::size_t i = kept.size(); i-- > 0;)
      v = let_(kept[i].first, kept[i].second, v);
    pool.clear();
    return v;
  }

  Expr loop_body(const std::string &binder, const Expr &body) {
    int lvl = static_cast<int>(pools.size());
    pools.emplace_back();
    bool had = level.count(binder) > 0;
    int saved = had ? level[binder] : 0;
    level[binder] = lvl;
    Expr b = walk(body);
    b = wrap(lvl, b);
    if (had) level[binder] = saved; else level.erase(binder);
    pools.pop_back();
    return b;
  }

  Expr walk(const Expr &e) {
    ExprNode n = *e;
    switch (n.kind) {
    case Ek::Let: {
      Expr rhs = walk_rhs(n.args[0]);
      int lvl = std::min(level_of(rhs), static_cast<int>(pools.size()) - 1);
      lvl = std::max(lvl, floors.back());
      pools[lvl].emplace_back(n.name, rhs);
      level[n.name] = lvl;
      return walk(n.args[1]);
    }
    default:
      return walk_rhs(make_expr(std::move(n)));
    }
  }

  Expr walk_rhs(const Expr &e) {
    ExprNode n = *e;
    switch (n.kind) {
    case Ek::Sum:
    case Ek::Prod:
      n.args[2] = loop_body(n.name, n.args[2]);
      return make_expr(std::move(n));
    case Ek::ArrayGen:
      n.args[1] = loop_body(n.name, n.args[1]);
      return make_expr(std::move(n));
    case Ek::HistTerm:
      return make_expr(std::move(n));
    case Ek::Piecewise: {
      // Branch contents do not move across the branch boundary.
      for (std::size_t i = 1; i < n.args.size(); i += 2) n.args[i] = branch(n.args[i]);
      n.args.back() = branch(n.args.back());
      return make_expr(std::move(n));
    }
    case Ek::Let:
      return walk(make_expr(std::move(n)));
    default:
      for (Expr &a : n.args) a = walk_rhs(a);
      return make_expr(std::move(n));
    }
  }

  Expr branch(const Expr &e) {
    int lvl = static_cast<int>(pools.size());
    floors.push_back(lvl);
    pools.emplace_back();
    Expr b = walk(e);
    b = wrap(lvl, b);
    pools.pop_back();
    floors.pop_back();
    return b;
  }
};

} // namespace licm_detail

inline Expr licm_expr(const Expr &e, const std::vector<Param> &params) {
  licm_detail::Licm l;
  for (const Param &p : params) l.level[p.name] = 0;
  Expr v = l.walk(e);
  return l.wrap(0, v);
}

inline Program licm(const Program &p) {
  Program out = p;
  auto do_measure = [&](const Measure &m, auto &&self) -> Measure {
    MeasureNode n = *m;
    switch (n.kind) {
    case Mk::Ret:
      n.e = licm_expr(n.e, p.params);
      break;
    case Mk::Weight:
      n.e = licm_expr(n.e, p.params);
      n.m1 = self(n.m1, self);
      break;
    case Mk::Bind:
      n.m1 = self(n.m1, self);
      n.m2 = self(n.m2, self);
      break;
    case Mk::Plate:
      n.e = licm_expr(n.e, p.params);
      n.m1 = self(n.m1, self);
      break;
    case Mk::Prim:
      for (Expr &pp : n.params) pp = licm_expr(pp, p.params);
      break;
    }
    return make_measure(std::move(n));
  };
  if (p.is_measure())
    out.body = do_measure(p.measure_body(), do_measure);
  else
    out.body = licm_expr(p.expr_body(), p.params);
  check_closed(out);
  return out;
}

} // namespace hkir

#endif
