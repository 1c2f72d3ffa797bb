#ifndef HKIR_RUNTIME_HPP
#define HKIR_RUNTIME_HPP

#include "hkir/eval.hpp"
#include "hkir/lower.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace hkir {

struct RuntimeError : std::runtime_error {
  explicit RuntimeError(const std::string &m) : std::runtime_error(m) {}
};

// ----- deterministic counter-based generator -----------------------------------
// SplitMix64: the stream is a pure function of (seed, step count), identical
// across platforms. This is the project-wide generator.

class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  // Uniform in (0, 1): never returns 0, so logs are safe.
  double uniform01() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

private:
  std::uint64_t state_;
};

// ----- numerics -----------------------------------------------------------------

inline double log_sum_exp2(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = a > b ? a : b;
  return m + std::log1p(std::exp(-(a > b ? a - b : b - a)));
}

inline double log_sum_exp(const double *xs, std::size_t n) {
  if (n == 0) throw RuntimeError("log_sum_exp of empty list");
  double m = xs[0];
  for (std::size_t i = 1; i < n; ++i)
    if (xs[i] > m) m = xs[i];
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::exp(xs[i] - m);
  return m + std::log(acc);
}

inline double log_sum_exp(const std::vector<double> &xs) {
  return log_sum_exp(xs.data(), xs.size());
}

// ----- samplers -------------------------------------------------------------------

inline double sample_gaussian(Rng &rng, double mu, double sigma) {
  if (!(sigma > 0)) throw RuntimeError("gaussian sigma must be positive");
  // Box-Muller; the second variate is discarded to keep draws stateless.
  double u1 = rng.uniform01(), u2 = rng.uniform01();
  double r = std::sqrt(-2.0 * std::log(u1));
  return mu + sigma * r * std::cos(2.0 * M_PI * u2);
}

inline double sample_uniform(Rng &rng, double a, double b) {
  return a + (b - a) * rng.uniform01();
}

inline double sample_gamma(Rng &rng, double k, double theta) {
  if (!(k > 0) || !(theta > 0)) throw RuntimeError("gamma parameters must be positive");
  // Marsaglia-Tsang squeeze; shape < 1 boosted through the standard power trick.
  double boost = 1.0;
  double shape = k;
  if (shape < 1.0) {
    boost = std::pow(rng.uniform01(), 1.0 / shape);
    shape += 1.0;
  }
  double d = shape - 1.0 / 3.0;
  double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = sample_gaussian(rng, 0.0, 1.0);
      v = 1.0 + c * x;
    } while (v <= 0);
    v = v * v * v;
    double u = rng.uniform01();
    if (u < 1.0 - 0.0331 * x * x * x * x) return boost * d * v * theta;
    if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return boost * d * v * theta;
  }
}

inline double sample_beta(Rng &rng, double a, double b) {
  double x = sample_gamma(rng, a, 1.0);
  double y = sample_gamma(rng, b, 1.0);
  return x / (x + y);
}

// Inverse-CDF draw over linear weights.
inline long sample_categorical_linear(Rng &rng, const double *w, std::size_t n) {
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(w[i]) || w[i] < 0) throw RuntimeError("bad categorical weight");
    total += w[i];
  }
  if (!(total > 0)) throw RuntimeError("categorical weights are all zero");
  double u = rng.uniform01() * total;
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += w[i];
    if (u <= acc) return static_cast<long>(i);
  }
  return static_cast<long>(n - 1);
}

// Inverse-CDF draw over log weights normalized by log-sum-exp.
inline long sample_categorical_log(Rng &rng, const double *logw, std::size_t n) {
  double total = log_sum_exp(logw, n);
  if (std::isnan(total)) throw RuntimeError("categorical weight is NaN");
  if (total == -std::numeric_limits<double>::infinity())
    throw RuntimeError("categorical weights are all zero");
  double u = rng.uniform01();
  double acc = 0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += std::exp(logw[i] - total);
    if (u <= acc) return static_cast<long>(i);
  }
  return static_cast<long>(n - 1);
}

// ----- compiled programs -----------------------------------------------------------

namespace rt {

enum class Op : std::uint8_t {
  Const,      // push imm
  LoadScalar, // push slot a
  LoadElem,   // idx from stack, push arrays[a][idx] (converted per b: 0 none, 1 to-lin, 2 to-log)
  ArraySize,  // push arrays[a].size
  AddN,       // pop a values, push sum
  MulN,
  LseN,       // pop a values, push log-sum-exp
  Pow,
  Exp,
  Log,
  Lgamma,
  Lbeta,
  ToLog,      // x -> log(x)
  FromLog,    // x -> exp(x)
  CmpEq,
  CmpNe,
  CmpLt,
  CmpLe,
  AndN,
  OrN,
  Not,
  JumpIfZero, // a = target
  Jump,       // a = target
};

struct Ins {
  Op op;
  std::int32_t a = 0;
  std::int32_t b = 0;
  double imm = 0;
};

struct CExpr {
  std::vector<Ins> code;
  bool log_repr = false;
};

struct Buf {
  const double *ptr = nullptr;
  std::size_t n = 0;
  std::vector<double> own;
  bool log_repr = false;

  void use_own() {
    ptr = own.data();
    n = own.size();
  }
};

enum class Ck { Alloc, FillStore, Decl, Let, Assign, Store, Accum, AccumElem, For, If, Sample };

struct CStmt {
  Ck k;
  int target = -1;       // scalar slot or array id
  CExpr e, e2, init;
  AccumOp op = AccumOp::Add;
  bool target_log = false;
  std::vector<CStmt> body, orelse;
  Dist dist = Dist::Gaussian;
  std::vector<CExpr> params;
  CExpr sample_idx;
  bool has_sample_idx = false;
  bool hist_loop = false;
};

} // namespace rt

struct RunStats {
  long long allocations = 0;       // buffer allocations during invoke()
  long long reducer_updates = 0;   // histogram update-loop iterations
};

class Instance {
public:
  Instance(const ImpProgram &prog, const StaticInfo &info) : prog_(prog) {
    // Slots for parameters.
    for (const Param &p : prog.params) {
      if (p.type && p.type->kind == Tk::Array) {
        int id = new_array(p.name, is_log_type(p.type->a));
        (void)id;
      } else {
        new_scalar(p.name, p.type);
      }
      env_.push(p.name, p.type);
    }
    preamble_ = compile_block(prog.preamble);
    body_ = compile_block(prog.body);
    result_expr_ = prog.result;
    // Bind known scalar values.
    for (const auto &[name, q] : info.scalar_values)
      if (scalar_slot_.count(name)) scalars_[scalar_slot_[name]] = to_double(q);
    for (const auto &[name, vals] : info.array_values)
      if (array_id_.count(name)) {
        rt::Buf &b = arrays_[array_id_[name]];
        b.own.resize(vals.size());
        for (std::size_t i = 0; i < vals.size(); ++i) b.own[i] = to_double(vals[i]);
        if (b.log_repr)
          for (double &x : b.own) x = std::log(x);
        b.use_own();
      }
    static_sizes_ = info.sizes;
    // Run the preamble once: pre-allocates every specialized intermediate.
    exec(preamble_, nullptr);
  }

  void bind_scalar(const std::string &name, double v) {
    auto it = scalar_slot_.find(name);
    if (it == scalar_slot_.end()) throw RuntimeError("unknown scalar parameter '" + name + "'");
    scalars_[it->second] = scalar_log_[it->second] ? std::log(v) : v;
  }

  // Binds a dynamic array parameter by reference; the caller keeps the
  // storage alive and may mutate it between invocations.
  void bind_array(const std::string &name, const double *data, std::size_t n) {
    auto it = array_id_.find(name);
    if (it == array_id_.end()) throw RuntimeError("unknown array parameter '" + name + "'");
    rt::Buf &b = arrays_[it->second];
    if (b.log_repr) {
      b.own.assign(data, data + n);
      for (double &x : b.own) x = std::log(x);
      b.use_own();
    } else {
      b.ptr = data;
      b.n = n;
    }
    auto sz = static_sizes_.find(name);
    if (sz != static_sizes_.end() && static_cast<long>(n) != sz->second)
      throw RuntimeError("array '" + name + "' bound with size " + std::to_string(n) +
                         " but specialized for " + std::to_string(sz->second));
  }

  Value invoke(Rng &rng, double *log_weight = nullptr) {
    rng_ = &rng;
    if (weight_slot_ >= 0) scalars_[weight_slot_] = 0; // log(1)
    exec(body_, &stats_);
    if (log_weight) *log_weight = weight_slot_ >= 0 ? scalars_[weight_slot_] : 0.0;
    return materialize(result_expr_);
  }

  const RunStats &stats() const { return stats_; }
  void reset_stats() { stats_ = RunStats{}; }

  // For gibbs drivers that resample one coordinate in place.
  double read_scalar(const std::string &name) {
    return scalars_.at(scalar_slot_.at(name));
  }

private:
  static bool is_log_type(const Type &t) {
    return t && (t->kind == Tk::Rpos || t->kind == Tk::Prob);
  }

  int new_scalar(const std::string &name, const Type &t) {
    int slot = static_cast<int>(scalars_.size());
    scalars_.push_back(0);
    scalar_log_.push_back(is_log_type(t));
    scalar_slot_[name] = slot;
    return slot;
  }

  int new_array(const std::string &name, bool log_repr) {
    int id = static_cast<int>(arrays_.size());
    arrays_.emplace_back();
    arrays_.back().log_repr = log_repr;
    array_id_[name] = id;
    return id;
  }

  // ----- statement compilation -----

  std::vector<rt::CStmt> compile_block(const StmtList &stmts) {
    std::vector<rt::CStmt> out;
    for (const Stmt &s : stmts) out.push_back(compile_stmt(s));
    return out;
  }

  rt::CStmt compile_stmt(const Stmt &s) {
    rt::CStmt c;
    switch (s.kind) {
    case Sk::Alloc: {
      bool lg = is_log_type(s.type);
      c.k = rt::Ck::Alloc;
      c.target = array_id_.count(s.name) ? array_id_[s.name] : new_array(s.name, lg);
      env_.push(s.name, t_array(s.type));
      c.e = compile_expr(s.e, false);
      c.init = compile_expr(s.init, lg);
      c.target_log = lg;
      return c;
    }
    case Sk::DeclScalar: {
      if (s.name == "weight$acc") weight_slot_ = scalar_slot_.count(s.name)
                                                     ? scalar_slot_[s.name]
                                                     : new_scalar(s.name, s.type);
      c.k = rt::Ck::Decl;
      c.target = scalar_slot_.count(s.name) ? scalar_slot_[s.name] : new_scalar(s.name, s.type);
      env_.push(s.name, s.type);
      c.target_log = scalar_log_[c.target];
      c.init = compile_expr(s.init, c.target_log);
      return c;
    }
    case Sk::Let: {
      c.k = rt::Ck::Let;
      c.target = scalar_slot_.count(s.name) ? scalar_slot_[s.name] : new_scalar(s.name, s.type);
      env_.push(s.name, s.type);
      c.target_log = scalar_log_[c.target];
      c.e = compile_expr(s.e, c.target_log);
      return c;
    }
    case Sk::Assign: {
      c.k = rt::Ck::Assign;
      c.target = scalar_slot_.at(s.name);
      c.target_log = scalar_log_[c.target];
      c.e = compile_expr(s.e, c.target_log);
      return c;
    }
    case Sk::Store: {
      c.target = array_id_.at(s.name);
      c.target_log = arrays_[c.target].log_repr;
      if (!s.e2.defined()) {
        c.k = rt::Ck::FillStore;
        c.e = compile_expr(s.e, c.target_log);
        return c;
      }
      c.k = rt::Ck::Store;
      c.e = compile_expr(s.e, c.target_log);
      c.e2 = compile_expr(s.e2, false);
      return c;
    }
    case Sk::Accum: {
      c.k = rt::Ck::Accum;
      c.target = scalar_slot_.at(s.name);
      c.target_log = scalar_log_[c.target];
      c.op = s.op;
      c.e = compile_expr(s.e, c.target_log);
      return c;
    }
    case Sk::AccumElem: {
      c.k = rt::Ck::AccumElem;
      c.target = array_id_.at(s.name);
      c.target_log = arrays_[c.target].log_repr;
      c.op = s.op;
      c.e = compile_expr(s.e, c.target_log);
      c.e2 = compile_expr(s.e2, false);
      return c;
    }
    case Sk::For: {
      c.k = rt::Ck::For;
      c.e = compile_expr(s.e, false);
      c.e2 = compile_expr(s.e2, false);
      c.target = scalar_slot_.count(s.name) ? scalar_slot_[s.name] : new_scalar(s.name, t_nat());
      env_.push(s.name, t_nat());
      for (const Expr &m : s.params)
        if (m->kind == Ek::Var && m->name == "$hist") c.hist_loop = true;
      c.body = compile_block(s.body);
      return c;
    }
    case Sk::If: {
      c.k = rt::Ck::If;
      c.e = compile_expr(s.e, false);
      c.body = compile_block(s.body);
      c.orelse = compile_block(s.orelse);
      return c;
    }
    case Sk::Sample: {
      c.k = rt::Ck::Sample;
      c.dist = s.dist;
      if (s.sample_idx.defined()) {
        c.has_sample_idx = true;
        c.sample_idx = compile_expr(s.sample_idx, false);
        c.target = array_id_.at(s.name);
        c.target_log = arrays_[c.target].log_repr;
      } else {
        c.target = scalar_slot_.count(s.name) ? scalar_slot_[s.name] : new_scalar(s.name, s.type);
        env_.push(s.name, s.type);
        c.target_log = scalar_log_[c.target];
      }
      for (const Expr &p : s.params) {
        // Categorical weights stay in log space; scalar parameters linear.
        bool lg = s.dist == Dist::Categorical;
        if (p->kind == Ek::Var && array_id_.count(p->name)) {
          rt::CExpr ce;
          ce.code.push_back({rt::Op::Const, 0, 0, static_cast<double>(array_id_[p->name])});
          ce.log_repr = lg;
          ce.code.back().op = rt::Op::Const; // marker: array argument by id
          c.params.push_back(std::move(ce));
        } else {
          c.params.push_back(compile_expr(p, false));
        }
      }
      return c;
    }
    }
    throw RuntimeError("bad statement");
  }

  // ----- expression compilation -----

  rt::CExpr compile_expr(const Expr &e, bool want_log) {
    rt::CExpr out;
    TypeMap types;
    TypeEnv env_copy = env_;
    type_of(e, env_copy, &types);
    bool produced_log = emit_expr(e, types, out.code);
    coerce(out.code, produced_log, want_log);
    out.log_repr = want_log;
    return out;
  }

  void coerce(std::vector<rt::Ins> &code, bool have_log, bool want_log) {
    if (have_log == want_log) return;
    code.push_back({want_log ? rt::Op::ToLog : rt::Op::FromLog, 0, 0, 0});
  }

  bool log_type_of(const Expr &e, const TypeMap &types) {
    auto it = types.find(e.get());
    return it != types.end() && is_log_type(it->second);
  }

  // Emits code for e; returns whether the pushed value is in log space.
  bool emit_expr(const Expr &e, const TypeMap &types, std::vector<rt::Ins> &code) {
    const ExprNode &n = *e;
    bool want_log = log_type_of(e, types);
    switch (n.kind) {
    case Ek::Num: {
      double v = to_double(n.num);
      code.push_back({rt::Op::Const, 0, 0, want_log ? std::log(v) : v});
      return want_log;
    }
    case Ek::Pi:
      code.push_back({rt::Op::Const, 0, 0, want_log ? std::log(M_PI) : M_PI});
      return want_log;
    case Ek::BoolLit:
      code.push_back({rt::Op::Const, 0, 0, n.bval ? 1.0 : 0.0});
      return false;
    case Ek::Var: {
      auto it = scalar_slot_.find(n.name);
      if (it == scalar_slot_.end()) throw RuntimeError("no slot for '" + n.name + "'");
      code.push_back({rt::Op::LoadScalar, it->second, 0, 0});
      return scalar_log_[it->second];
    }
    case Ek::Add:
    case Ek::Mul: {
      bool add = n.kind == Ek::Add;
      for (const Expr &a : n.args) {
        bool lg = emit_expr(a, types, code);
        // Additive log-space terms combine by log-sum-exp; multiplicative
        // ones by adding logs.
        coerce(code, lg, want_log);
      }
      rt::Op op;
      if (add)
        op = want_log ? rt::Op::LseN : rt::Op::AddN;
      else
        op = want_log ? rt::Op::AddN : rt::Op::MulN;
      code.push_back({op, static_cast<std::int32_t>(n.args.size()), 0, 0});
      return want_log;
    }
    case Ek::Pow: {
      if (want_log) {
        bool lb = emit_expr(n.args[0], types, code);
        coerce(code, lb, true);
        bool le = emit_expr(n.args[1], types, code);
        coerce(code, le, false);
        code.push_back({rt::Op::MulN, 2, 0, 0});
        return true;
      }
      bool lb = emit_expr(n.args[0], types, code);
      coerce(code, lb, false);
      bool le = emit_expr(n.args[1], types, code);
      coerce(code, le, false);
      code.push_back({rt::Op::Pow, 0, 0, 0});
      return false;
    }
    case Ek::Exp: {
      bool la = emit_expr(n.args[0], types, code);
      coerce(code, la, false);
      if (want_log) return true; // log(exp(x)) = x
      code.push_back({rt::Op::Exp, 0, 0, 0});
      return false;
    }
    case Ek::Log: {
      bool la = emit_expr(n.args[0], types, code);
      coerce(code, la, true); // the log-space value is the answer
      return false;
    }
    case Ek::GammaF: {
      bool la = emit_expr(n.args[0], types, code);
      coerce(code, la, false);
      code.push_back({rt::Op::Lgamma, 0, 0, 0});
      return true; // lgamma produces the log-space value
    }
    case Ek::BetaF: {
      bool la = emit_expr(n.args[0], types, code);
      coerce(code, la, false);
      bool lb = emit_expr(n.args[1], types, code);
      coerce(code, lb, false);
      code.push_back({rt::Op::Lbeta, 0, 0, 0});
      return true;
    }
    case Ek::Cmp: {
      bool la = emit_expr(n.args[0], types, code);
      coerce(code, la, false);
      bool lb = emit_expr(n.args[1], types, code);
      coerce(code, lb, false);
      switch (n.cmp) {
      case CmpOp::Eq: code.push_back({rt::Op::CmpEq, 0, 0, 0}); break;
      case CmpOp::Ne: code.push_back({rt::Op::CmpNe, 0, 0, 0}); break;
      case CmpOp::Lt: code.push_back({rt::Op::CmpLt, 0, 0, 0}); break;
      case CmpOp::Le: code.push_back({rt::Op::CmpLe, 0, 0, 0}); break;
      }
      return false;
    }
    case Ek::And:
    case Ek::Or: {
      for (const Expr &a : n.args) {
        bool lg = emit_expr(a, types, code);
        coerce(code, lg, false);
      }
      code.push_back({n.kind == Ek::And ? rt::Op::AndN : rt::Op::OrN,
                      static_cast<std::int32_t>(n.args.size()), 0, 0});
      return false;
    }
    case Ek::Not: {
      bool la = emit_expr(n.args[0], types, code);
      coerce(code, la, false);
      code.push_back({rt::Op::Not, 0, 0, 0});
      return false;
    }
    case Ek::Piecewise: {
      std::vector<std::size_t> end_jumps;
      for (std::size_t i = 0; i + 1 < n.args.size(); i += 2) {
        bool lg = emit_expr(n.args[i], types, code);
        coerce(code, lg, false);
        std::size_t jz = code.size();
        code.push_back({rt::Op::JumpIfZero, 0, 0, 0});
        bool lv = emit_expr(n.args[i + 1], types, code);
        coerce(code, lv, want_log);
        end_jumps.push_back(code.size());
        code.push_back({rt::Op::Jump, 0, 0, 0});
        code[jz].a = static_cast<std::int32_t>(code.size());
      }
      bool ld = emit_expr(n.args.back(), types, code);
      coerce(code, ld, want_log);
      for (std::size_t j : end_jumps) code[j].a = static_cast<std::int32_t>(code.size());
      return want_log;
    }
    case Ek::Index: {
      if (n.args[0]->kind != Ek::Var) throw RuntimeError("indexing must target a named array");
      auto it = array_id_.find(n.args[0]->name);
      if (it == array_id_.end()) throw RuntimeError("no array '" + n.args[0]->name + "'");
      bool li = emit_expr(n.args[1], types, code);
      coerce(code, li, false);
      bool buf_log = arrays_[it->second].log_repr;
      std::int32_t conv = buf_log == want_log ? 0 : want_log ? 2 : 1;
      code.push_back({rt::Op::LoadElem, it->second, conv, 0});
      return want_log;
    }
    case Ek::Size: {
      if (n.args[0]->kind != Ek::Var) throw RuntimeError("size must target a named array");
      auto it = array_id_.find(n.args[0]->name);
      if (it == array_id_.end()) throw RuntimeError("no array '" + n.args[0]->name + "'");
      code.push_back({rt::Op::ArraySize, it->second, 0, 0});
      return false;
    }
    default:
      throw RuntimeError("expression form not supported by the interpreter: " + to_string(e));
    }
  }

  // ----- execution -----

  double eval(const rt::CExpr &ce) {
    double stack[256];
    int sp = 0;
    const auto &code = ce.code;
    for (std::size_t pc = 0; pc < code.size(); ++pc) {
      const rt::Ins &ins = code[pc];
      switch (ins.op) {
      case rt::Op::Const:
        stack[sp++] = ins.imm;
        break;
      case rt::Op::LoadScalar:
        stack[sp++] = scalars_[ins.a];
        break;
      case rt::Op::LoadElem: {
        double xd = stack[--sp];
        long i = static_cast<long>(xd);
        const rt::Buf &b = arrays_[ins.a];
        if (i < 0 || static_cast<std::size_t>(i) >= b.n)
          throw RuntimeError("index out of bounds");
        double v = b.ptr[i];
        if (ins.b == 1) v = std::exp(v);
        if (ins.b == 2) v = std::log(v);
        stack[sp++] = v;
        break;
      }
      case rt::Op::ArraySize:
        stack[sp++] = static_cast<double>(arrays_[ins.a].n);
        break;
      case rt::Op::AddN: {
        double acc = 0;
        for (int k = 0; k < ins.a; ++k) acc += stack[--sp];
        stack[sp++] = acc;
        break;
      }
      case rt::Op::MulN: {
        double acc = 1;
        for (int k = 0; k < ins.a; ++k) acc *= stack[--sp];
        stack[sp++] = acc;
        break;
      }
      case rt::Op::LseN: {
        sp -= ins.a;
        stack[sp] = log_sum_exp(stack + sp, ins.a);
        ++sp;
        break;
      }
      case rt::Op::Pow: {
        double b = stack[--sp];
        double a = stack[--sp];
        stack[sp++] = std::pow(a, b);
        break;
      }
      case rt::Op::Exp:
        stack[sp - 1] = std::exp(stack[sp - 1]);
        break;
      case rt::Op::Log:
      case rt::Op::ToLog:
        stack[sp - 1] = std::log(stack[sp - 1]);
        break;
      case rt::Op::FromLog:
        stack[sp - 1] = std::exp(stack[sp - 1]);
        break;
      case rt::Op::Lgamma:
        stack[sp - 1] = std::lgamma(stack[sp - 1]);
        break;
      case rt::Op::Lbeta: {
        double b = stack[--sp];
        double a = stack[--sp];
        stack[sp++] = std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
        break;
      }
      case rt::Op::CmpEq: {
        double b = stack[--sp];
        stack[sp - 1] = stack[sp - 1] == b ? 1.0 : 0.0;
        break;
      }
      case rt::Op::CmpNe: {
        double b = stack[--sp];
        stack[sp - 1] = stack[sp - 1] != b ? 1.0 : 0.0;
        break;
      }
      case rt::Op::CmpLt: {
        double b = stack[--sp];
        stack[sp - 1] = stack[sp - 1] < b ? 1.0 : 0.0;
        break;
      }
      case rt::Op::CmpLe: {
        double b = stack[--sp];
        stack[sp - 1] = stack[sp - 1] <= b ? 1.0 : 0.0;
        break;
      }
      case rt::Op::AndN: {
        bool acc = true;
        for (int k = 0; k < ins.a; ++k) acc = (stack[--sp] != 0) && acc;
        stack[sp++] = acc ? 1.0 : 0.0;
        break;
      }
      case rt::Op::OrN: {
        bool acc = false;
        for (int k = 0; k < ins.a; ++k) acc = (stack[--sp] != 0) || acc;
        stack[sp++] = acc ? 1.0 : 0.0;
        break;
      }
      case rt::Op::Not:
        stack[sp - 1] = stack[sp - 1] == 0 ? 1.0 : 0.0;
        break;
      case rt::Op::JumpIfZero:
        if (stack[--sp] == 0) pc = static_cast<std::size_t>(ins.a) - 1;
        break;
      case rt::Op::Jump:
        pc = static_cast<std::size_t>(ins.a) - 1;
        break;
      }
    }
    return stack[sp - 1];
  }

  void exec(const std::vector<rt::CStmt> &stmts, RunStats *stats) {
    for (const rt::CStmt &s : stmts) {
      switch (s.k) {
      case rt::Ck::Alloc: {
        long n = std::lround(eval(s.e));
        if (n < 0) n = 0;
        rt::Buf &b = arrays_[s.target];
        double fill = eval(s.init);
        if (stats) ++stats->allocations;
        b.own.assign(static_cast<std::size_t>(n), fill);
        b.use_own();
        break;
      }
      case rt::Ck::FillStore: {
        rt::Buf &b = arrays_[s.target];
        double fill = eval(s.e);
        std::fill(b.own.begin(), b.own.end(), fill);
        b.use_own();
        break;
      }
      case rt::Ck::Decl:
        scalars_[s.target] = eval(s.init);
        break;
      case rt::Ck::Let:
      case rt::Ck::Assign:
        scalars_[s.target] = eval(s.e);
        break;
      case rt::Ck::Store: {
        long i = std::lround(eval(s.e2));
        rt::Buf &b = arrays_[s.target];
        if (i < 0 || static_cast<std::size_t>(i) >= b.own.size())
          throw RuntimeError("store index out of bounds");
        b.own[static_cast<std::size_t>(i)] = eval(s.e);
        break;
      }
      case rt::Ck::Accum: {
        double v = eval(s.e);
        double &t = scalars_[s.target];
        if (s.target_log)
          t = s.op == AccumOp::Mul ? t + v : log_sum_exp2(t, v);
        else
          t = s.op == AccumOp::Mul ? t * v : t + v;
        break;
      }
      case rt::Ck::AccumElem: {
        long i = std::lround(eval(s.e2));
        rt::Buf &b = arrays_[s.target];
        if (i < 0 || static_cast<std::size_t>(i) >= b.own.size())
          throw RuntimeError("update index out of bounds");
        double v = eval(s.e);
        double &t = b.own[static_cast<std::size_t>(i)];
        if (s.target_log)
          t = s.op == AccumOp::Mul ? t + v : log_sum_exp2(t, v);
        else
          t = s.op == AccumOp::Mul ? t * v : t + v;
        break;
      }
      case rt::Ck::For: {
        long lo = std::lround(eval(s.e));
        long hi = std::lround(eval(s.e2));
        double &slot = scalars_[s.target];
        for (long i = lo; i <= hi; ++i) {
          slot = static_cast<double>(i);
          exec(s.body, stats);
        }
        if (s.hist_loop && stats && hi >= lo) stats->reducer_updates += hi - lo + 1;
        break;
      }
      case rt::Ck::If:
        if (eval(s.e) != 0)
          exec(s.body, stats);
        else
          exec(s.orelse, stats);
        break;
      case rt::Ck::Sample: {
        double v = 0;
        switch (s.dist) {
        case Dist::Gaussian:
          v = sample_gaussian(*rng_, eval(s.params[0]), eval(s.params[1]));
          break;
        case Dist::Uniform:
          v = sample_uniform(*rng_, eval(s.params[0]), eval(s.params[1]));
          break;
        case Dist::Beta: {
          v = sample_beta(*rng_, eval(s.params[0]), eval(s.params[1]));
          if (s.target_log) v = std::log(v);
          break;
        }
        case Dist::Gamma: {
          v = sample_gamma(*rng_, eval(s.params[0]), eval(s.params[1]));
          if (s.target_log) v = std::log(v);
          break;
        }
        case Dist::Categorical: {
          // The weights argument is an array id marker.
          int id = static_cast<int>(s.params[0].code[0].imm);
          const rt::Buf &b = arrays_[id];
          v = static_cast<double>(b.log_repr ? sample_categorical_log(*rng_, b.ptr, b.n)
                                             : sample_categorical_linear(*rng_, b.ptr, b.n));
          break;
        }
        case Dist::Dirichlet:
          throw RuntimeError("dirichlet cannot be sampled directly");
        }
        if (s.has_sample_idx) {
          long i = std::lround(eval(s.sample_idx));
          rt::Buf &b = arrays_[s.target];
          if (i < 0 || static_cast<std::size_t>(i) >= b.own.size())
            throw RuntimeError("sample index out of bounds");
          b.own[static_cast<std::size_t>(i)] = v;
        } else {
          scalars_[s.target] = v;
        }
        break;
      }
      }
    }
  }

  // Assembles the returned Value from the (small) result expression.
  Value materialize(const Expr &e) {
    const ExprNode &n = *e;
    switch (n.kind) {
    case Ek::Var: {
      auto sit = scalar_slot_.find(n.name);
      if (sit != scalar_slot_.end()) {
        double v = scalars_[sit->second];
        return Value::real(scalar_log_[sit->second] ? std::exp(v) : v);
      }
      auto ait = array_id_.find(n.name);
      if (ait != array_id_.end()) {
        const rt::Buf &b = arrays_[ait->second];
        std::vector<Value> xs;
        xs.reserve(b.n);
        for (std::size_t i = 0; i < b.n; ++i)
          xs.push_back(Value::real(b.log_repr ? std::exp(b.ptr[i]) : b.ptr[i]));
        return Value::array(std::move(xs));
      }
      throw RuntimeError("unknown result variable '" + n.name + "'");
    }
    case Ek::ArrayLit: {
      std::vector<Value> xs;
      for (const Expr &a : n.args) xs.push_back(materialize(a));
      return Value::array(std::move(xs));
    }
    case Ek::MkPair: {
      Value a = materialize(n.args[0]);
      return Value::pair(std::move(a), materialize(n.args[1]));
    }
    case Ek::Num:
      return Value::real(to_double(n.num));
    default: {
      rt::CExpr ce = const_cast<Instance *>(this)->compile_expr(e, false);
      return Value::real(const_cast<Instance *>(this)->eval(ce));
    }
    }
  }

  ImpProgram prog_;
  TypeEnv env_;
  std::vector<double> scalars_;
  std::vector<bool> scalar_log_;
  std::map<std::string, int> scalar_slot_;
  std::vector<rt::Buf> arrays_;
  std::map<std::string, int> array_id_;
  std::map<std::string, long> static_sizes_;
  std::vector<rt::CStmt> preamble_, body_;
  Expr result_expr_;
  int weight_slot_ = -1;
  Rng *rng_ = nullptr;
  RunStats stats_;
};

} // namespace hkir

#endif
