#ifndef HKIR_PRINTER_HPP
#define HKIR_PRINTER_HPP

#include "hkir/types.hpp"

#include <sstream>
#include <string>

namespace hkir {

// Canonical surface syntax. parse(print(p)) reconstructs p exactly, and the
// output is deterministic, so stage dumps can be used as golden files.

void print_expr(std::ostream &os, const Expr &e);
void print_reducer(std::ostream &os, const ReducerPtr &r);

inline const char *cmp_name(CmpOp op) {
  switch (op) {
  case CmpOp::Eq: return "=";
  case CmpOp::Ne: return "/=";
  case CmpOp::Lt: return "<";
  case CmpOp::Le: return "<=";
  }
  return "?";
}

inline void print_expr(std::ostream &os, const Expr &e) {
  if (!e.defined()) {
    os << "<undef>";
    return;
  }
  const ExprNode &n = *e;
  auto list = [&](const char *head, auto &&...parts) {
    os << '(' << head;
    ((os << ' ', print_expr(os, parts)), ...);
    os << ')';
  };
  switch (n.kind) {
  case Ek::Num:
    os << to_string(n.num);
    return;
  case Ek::Var:
    os << n.name;
    return;
  case Ek::Pi:
    os << "pi";
    return;
  case Ek::BoolLit:
    os << (n.bval ? "true" : "false");
    return;
  case Ek::Add:
  case Ek::Mul:
  case Ek::And:
  case Ek::Or: {
    os << '(' << (n.kind == Ek::Add ? "+" : n.kind == Ek::Mul ? "*" : n.kind == Ek::And ? "and" : "or");
    for (const Expr &a : n.args) {
      os << ' ';
      print_expr(os, a);
    }
    os << ')';
    return;
  }
  case Ek::Pow:
    list("pow", n.args[0], n.args[1]);
    return;
  case Ek::Exp:
    list("exp", n.args[0]);
    return;
  case Ek::Log:
    list("log", n.args[0]);
    return;
  case Ek::Not:
    list("not", n.args[0]);
    return;
  case Ek::Cmp:
    list(cmp_name(n.cmp), n.args[0], n.args[1]);
    return;
  case Ek::Piecewise: {
    os << "(piecewise";
    for (const Expr &a : n.args) {
      os << ' ';
      print_expr(os, a);
    }
    os << ')';
    return;
  }
  case Ek::Sum:
  case Ek::Prod:
    os << '(' << (n.kind == Ek::Sum ? "sum" : "prod") << ' ' << n.name << ' ';
    print_expr(os, n.args[0]);
    os << ' ';
    print_expr(os, n.args[1]);
    os << ' ';
    print_expr(os, n.args[2]);
    os << ')';
    return;
  case Ek::ArrayLit: {
    os << "(array";
    for (const Expr &a : n.args) {
      os << ' ';
      print_expr(os, a);
    }
    os << ')';
    return;
  }
  case Ek::ArrayGen:
    os << "(ary ";
    print_expr(os, n.args[0]);
    os << ' ' << n.name << ' ';
    print_expr(os, n.args[1]);
    os << ')';
    return;
  case Ek::Index:
    list("idx", n.args[0], n.args[1]);
    return;
  case Ek::Size:
    list("size", n.args[0]);
    return;
  case Ek::MkPair:
    list("pair", n.args[0], n.args[1]);
    return;
  case Ek::Fst:
    list("fst", n.args[0]);
    return;
  case Ek::Snd:
    list("snd", n.args[0]);
    return;
  case Ek::Let:
    os << "(let " << n.name << ' ';
    print_expr(os, n.args[0]);
    os << ' ';
    print_expr(os, n.args[1]);
    os << ')';
    return;
  case Ek::GammaF:
    list("gammafn", n.args[0]);
    return;
  case Ek::BetaF:
    list("betafn", n.args[0], n.args[1]);
    return;
  case Ek::HistTerm:
    os << "(hist " << n.name << ' ';
    print_expr(os, n.args[0]);
    os << ' ';
    print_expr(os, n.args[1]);
    os << ' ';
    print_reducer(os, n.red);
    os << ')';
    return;
  }
}

inline void print_reducer(std::ostream &os, const ReducerPtr &r) {
  if (!r) {
    os << "<undef>";
    return;
  }
  switch (r->kind) {
  case Rk::RAdd:
    os << "(radd ";
    print_expr(os, r->e);
    os << ')';
    return;
  case Rk::RNop:
    os << "(rnop)";
    return;
  case Rk::RIdx:
    os << "(ridx " << r->ivar << ' ';
    print_expr(os, r->size);
    os << ' ';
    print_expr(os, r->e);
    os << ' ';
    print_reducer(os, r->r1);
    os << ')';
    return;
  case Rk::RSplit:
    os << "(rsplit ";
    print_expr(os, r->e);
    os << ' ';
    print_reducer(os, r->r1);
    os << ' ';
    print_reducer(os, r->r2);
    os << ')';
    return;
  case Rk::RFanout:
    os << "(rfanout ";
    print_reducer(os, r->r1);
    os << ' ';
    print_reducer(os, r->r2);
    os << ')';
    return;
  }
}

inline const char *dist_name(Dist d) {
  switch (d) {
  case Dist::Uniform: return "uniform";
  case Dist::Gaussian: return "gaussian";
  case Dist::Beta: return "beta";
  case Dist::Gamma: return "gamma";
  case Dist::Categorical: return "categorical";
  case Dist::Dirichlet: return "dirichlet";
  }
  return "?";
}

inline void print_measure(std::ostream &os, const Measure &m, int indent = 0) {
  auto nl = [&](int k) {
    os << '\n';
    for (int i = 0; i < k; ++i) os << ' ';
  };
  if (!m.defined()) {
    os << "<undef>";
    return;
  }
  const MeasureNode &n = *m;
  switch (n.kind) {
  case Mk::Ret:
    os << "(ret ";
    print_expr(os, n.e);
    os << ')';
    return;
  case Mk::Weight:
    os << "(weight ";
    print_expr(os, n.e);
    nl(indent + 2);
    print_measure(os, n.m1, indent + 2);
    os << ')';
    return;
  case Mk::Bind:
    os << "(bind ";
    print_measure(os, n.m1, indent + 6);
    os << ' ' << n.name;
    nl(indent + 2);
    print_measure(os, n.m2, indent + 2);
    os << ')';
    return;
  case Mk::Plate:
    os << "(plate ";
    print_expr(os, n.e);
    os << ' ' << n.name << ' ';
    print_measure(os, n.m1, indent + 2);
    os << ')';
    return;
  case Mk::Prim:
    os << '(' << dist_name(n.dist);
    for (const Expr &p : n.params) {
      os << ' ';
      print_expr(os, p);
    }
    os << ')';
    return;
  }
}

inline const char *static_name(StaticKind k) {
  switch (k) {
  case StaticKind::Dynamic: return "dynamic";
  case StaticKind::KnownSize: return "known-size";
  case StaticKind::KnownValue: return "known-value";
  }
  return "?";
}

inline void print_program(std::ostream &os, const Program &p) {
  if (p.params.empty() && p.is_measure()) {
    print_measure(os, p.measure_body());
    os << '\n';
    return;
  }
  if (p.params.empty()) {
    print_expr(os, p.expr_body());
    os << '\n';
    return;
  }
  os << "(program\n  (params";
  for (const Param &param : p.params) {
    os << "\n    (" << param.name << ' ' << type_to_string(param.type);
    if (param.static_kind != StaticKind::Dynamic) os << ' ' << static_name(param.static_kind);
    os << ')';
  }
  os << ")\n  ";
  if (p.is_measure())
    print_measure(os, p.measure_body(), 2);
  else
    print_expr(os, p.expr_body());
  os << ")\n";
}

inline std::string to_string(const Expr &e) {
  std::ostringstream os;
  print_expr(os, e);
  return os.str();
}
inline std::string to_string(const Measure &m) {
  std::ostringstream os;
  print_measure(os, m);
  return os.str();
}
inline std::string to_string(const Program &p) {
  std::ostringstream os;
  print_program(os, p);
  return os.str();
}

} // namespace hkir

#endif
