#ifndef HKIR_IMP_HPP
#define HKIR_IMP_HPP

#include "hkir/printer.hpp"
#include "hkir/types.hpp"

#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// Imperative loop IR: for-loops, mutable scalars and arrays, allocation,
// indexed updates, guarded blocks, sampling, and a final returned value.
// A stable one-statement-per-line textual form backs the golden tests.

enum class Sk {
  Alloc,     // name[size] of elem kind, filled with `init`
  DeclScalar, // name := init
  Let,       // name = pure expr (single assignment)
  Assign,    // name := expr (mutable scalar)
  Store,     // name[idx] := expr
  Accum,     // name (+=|*=) expr          (scalar)
  AccumElem, // name[idx] (+=|*=) expr
  For,       // for (var = lo..hi) body
  If,        // if guard then body else orelse
  Sample,    // name (or name[idx]) ~ dist(params)
};

enum class AccumOp { Add, Mul };

struct Stmt;
using StmtList = std::vector<Stmt>;

struct Stmt {
  Sk kind;
  std::string name;
  Expr e;        // Alloc size / Let,Assign,Store,Accum value / For lo / If guard
  Expr e2;       // Store,AccumElem index / For hi
  Expr init;     // Alloc fill value / DeclScalar init
  Type type;     // value type for Let/DeclScalar/Alloc element/Sample
  AccumOp op = AccumOp::Add;
  StmtList body, orelse;
  Dist dist = Dist::Gaussian;
  std::vector<Expr> params; // Sample parameters
  Expr sample_idx;          // Sample into name[sample_idx] when defined
};

struct ImpProgram {
  std::vector<Param> params;
  StmtList preamble; // executed once per instance (specialized allocations)
  StmtList body;
  Expr result;       // value returned by one invocation
  Type result_type;
};

// ----- printing ---------------------------------------------------------------

namespace imp_detail {

inline void indent(std::ostream &os, int k) {
  for (int i = 0; i < k; ++i) os << ' ';
}

} // namespace imp_detail

inline void print_stmt(std::ostream &os, const Stmt &s, int ind) {
  using imp_detail::indent;
  indent(os, ind);
  switch (s.kind) {
  case Sk::Alloc:
    os << "alloc " << s.name << ' ' << type_to_string(s.type) << ' ';
    print_expr(os, s.e);
    os << " fill ";
    print_expr(os, s.init);
    os << '\n';
    return;
  case Sk::DeclScalar:
    os << "var " << s.name << ' ' << type_to_string(s.type) << " := ";
    print_expr(os, s.init);
    os << '\n';
    return;
  case Sk::Let:
    os << "let " << s.name << " = ";
    print_expr(os, s.e);
    os << '\n';
    return;
  case Sk::Assign:
    os << "set " << s.name << " := ";
    print_expr(os, s.e);
    os << '\n';
    return;
  case Sk::Store:
    os << "store " << s.name << '[';
    print_expr(os, s.e2);
    os << "] := ";
    print_expr(os, s.e);
    os << '\n';
    return;
  case Sk::Accum:
    os << "accum " << s.name << (s.op == AccumOp::Add ? " += " : " *= ");
    print_expr(os, s.e);
    os << '\n';
    return;
  case Sk::AccumElem:
    os << "accum " << s.name << '[';
    print_expr(os, s.e2);
    os << (s.op == AccumOp::Add ? "] += " : "] *= ");
    print_expr(os, s.e);
    os << '\n';
    return;
  case Sk::For:
    os << "for " << s.name << " = ";
    print_expr(os, s.e);
    os << " .. ";
    print_expr(os, s.e2);
    os << " {\n";
    for (const Stmt &c : s.body) print_stmt(os, c, ind + 2);
    indent(os, ind);
    os << "}\n";
    return;
  case Sk::If:
    os << "if ";
    print_expr(os, s.e);
    os << " {\n";
    for (const Stmt &c : s.body) print_stmt(os, c, ind + 2);
    if (!s.orelse.empty()) {
      indent(os, ind);
      os << "} else {\n";
      for (const Stmt &c : s.orelse) print_stmt(os, c, ind + 2);
    }
    indent(os, ind);
    os << "}\n";
    return;
  case Sk::Sample:
    os << "sample " << s.name;
    if (s.sample_idx.defined()) {
      os << '[';
      print_expr(os, s.sample_idx);
      os << ']';
    }
    os << " ~ " << dist_name(s.dist);
    for (const Expr &p : s.params) {
      os << ' ';
      print_expr(os, p);
    }
    os << '\n';
    return;
  }
}

inline std::string to_string(const ImpProgram &p) {
  std::ostringstream os;
  os << "params:";
  for (const Param &pp : p.params)
    os << ' ' << pp.name << ':' << type_to_string(pp.type)
       << (pp.static_kind == StaticKind::KnownSize
               ? "!size"
               : pp.static_kind == StaticKind::KnownValue ? "!value" : "");
  os << '\n';
  if (!p.preamble.empty()) {
    os << "preamble {\n";
    for (const Stmt &s : p.preamble) print_stmt(os, s, 2);
    os << "}\n";
  }
  os << "body {\n";
  for (const Stmt &s : p.body) print_stmt(os, s, 2);
  os << "}\n";
  os << "return ";
  print_expr(os, p.result);
  os << '\n';
  return os.str();
}

} // namespace hkir

#endif
