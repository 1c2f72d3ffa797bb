#ifndef HKIR_PARSER_HPP
#define HKIR_PARSER_HPP

#include "hkir/types.hpp"

#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace hkir {

struct ParseError : std::runtime_error {
  int line, col;
  ParseError(const std::string &msg, int line_, int col_)
      : std::runtime_error(msg + " (line " + std::to_string(line_) + ", col " +
                           std::to_string(col_) + ")"),
        line(line_), col(col_) {}
};

namespace sexp {

struct Node {
  bool is_atom = false;
  std::string atom;
  std::vector<Node> items;
  int line = 0, col = 0;
};

inline bool atom_char(char c) {
  return c != '(' && c != ')' && c != ';' && c != ' ' && c != '\t' && c != '\n' && c != '\r';
}

class Reader {
public:
  explicit Reader(const std::string &text) : s_(text) {}

  std::vector<Node> read_all() {
    std::vector<Node> out;
    skip_ws();
    while (pos_ < s_.size()) {
      out.push_back(read());
      skip_ws();
    }
    return out;
  }

private:
  void skip_ws() {
    while (pos_ < s_.size()) {
      char c = s_[pos_];
      if (c == ';') {
        while (pos_ < s_.size() && s_[pos_] != '\n') advance();
      } else if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        advance();
      } else {
        break;
      }
    }
  }

  void advance() {
    if (s_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  Node read() {
    skip_ws();
    if (pos_ >= s_.size()) throw ParseError("unexpected end of input", line_, col_);
    Node n;
    n.line = line_;
    n.col = col_;
    if (s_[pos_] == '(') {
      advance();
      skip_ws();
      while (pos_ < s_.size() && s_[pos_] != ')') {
        n.items.push_back(read());
        skip_ws();
      }
      if (pos_ >= s_.size()) throw ParseError("missing ')'", n.line, n.col);
      advance();
      return n;
    }
    if (s_[pos_] == ')') throw ParseError("unexpected ')'", line_, col_);
    n.is_atom = true;
    while (pos_ < s_.size() && atom_char(s_[pos_])) {
      n.atom += s_[pos_];
      advance();
    }
    return n;
  }

  const std::string &s_;
  std::size_t pos_ = 0;
  int line_ = 1, col_ = 1;
};

} // namespace sexp

namespace detail {

inline bool measure_keyword(const std::string &k) {
  return k == "gaussian" || k == "uniform" || k == "beta" || k == "gamma" ||
         k == "categorical" || k == "dirichlet" || k == "ret" || k == "weight" ||
         k == "bind" || k == "plate";
}

inline bool valid_identifier(const std::string &s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  return !std::isdigit(static_cast<unsigned char>(s[0]));
}

class TermParser {
public:
  std::vector<std::string> scope;

  bool in_scope(const std::string &v) const {
    for (const auto &s : scope)
      if (s == v) return true;
    return false;
  }

  [[noreturn]] static void err(const sexp::Node &n, const std::string &msg) {
    throw ParseError(msg, n.line, n.col);
  }

  static const sexp::Node &item(const sexp::Node &n, std::size_t i) {
    if (i >= n.items.size()) err(n, "too few arguments");
    return n.items[i];
  }

  static void arity(const sexp::Node &n, std::size_t k) {
    if (n.items.size() != k + 1)
      err(n, "'" + n.items[0].atom + "' expects " + std::to_string(k) + " arguments");
  }

  std::string binder(const sexp::Node &n) {
    if (!n.is_atom || !valid_identifier(n.atom)) err(n, "expected variable name");
    return n.atom;
  }

  Expr expr(const sexp::Node &n) {
    if (n.is_atom) {
      if (n.atom == "pi") return pi_const();
      if (n.atom == "true") return boolean(true);
      if (n.atom == "false") return boolean(false);
      Rational q;
      if (parse_rational(n.atom, q)) return num(q);
      if (!valid_identifier(n.atom)) err(n, "malformed atom '" + n.atom + "'");
      if (!in_scope(n.atom)) err(n, "unbound variable '" + n.atom + "'");
      return var(n.atom);
    }
    if (n.items.empty()) err(n, "empty form");
    const sexp::Node &head = item(n, 0);
    if (!head.is_atom) {
      // Application of an immediately-applied lambda; beta-reduce now.
      return beta_apply(n);
    }
    const std::string &k = head.atom;
    auto bin = [&](auto f) {
      arity(n, 2);
      return f(expr(item(n, 1)), expr(item(n, 2)));
    };
    if (k == "+" || k == "*" || k == "and" || k == "or") {
      if (n.items.size() < 3) err(n, "'" + k + "' expects at least 2 arguments");
      std::vector<Expr> args;
      for (std::size_t i = 1; i < n.items.size(); ++i) args.push_back(expr(n.items[i]));
      if (k == "+") return add(std::move(args));
      if (k == "*") return mul(std::move(args));
      if (k == "and") return nary(Ek::And, std::move(args));
      return nary(Ek::Or, std::move(args));
    }
    if (k == "-") {
      if (n.items.size() == 2) return neg(expr(item(n, 1)));
      arity(n, 2);
      return sub(expr(item(n, 1)), expr(item(n, 2)));
    }
    if (k == "/") return bin([](Expr a, Expr b) { return div(std::move(a), std::move(b)); });
    if (k == "pow") return bin([](Expr a, Expr b) { return pow_(std::move(a), std::move(b)); });
    if (k == "exp") { arity(n, 1); return exp_(expr(item(n, 1))); }
    if (k == "log") { arity(n, 1); return log_(expr(item(n, 1))); }
    if (k == "sqrt") { arity(n, 1); return sqrt_(expr(item(n, 1))); }
    if (k == "not") { arity(n, 1); return not_(expr(item(n, 1))); }
    if (k == "=") return bin([](Expr a, Expr b) { return cmp(CmpOp::Eq, std::move(a), std::move(b)); });
    if (k == "/=") return bin([](Expr a, Expr b) { return cmp(CmpOp::Ne, std::move(a), std::move(b)); });
    if (k == "<") return bin([](Expr a, Expr b) { return cmp(CmpOp::Lt, std::move(a), std::move(b)); });
    if (k == "<=") return bin([](Expr a, Expr b) { return cmp(CmpOp::Le, std::move(a), std::move(b)); });
    if (k == ">") return bin([](Expr a, Expr b) { return cmp(CmpOp::Lt, std::move(b), std::move(a)); });
    if (k == ">=") return bin([](Expr a, Expr b) { return cmp(CmpOp::Le, std::move(b), std::move(a)); });
    if (k == "piecewise") {
      if (n.items.size() < 2 || n.items.size() % 2 != 0)
        err(n, "piecewise expects guard/value pairs and a final default");
      std::vector<Expr> args;
      for (std::size_t i = 1; i < n.items.size(); ++i) args.push_back(expr(n.items[i]));
      return piecewise(std::move(args));
    }
    if (k == "sum" || k == "prod") {
      arity(n, 4);
      std::string i = binder(item(n, 1));
      Expr lo = expr(item(n, 2)), hi = expr(item(n, 3));
      scope.push_back(i);
      Expr body = expr(item(n, 4));
      scope.pop_back();
      return loop(k == "sum" ? Ek::Sum : Ek::Prod, std::move(i), std::move(lo),
                  std::move(hi), std::move(body));
    }
    if (k == "array") {
      std::vector<Expr> elems;
      for (std::size_t i = 1; i < n.items.size(); ++i) elems.push_back(expr(n.items[i]));
      if (elems.empty()) err(n, "array literal needs at least one element");
      return array_lit(std::move(elems));
    }
    if (k == "ary") {
      arity(n, 3);
      Expr sz = expr(item(n, 1));
      std::string i = binder(item(n, 2));
      scope.push_back(i);
      Expr body = expr(item(n, 3));
      scope.pop_back();
      return array_gen(std::move(i), std::move(sz), std::move(body));
    }
    if (k == "idx") return bin([](Expr a, Expr b) { return index(std::move(a), std::move(b)); });
    if (k == "size") { arity(n, 1); return size_of(expr(item(n, 1))); }
    if (k == "pair") return bin([](Expr a, Expr b) { return mk_pair(std::move(a), std::move(b)); });
    if (k == "fst") { arity(n, 1); return fst(expr(item(n, 1))); }
    if (k == "snd") { arity(n, 1); return snd(expr(item(n, 1))); }
    if (k == "gammafn") { arity(n, 1); return gamma_fn(expr(item(n, 1))); }
    if (k == "betafn") return bin([](Expr a, Expr b) { return beta_fn(std::move(a), std::move(b)); });
    if (k == "let") {
      arity(n, 3);
      std::string x = binder(item(n, 1));
      Expr rhs = expr(item(n, 2));
      scope.push_back(x);
      Expr body = expr(item(n, 3));
      scope.pop_back();
      return let_(std::move(x), std::move(rhs), std::move(body));
    }
    if (k == "hist") {
      arity(n, 4);
      std::string j = binder(item(n, 1));
      Expr lo = expr(item(n, 2)), hi = expr(item(n, 3));
      scope.push_back(j);
      ReducerPtr r = reducer(item(n, 4));
      scope.pop_back();
      return hist_term(std::move(j), std::move(lo), std::move(hi), std::move(r));
    }
    if (k == "lam") err(n, "lambda must be immediately applied");
    if (measure_keyword(k)) err(n, "measure term used where expression expected");
    err(n, "unknown keyword '" + k + "'");
  }

  ReducerPtr reducer(const sexp::Node &n) {
    if (n.is_atom || n.items.empty() || !n.items[0].is_atom) err(n, "expected reducer");
    const std::string &k = n.items[0].atom;
    if (k == "radd") { arity(n, 1); return red_add(expr(item(n, 1))); }
    if (k == "rnop") { arity(n, 0); return red_nop(); }
    if (k == "ridx") {
      arity(n, 4);
      std::string i = binder(item(n, 1));
      Expr sz = expr(item(n, 2));
      Expr sel = expr(item(n, 3));
      scope.push_back(i);
      ReducerPtr inner = reducer(item(n, 4));
      scope.pop_back();
      return red_idx(std::move(i), std::move(sz), std::move(sel), std::move(inner));
    }
    if (k == "rsplit") {
      arity(n, 3);
      Expr g = expr(item(n, 1));
      return red_split(std::move(g), reducer(item(n, 2)), reducer(item(n, 3)));
    }
    if (k == "rfanout") {
      arity(n, 2);
      return red_fanout(reducer(item(n, 1)), reducer(item(n, 2)));
    }
    err(n, "unknown reducer '" + k + "'");
  }

  Measure measure(const sexp::Node &n) {
    if (n.is_atom || n.items.empty() || !n.items[0].is_atom)
      err(n, "expected measure term");
    const std::string &k = n.items[0].atom;
    if (k == "gaussian" || k == "uniform" || k == "beta" || k == "gamma") {
      arity(n, 2);
      Dist d = k == "gaussian" ? Dist::Gaussian
             : k == "uniform"  ? Dist::Uniform
             : k == "beta"     ? Dist::Beta
                               : Dist::Gamma;
      return prim(d, {expr(item(n, 1)), expr(item(n, 2))});
    }
    if (k == "categorical") { arity(n, 1); return categorical_m(expr(item(n, 1))); }
    if (k == "dirichlet") { arity(n, 1); return dirichlet_m(expr(item(n, 1))); }
    if (k == "ret") { arity(n, 1); return ret(expr(item(n, 1))); }
    if (k == "weight") {
      arity(n, 2);
      Expr w = expr(item(n, 1));
      return weight(std::move(w), measure(item(n, 2)));
    }
    if (k == "bind") {
      arity(n, 3);
      Measure m1 = measure(item(n, 1));
      std::string x = binder(item(n, 2));
      scope.push_back(x);
      Measure m2 = measure(item(n, 3));
      scope.pop_back();
      return bind(std::move(m1), std::move(x), std::move(m2));
    }
    if (k == "plate") {
      arity(n, 3);
      Expr sz = expr(item(n, 1));
      std::string i = binder(item(n, 2));
      scope.push_back(i);
      Measure body = measure(item(n, 3));
      scope.pop_back();
      return plate(std::move(sz), std::move(i), std::move(body));
    }
    err(n, "unknown measure keyword '" + k + "'");
  }

  Expr beta_apply(const sexp::Node &n) {
    const sexp::Node &lam = n.items[0];
    if (lam.is_atom || lam.items.empty() || !lam.items[0].is_atom || lam.items[0].atom != "lam")
      err(n, "head of application must be a lambda");
    if (lam.items.size() != 4) err(lam, "'lam' expects name, type, body");
    if (n.items.size() != 2) err(n, "lambda application expects one argument");
    std::string x = binder(lam.items[1]);
    Expr arg = expr(n.items[1]);
    scope.push_back(x);
    Expr body = expr(lam.items[3]);
    scope.pop_back();
    return subst(body, x, arg);
  }
};

inline Type parse_type(const sexp::Node &n) {
  if (n.is_atom) {
    if (n.atom == "real") return t_real();
    if (n.atom == "rpos") return t_rpos();
    if (n.atom == "int") return t_int();
    if (n.atom == "nat") return t_nat();
    if (n.atom == "unit") return t_unit();
    throw ParseError("unknown type '" + n.atom + "'", n.line, n.col);
  }
  if (n.items.size() == 2 && n.items[0].is_atom && n.items[0].atom == "array")
    return t_array(parse_type(n.items[1]));
  if (n.items.size() == 2 && n.items[0].is_atom && n.items[0].atom == "measure")
    return t_measure(parse_type(n.items[1]));
  if (n.items.size() == 3 && n.items[0].is_atom && n.items[0].atom == "pair")
    return t_pair(parse_type(n.items[1]), parse_type(n.items[2]));
  throw ParseError("malformed type", n.line, n.col);
}

} // namespace detail

// Parses a full program: either a bare term or
//   (program (params (name type [annotation]) ...) term)
// where annotation is dynamic | known-size | known-value.
inline Program parse_program(const std::string &text) {
  sexp::Reader reader(text);
  std::vector<sexp::Node> top = reader.read_all();
  if (top.size() != 1) throw ParseError("expected exactly one top-level form", 1, 1);
  const sexp::Node &root = top[0];

  detail::TermParser tp;
  Program p;
  const sexp::Node *body = &root;
  if (!root.is_atom && !root.items.empty() && root.items[0].is_atom &&
      root.items[0].atom == "program") {
    if (root.items.size() != 3) throw ParseError("(program (params ...) body)", root.line, root.col);
    const sexp::Node &ps = root.items[1];
    if (ps.is_atom || ps.items.empty() || !ps.items[0].is_atom || ps.items[0].atom != "params")
      throw ParseError("expected (params ...)", ps.line, ps.col);
    for (std::size_t i = 1; i < ps.items.size(); ++i) {
      const sexp::Node &pn = ps.items[i];
      if (pn.is_atom || pn.items.size() < 2 || pn.items.size() > 3)
        throw ParseError("expected (name type [annotation])", pn.line, pn.col);
      Param param;
      param.name = tp.binder(pn.items[0]);
      param.type = detail::parse_type(pn.items[1]);
      if (pn.items.size() == 3) {
        const std::string &a = pn.items[2].atom;
        if (a == "dynamic") param.static_kind = StaticKind::Dynamic;
        else if (a == "known-size") param.static_kind = StaticKind::KnownSize;
        else if (a == "known-value") param.static_kind = StaticKind::KnownValue;
        else throw ParseError("unknown annotation '" + a + "'", pn.items[2].line, pn.items[2].col);
        if (param.static_kind != StaticKind::Dynamic && param.type->kind == Tk::Measure)
          throw ParseError("annotations apply to array and scalar parameters only",
                           pn.items[2].line, pn.items[2].col);
      }
      tp.scope.push_back(param.name);
      p.params.push_back(std::move(param));
    }
    body = &root.items[2];
  }

  bool is_measure = !body->is_atom && !body->items.empty() && body->items[0].is_atom &&
                    detail::measure_keyword(body->items[0].atom);
  if (is_measure)
    p.body = tp.measure(*body);
  else
    p.body = tp.expr(*body);
  return p;
}

inline Expr parse_expr(const std::string &text, std::vector<std::string> scope = {}) {
  sexp::Reader reader(text);
  std::vector<sexp::Node> top = reader.read_all();
  if (top.size() != 1) throw ParseError("expected exactly one form", 1, 1);
  detail::TermParser tp;
  tp.scope = std::move(scope);
  return tp.expr(top[0]);
}

inline Measure parse_measure(const std::string &text, std::vector<std::string> scope = {}) {
  sexp::Reader reader(text);
  std::vector<sexp::Node> top = reader.read_all();
  if (top.size() != 1) throw ParseError("expected exactly one form", 1, 1);
  detail::TermParser tp;
  tp.scope = std::move(scope);
  return tp.measure(top[0]);
}

} // namespace hkir

#endif
