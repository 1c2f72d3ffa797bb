#ifndef HKIR_RATIONAL_HPP
#define HKIR_RATIONAL_HPP

#include <boost/multiprecision/cpp_int.hpp>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace hkir {

// Exact rational arithmetic for all symbolic phases. Floating point does
// not appear until programs are lowered for execution.
using BigInt = boost::multiprecision::cpp_int;
using Rational = boost::multiprecision::cpp_rational;

inline BigInt numer(const Rational &q) { return boost::multiprecision::numerator(q); }
inline BigInt denom(const Rational &q) { return boost::multiprecision::denominator(q); }

inline bool is_integer(const Rational &q) { return denom(q) == 1; }

inline double to_double(const Rational &q) { return q.convert_to<double>(); }

inline std::string to_string(const Rational &q) {
  if (is_integer(q)) return numer(q).str();
  return numer(q).str() + "/" + denom(q).str();
}

// Parses "3", "-7", "1/2", "0.25", "-1.5e2". Returns false on malformed input.
inline bool parse_rational(const std::string &s, Rational &out) {
  if (s.empty()) return false;
  std::size_t i = 0;
  bool neg = false;
  if (s[i] == '+' || s[i] == '-') {
    neg = s[i] == '-';
    ++i;
  }
  BigInt num = 0, den = 1;
  bool any_digit = false;
  for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i) {
    num = num * 10 + (s[i] - '0');
    any_digit = true;
  }
  if (i < s.size() && s[i] == '/') {
    ++i;
    BigInt d = 0;
    bool any_den = false;
    for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i) {
      d = d * 10 + (s[i] - '0');
      any_den = true;
    }
    if (!any_digit || !any_den || d == 0 || i != s.size()) return false;
    den = d;
  } else {
    if (i < s.size() && s[i] == '.') {
      ++i;
      for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i) {
        num = num * 10 + (s[i] - '0');
        den *= 10;
        any_digit = true;
      }
    }
    if (!any_digit) return false;
    if (i < s.size() && (s[i] == 'e' || s[i] == 'E')) {
      ++i;
      bool eneg = false;
      if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        eneg = s[i] == '-';
        ++i;
      }
      if (i == s.size()) return false;
      long ex = 0;
      for (; i < s.size() && s[i] >= '0' && s[i] <= '9'; ++i) {
        ex = ex * 10 + (s[i] - '0');
        if (ex > 10000) return false;
      }
      BigInt p = 1;
      for (long k = 0; k < ex; ++k) p *= 10;
      if (eneg) den *= p; else num *= p;
    }
    if (i != s.size()) return false;
  }
  out = Rational(num, den);
  if (neg) out = -out;
  return true;
}

// q^k for integer k (k may be negative when q != 0).
inline Rational rat_pow(const Rational &q, long k) {
  Rational r = 1, base = q;
  bool inv = k < 0;
  unsigned long n = inv ? static_cast<unsigned long>(-(k + 1)) + 1ul : static_cast<unsigned long>(k);
  while (n) {
    if (n & 1ul) r *= base;
    base *= base;
    n >>= 1;
  }
  return inv ? Rational(1) / r : r;
}

// Prime factorization of a positive integer; trial division is plenty for
// the literals that appear in programs. Large prime cofactors are kept
// whole. Returns pairs (prime, multiplicity).
inline std::vector<std::pair<BigInt, long>> factorize(BigInt n) {
  std::vector<std::pair<BigInt, long>> fs;
  for (BigInt p = 2; p * p <= n && p < 100000; p == 2 ? p = 3 : p += 2) {
    long m = 0;
    while (n % p == 0) {
      n /= p;
      ++m;
    }
    if (m) fs.emplace_back(p, m);
  }
  if (n > 1) fs.emplace_back(n, 1);
  return fs;
}

} // namespace hkir

#endif
