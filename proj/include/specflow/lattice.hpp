// Exact rational arithmetic on unimodular intersection forms: class
// constructions (Pontrjagin-type classes, Kahler-adapted t, symplectic zeta),
// the index formula and the boundedness criterion.
#pragma once

#include "specflow/core.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

namespace sfl {

using Rational = boost::multiprecision::cpp_rational;
using BigInt = boost::multiprecision::cpp_int;
using RVec = std::vector<Rational>;

struct UnimodularForm {
  enum class Kind { OddDiagonal, Even };
  Kind kind = Kind::OddDiagonal;
  int p_plus = 0, q_minus = 0;  // odd-diagonal signature
  int hyperbolic = 0;           // even: number of hyperbolic pairs
  int e8_count = 0;             // even: signed number of E8 summands
  std::vector<std::vector<long long>> gram;
  std::vector<std::string> labels;

  int rank() const { return static_cast<int>(gram.size()); }
  bool is_odd() const { return kind == Kind::OddDiagonal; }
};

struct CohClass {
  RVec coeffs;
  CohClass() = default;
  explicit CohClass(RVec c) : coeffs(std::move(c)) {}
  static CohClass ints(const std::vector<long long>& v) {
    CohClass c;
    for (long long x : v) c.coeffs.emplace_back(x);
    return c;
  }
  static CohClass zero(int n) { return CohClass(RVec(static_cast<size_t>(n), Rational(0))); }
  int dim() const { return static_cast<int>(coeffs.size()); }
  bool is_zero() const {
    return std::all_of(coeffs.begin(), coeffs.end(), [](const Rational& x) { return x == 0; });
  }

  // hidden friends: found only by argument-dependent lookup on CohClass
  friend CohClass operator+(const CohClass& a, const CohClass& b) {
    require(a.dim() == b.dim(), "class dimension mismatch");
    CohClass c = a;
    for (int i = 0; i < a.dim(); ++i) c.coeffs[i] += b.coeffs[i];
    return c;
  }
  friend CohClass operator-(const CohClass& a, const CohClass& b) {
    require(a.dim() == b.dim(), "class dimension mismatch");
    CohClass c = a;
    for (int i = 0; i < a.dim(); ++i) c.coeffs[i] -= b.coeffs[i];
    return c;
  }
  friend CohClass operator*(const Rational& s, const CohClass& a) {
    CohClass c = a;
    for (auto& x : c.coeffs) x *= s;
    return c;
  }
};

inline std::string to_string(const Rational& q) { return q.str(); }

// Standard E8 Gram matrix: diagonal 2, -1 on the edges of the Dynkin diagram
// (chain 1-2-3-4-5-6-7 with node 8 attached to node 5).
inline std::vector<std::vector<long long>> e8_gram() {
  std::vector<std::vector<long long>> g(8, std::vector<long long>(8, 0));
  for (int i = 0; i < 8; ++i) g[i][i] = 2;
  const int edges[7][2] = {{0, 1}, {1, 2}, {2, 3}, {3, 4}, {4, 5}, {5, 6}, {4, 7}};
  for (auto& e : edges) g[e[0]][e[1]] = g[e[1]][e[0]] = -1;
  return g;
}

// Exact determinant of a small integer matrix (fraction-free elimination over rationals).
inline Rational determinant(const std::vector<std::vector<long long>>& g) {
  const int n = static_cast<int>(g.size());
  std::vector<RVec> a(n, RVec(n));
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) a[i][j] = g[i][j];
  Rational det = 1;
  for (int c = 0; c < n; ++c) {
    int p = c;
    while (p < n && a[p][c] == 0) ++p;
    if (p == n) return 0;
    if (p != c) std::swap(a[p], a[c]), det = -det;
    det *= a[c][c];
    for (int r = c + 1; r < n; ++r) {
      if (a[r][c] == 0) continue;
      Rational f = a[r][c] / a[c][c];
      for (int k = c; k < n; ++k) a[r][k] -= f * a[c][k];
    }
  }
  return det;
}

inline void validate_form(const UnimodularForm& f) {
  const int n = f.rank();
  require(n >= 1, "form must have positive rank");
  for (auto& row : f.gram) require(static_cast<int>(row.size()) == n, "gram matrix must be square");
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) require(f.gram[i][j] == f.gram[j][i], "gram matrix must be symmetric");
  if (f.kind == UnimodularForm::Kind::Even)
    for (int i = 0; i < n; ++i) require(f.gram[i][i] % 2 == 0, "even form must have even diagonal");
  Rational d = determinant(f.gram);
  require(d == 1 || d == -1, "gram matrix is not unimodular (|det| != 1)");
  require(static_cast<int>(f.labels.size()) == n, "label count must match rank");
}

inline UnimodularForm odd_form(int p_plus, int q_minus) {
  require(p_plus >= 0 && q_minus >= 0 && p_plus + q_minus >= 1, "odd form needs nonnegative signature, rank >= 1");
  UnimodularForm f;
  f.kind = UnimodularForm::Kind::OddDiagonal;
  f.p_plus = p_plus;
  f.q_minus = q_minus;
  const int n = p_plus + q_minus;
  f.gram.assign(n, std::vector<long long>(n, 0));
  for (int i = 0; i < n; ++i) f.gram[i][i] = i < p_plus ? 1 : -1;
  for (int j = 0; j < p_plus; ++j) f.labels.push_back("P" + std::to_string(j + 1));
  for (int a = 0; a < q_minus; ++a) f.labels.push_back("Q" + std::to_string(a + 1));
  validate_form(f);
  return f;
}

// Basis order: P_1, Q_1, ..., P_N, Q_N, then the E8 blocks (sign of e8_count).
inline UnimodularForm even_form(int hyperbolic, int e8_count) {
  require(hyperbolic >= 0, "hyperbolic pair count must be nonnegative");
  require(hyperbolic + std::abs(e8_count) >= 1, "even form must have positive rank");
  UnimodularForm f;
  f.kind = UnimodularForm::Kind::Even;
  f.hyperbolic = hyperbolic;
  f.e8_count = e8_count;
  const int n = 2 * hyperbolic + 8 * std::abs(e8_count);
  f.gram.assign(n, std::vector<long long>(n, 0));
  for (int j = 0; j < hyperbolic; ++j) {
    f.gram[2 * j][2 * j + 1] = f.gram[2 * j + 1][2 * j] = 1;
    f.labels.push_back("P" + std::to_string(j + 1));
    f.labels.push_back("Q" + std::to_string(j + 1));
  }
  auto e8 = e8_gram();
  const long long s = e8_count >= 0 ? 1 : -1;
  for (int b = 0; b < std::abs(e8_count); ++b) {
    const int o = 2 * hyperbolic + 8 * b;
    for (int i = 0; i < 8; ++i) {
      for (int j = 0; j < 8; ++j) f.gram[o + i][o + j] = s * e8[i][j];
      f.labels.push_back("E" + std::to_string(b + 1) + "_" + std::to_string(i + 1));
    }
  }
  validate_form(f);
  return f;
}

inline Rational pairing(const UnimodularForm& f, const CohClass& t, const CohClass& u) {
  const int n = f.rank();
  require(t.dim() == n && u.dim() == n, "class dimension does not match form rank");
  Rational s = 0;
  for (int i = 0; i < n; ++i) {
    if (t.coeffs[i] == 0) continue;
    for (int j = 0; j < n; ++j)
      if (f.gram[i][j] != 0 && u.coeffs[j] != 0) s += t.coeffs[i] * f.gram[i][j] * u.coeffs[j];
  }
  return s;
}

// Least common denominator scaling to a primitive integer vector (same direction).
inline CohClass clear_denominators(const CohClass& c) {
  BigInt l = 1;
  for (auto& x : c.coeffs) l = boost::multiprecision::lcm(l, boost::multiprecision::denominator(x));
  BigInt g = 0;
  for (auto& x : c.coeffs) g = boost::multiprecision::gcd(g, BigInt(boost::multiprecision::numerator(x) * (l / boost::multiprecision::denominator(x))));
  if (g == 0) return c;
  CohClass out = c;
  for (auto& x : out.coeffs) x = x * Rational(l) / Rational(g);
  return out;
}

// True iff a and b are linearly dependent (including either being zero).
inline bool proportional(const CohClass& a, const CohClass& b) {
  require(a.dim() == b.dim(), "class dimension mismatch");
  for (int i = 0; i < a.dim(); ++i)
    for (int j = i + 1; j < a.dim(); ++j)
      if (a.coeffs[i] * b.coeffs[j] != a.coeffs[j] * b.coeffs[i]) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Pontrjagin-type class search: t with t.t = k.

enum class OddAnsatz { Literal, Shifted, Auto };

struct PontrjaginResult {
  bool ok = false;
  std::string report;  // failure reason or ansatz used
  CohClass t;
  Rational tt = 0;
  long long q = 0, p = 0;  // odd branch parameters
  int eps = 0;             // odd branch sign of the x1, x2 directions
  std::string ansatz;      // "literal" (2p+1, 2p-1) or "shifted" (p+1, p-1); "even" for the spin branch
  std::vector<long long> abcd;  // even branch coefficients
};

inline long long floor_div(long long a, long long b) {
  long long q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}
inline long long mod_pos(long long a, long long b) { return ((a % b) + b) % b; }

// Odd branch: t = q x1 + (2p+1) x2 + (2p-1) x3 (literal, t.t = eps (q^2 + 8p)) or
// t = q x1 + (p+1) x2 + (p-1) x3 (shifted, t.t = eps (q^2 + 4p)); x1, x2 of
// square eps and x3 of square -eps. q is the smallest admissible value >= coeff_min.
// Even branch: t = a x1 + b x2 + c x3 + d x4 on two hyperbolic pairs, 2(ab + cd) = k.
inline PontrjaginResult pontrjagin_class_search(const UnimodularForm& f, long long k, long long coeff_min,
                                                OddAnsatz ansatz = OddAnsatz::Auto) {
  validate_form(f);
  require(coeff_min >= 1, "coeff_min must be a positive integer");
  PontrjaginResult res;
  const int n = f.rank();
  if (f.is_odd()) {
    require(n >= 3 && f.p_plus >= 1 && f.q_minus >= 1, "odd branch needs rank >= 3 with mixed signs");
    int eps;
    int x1, x2, x3;
    if (f.p_plus >= 2) {
      eps = 1, x1 = 0, x2 = 1, x3 = f.p_plus;
    } else {
      eps = -1, x1 = f.p_plus, x2 = f.p_plus + 1, x3 = 0;
    }
    const long long ek = eps * k;
    const bool in4 = mod_pos(k, 4) == 0;
    const bool odd1 = mod_pos(ek, 4) == 1;
    if (!in4 && !odd1) {
      res.report = "congruence failure: k must lie in 4Z or satisfy eps*k = 1 (mod 4) with eps = " + std::to_string(eps);
      return res;
    }
    const long long par = in4 ? 0 : 1;  // parity of q
    auto try_ansatz = [&](bool literal) -> bool {
      const long long div = literal ? 8 : 4;
      long long q = std::max<long long>(coeff_min, par);
      if (mod_pos(q, 2) != par) ++q;
      for (int step = 0; step < 4; ++step, q += 2) {
        long long rem = ek - q * q;
        if (mod_pos(rem, div) != 0) continue;
        long long p = rem / div;
        CohClass t = CohClass::zero(n);
        t.coeffs[x1] = q;
        t.coeffs[x2] = literal ? 2 * p + 1 : p + 1;
        t.coeffs[x3] = literal ? 2 * p - 1 : p - 1;
        res.t = t;
        res.q = q;
        res.p = p;
        res.eps = eps;
        res.ansatz = literal ? "literal" : "shifted";
        return true;
      }
      return false;
    };
    bool found = false;
    if (ansatz != OddAnsatz::Shifted) found = try_ansatz(true);
    if (!found && ansatz != OddAnsatz::Literal) found = try_ansatz(false);
    if (!found) {
      res.report = "not representable in this branch: literal ansatz needs 8 | (eps*k - q^2)";
      return res;
    }
  } else {
    if (mod_pos(k, 2) != 0) {
      res.report = "congruence failure: an even form only represents even k";
      return res;
    }
    require(f.hyperbolic >= 1, "even branch needs at least one hyperbolic pair");
    const long long h = k / 2, a = coeff_min;
    long long b, c, d;
    if (mod_pos(h, a) == 0) {
      b = h / a, c = 0, d = 0;
    } else {
      b = floor_div(h, a), c = 1, d = h - a * b;
      if (f.hyperbolic < 2) {
        res.report = "not representable in this branch: needs two hyperbolic pairs for k/2 not divisible by coeff_min";
        return res;
      }
    }
    CohClass t = CohClass::zero(n);
    t.coeffs[0] = a, t.coeffs[1] = b;
    if (c != 0 || d != 0) t.coeffs[2] = c, t.coeffs[3] = d;
    res.t = t;
    res.ansatz = "even";
    res.abcd = {a, b, c, d};
  }
  res.tt = pairing(f, res.t, res.t);
  if (res.tt != Rational(k)) throw NumericalError("pontrjagin_class_search verification failed: t.t = " + res.tt.str());
  res.ok = true;
  res.report = "verified";
  return res;
}

// ---------------------------------------------------------------------------
// Kahler-adapted class: t.t = 0, t.w != 0 and t.K = 0 (or t.K != 0 when want_tK_zero is off).

struct KahlerResult {
  CohClass t;
  Rational tt, tK, tw;
  std::string method;         // "triple", "pair" or "hyperbolic-definite"
  std::vector<int> selection; // chosen basis indices (and signs for the odd branch)
};

namespace detail {

// Basis of the rational null space of the rows (RREF, free-variable basis),
// each vector scaled to primitive integers with first nonzero entry positive.
inline std::vector<RVec> null_space(const std::vector<RVec>& rows, int n) {
  std::vector<RVec> a = rows;
  std::vector<int> pivcol;
  int r = 0;
  for (int c = 0; c < n && r < static_cast<int>(a.size()); ++c) {
    int p = r;
    while (p < static_cast<int>(a.size()) && a[p][c] == 0) ++p;
    if (p == static_cast<int>(a.size())) continue;
    std::swap(a[p], a[r]);
    Rational piv = a[r][c];
    for (auto& x : a[r]) x /= piv;
    for (int i = 0; i < static_cast<int>(a.size()); ++i) {
      if (i == r || a[i][c] == 0) continue;
      Rational fct = a[i][c];
      for (int k = 0; k < n; ++k) a[i][k] -= fct * a[r][k];
    }
    pivcol.push_back(c);
    ++r;
  }
  std::vector<RVec> basis;
  for (int fc = 0; fc < n; ++fc) {
    if (std::find(pivcol.begin(), pivcol.end(), fc) != pivcol.end()) continue;
    RVec v(n, Rational(0));
    v[fc] = 1;
    for (int i = 0; i < static_cast<int>(pivcol.size()); ++i) v[pivcol[i]] = -a[i][fc];
    CohClass c = clear_denominators(CohClass(v));
    for (auto& x : c.coeffs)
      if (x != 0) {
        if (x < 0)
          for (auto& y : c.coeffs) y = -y;
        break;
      }
    basis.push_back(c.coeffs);
  }
  return basis;
}

// Candidate vectors from a null-space basis: e_i, then e_i + e_j, e_i - e_j.
inline std::vector<RVec> candidates(const std::vector<RVec>& basis) {
  std::vector<RVec> out = basis;
  for (size_t i = 0; i < basis.size(); ++i)
    for (size_t j = i + 1; j < basis.size(); ++j) {
      RVec s = basis[i], d = basis[i];
      for (size_t k = 0; k < s.size(); ++k) s[k] += basis[j][k], d[k] -= basis[j][k];
      out.push_back(s);
      out.push_back(d);
    }
  return out;
}

inline Rational dot(const RVec& a, const RVec& b) {
  Rational s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline bool next_combination(std::vector<int>& c, int n) {
  const int k = static_cast<int>(c.size());
  for (int i = k - 1; i >= 0; --i)
    if (c[i] < n - k + i) {
      ++c[i];
      for (int j = i + 1; j < k; ++j) c[j] = c[j - 1] + 1;
      return true;
    }
  return false;
}

}  // namespace detail

inline KahlerResult verified_kahler(const UnimodularForm& f, const CohClass& t, const CohClass& K, const CohClass& w,
                                    bool want_tK_zero, std::string method, std::vector<int> sel) {
  KahlerResult r;
  r.t = t;
  r.tt = pairing(f, t, t);
  r.tK = pairing(f, t, K);
  r.tw = pairing(f, t, w);
  r.method = std::move(method);
  r.selection = std::move(sel);
  bool ok = r.tt == 0 && r.tw != 0 && (want_tK_zero ? r.tK == 0 : r.tK != 0);
  if (!ok) throw NumericalError("kahler_t_search verification failed");
  return r;
}

inline KahlerResult kahler_t_search(const UnimodularForm& f, const CohClass& K, const CohClass& w, bool want_tK_zero = true) {
  validate_form(f);
  const int n = f.rank();
  require(K.dim() == n && w.dim() == n, "class dimension does not match form rank");
  if (proportional(K, w)) throw ValidationError("K proportional to w: the construction is obstructed");
  require(!w.is_zero(), "w must be nonzero");
  using detail::dot;
  if (f.is_odd()) {
    require(f.p_plus >= 3 && f.q_minus >= 3, "odd branch needs b2+ >= 3 and b2- >= 3");
    const int P = f.p_plus, Qn = f.q_minus;
    std::vector<int> js = {0, 1, 2};
    do {
      std::vector<int> as = {0, 1, 2};
      do {
        std::vector<int> perm = as;
        do {
          for (int sg = 0; sg < 8; ++sg) {
            RVec delta(3);
            for (int k = 0; k < 3; ++k) delta[k] = ((sg >> k) & 1) ? -1 : 1;
            // t = sum c_k (P_j(k) + delta_k Q_a(k)); t.K = c.(n - delta m), t.w = c.(u - delta v)
            RVec nK(3), nW(3), nv(3), mv(3);
            for (int k = 0; k < 3; ++k) {
              nv[k] = K.coeffs[js[k]];
              mv[k] = delta[k] * K.coeffs[P + perm[k]];
              nK[k] = nv[k] - mv[k];
              nW[k] = w.coeffs[js[k]] - delta[k] * w.coeffs[P + perm[k]];
            }
            std::vector<RVec> cands;
            if (want_tK_zero) {
              cands = detail::candidates(detail::null_space({nv, mv}, 3));
            } else {
              std::vector<RVec> e(3, RVec(3, Rational(0)));
              for (int k = 0; k < 3; ++k) e[k][k] = 1;
              cands = detail::candidates(e);
            }
            for (auto& c : cands) {
              if (dot(c, nW) == 0) continue;
              if (!want_tK_zero && dot(c, nK) == 0) continue;
              CohClass t = CohClass::zero(n);
              for (int k = 0; k < 3; ++k) {
                t.coeffs[js[k]] += c[k];
                t.coeffs[P + perm[k]] += delta[k] * c[k];
              }
              std::vector<int> sel = {js[0], js[1], js[2], P + perm[0], P + perm[1], P + perm[2], sg};
              return verified_kahler(f, t, K, w, want_tK_zero, "triple", sel);
            }
          }
        } while (std::next_permutation(perm.begin(), perm.end()));
      } while (detail::next_combination(as, Qn));
    } while (detail::next_combination(js, P));
    throw NumericalError("no triple selection yields t.w != 0");
  }
  // spin branch
  const int N = f.hyperbolic;
  require(N >= 2, "spin branch needs at least two hyperbolic pairs");
  auto unit = [&](int i) {
    CohClass e = CohClass::zero(n);
    e.coeffs[i] = 1;
    return e;
  };
  // Stage 1: t = c1 U1 + c2 U2 with U1, U2 from distinct hyperbolic pairs.
  for (int i1 = 0; i1 < 2 * N; ++i1)
    for (int i2 = i1 + 1; i2 < 2 * N; ++i2) {
      if (i1 / 2 == i2 / 2) continue;
      CohClass U1 = unit(i1), U2 = unit(i2);
      Rational x1 = pairing(f, U1, K), x2 = pairing(f, U2, K);
      Rational y1 = pairing(f, U1, w), y2 = pairing(f, U2, w);
      std::vector<RVec> cands;
      if (want_tK_zero) {
        cands = detail::candidates(detail::null_space({RVec{x1, x2}}, 2));
      } else {
        cands = detail::candidates({RVec{1, 0}, RVec{0, 1}});
      }
      for (auto& c : cands) {
        if (c[0] * y1 + c[1] * y2 == 0) continue;
        if (!want_tK_zero && c[0] * x1 + c[1] * x2 == 0) continue;
        CohClass t = c[0] * U1 + c[1] * U2;
        return verified_kahler(f, t, K, w, want_tK_zero, "pair", {i1, i2});
      }
    }
  if (!want_tK_zero) throw NumericalError("no pair selection gives t.K != 0 and t.w != 0");
  // Stage 2: t = sum c_j P_j + sum x_j Q_j + T_c (hyperbolic coefficients proportional).
  RVec nvec(N), mvec(N);
  for (int j = 0; j < N; ++j) nvec[j] = K.coeffs[2 * j], mvec[j] = K.coeffs[2 * j + 1];
  bool swapPQ = false;
  auto allzero = [](const RVec& v) { return std::all_of(v.begin(), v.end(), [](const Rational& x) { return x == 0; }); };
  if (allzero(nvec) && !allzero(mvec)) swapPQ = true, std::swap(nvec, mvec);
  // indices of the "P" role and "Q" role basis elements after the optional swap
  auto pidx = [&](int j) { return swapPQ ? 2 * j + 1 : 2 * j; };
  auto qidx = [&](int j) { return swapPQ ? 2 * j : 2 * j + 1; };
  const int defn = n - 2 * N;
  if (defn == 0) throw NumericalError("no definite summand: t.w vanishes for every admissible t");
  CohClass T = CohClass::zero(n);
  for (int i = 2 * N; i < n; ++i) T.coeffs[i] = K.coeffs[i];
  // c: nonzero, c.m = 0, independent of n (any nonzero when n = 0)
  std::vector<RVec> cbasis;
  if (allzero(mvec)) {
    for (int j = 0; j < N; ++j) {
      RVec e(N, Rational(0));
      e[j] = 1;
      cbasis.push_back(e);
    }
  } else {
    cbasis = detail::null_space({mvec}, N);
  }
  std::optional<RVec> cvec;
  for (auto& c : detail::candidates(cbasis)) {
    if (allzero(nvec) || !proportional(CohClass(c), CohClass(nvec))) {
      cvec = c;
      break;
    }
  }
  if (!cvec) throw NumericalError("no vector c with c.m = 0 independent of n");
  // T_c candidates in the definite summand: basis vectors then pair sums;
  // when n = 0 they are projected orthogonally to T so that T_c.T = 0.
  std::vector<RVec> tb;
  for (int i = 0; i < defn; ++i) {
    RVec e(defn, Rational(0));
    e[i] = 1;
    tb.push_back(e);
  }
  Rational TT = pairing(f, T, T);
  for (auto& tc : detail::candidates(tb)) {
    CohClass Tc = CohClass::zero(n);
    for (int i = 0; i < defn; ++i) Tc.coeffs[2 * N + i] = tc[i];
    if (allzero(nvec) && !T.is_zero()) {
      if (TT == 0) continue;
      Tc = Tc - (pairing(f, Tc, T) / TT) * T;
      if (Tc.is_zero()) continue;
    }
    Rational rhs1 = -pairing(f, Tc, T);              // x.n = -T_c.T
    Rational rhs2 = -pairing(f, Tc, Tc) / 2;         // x.c = -T_c.T_c / 2
    RVec x(N, Rational(0));
    const RVec& c = *cvec;
    if (allzero(nvec)) {
      if (rhs1 != 0) continue;
      Rational cc = dot(c, c);
      for (int j = 0; j < N; ++j) x[j] = rhs2 / cc * c[j];
    } else {
      // x = alpha n + beta c solving the 2x2 Gram system
      Rational nn = dot(nvec, nvec), nc = dot(nvec, c), cc = dot(c, c);
      Rational det = nn * cc - nc * nc;
      if (det == 0) continue;
      Rational al = (rhs1 * cc - rhs2 * nc) / det, be = (rhs2 * nn - rhs1 * nc) / det;
      for (int j = 0; j < N; ++j) x[j] = al * nvec[j] + be * c[j];
    }
    CohClass t = Tc;
    for (int j = 0; j < N; ++j) t.coeffs[pidx(j)] += c[j], t.coeffs[qidx(j)] += x[j];
    Rational tw = pairing(f, t, w);
    if (tw == 0) continue;
    return verified_kahler(f, t, K, w, want_tK_zero, "hyperbolic-definite", {swapPQ ? 1 : 0});
  }
  throw NumericalError("no definite-summand class T_c gives t.w != 0");
}

// ---------------------------------------------------------------------------
// Symplectic zeta class for K.K <= 0 on an odd form.

struct ZetaResult {
  CohClass zeta;
  Rational zz, zK, zw;
  CohClass base;       // rational approximation of the real null class
  Rational eps_base;   // its self-pairing
  CohClass correction; // the class s added to cancel eps_base
  std::vector<int> assignment;  // j1, j2, a1, a2, delta1, delta2
  std::string method;  // "corrected", "exact" or "euler-class"
};

namespace detail {

// Best rational approximation with denominator <= maxden (continued fractions).
inline Rational rationalize(double x, long long maxden = 1000000) {
  if (!std::isfinite(x)) throw NumericalError("non-finite value in rationalization");
  long long h0 = 0, h1 = 1, k0 = 1, k1 = 0;
  double v = x;
  for (int it = 0; it < 64; ++it) {
    double a = std::floor(v);
    if (std::abs(a) > 9e15) break;
    long long ai = static_cast<long long>(a);
    long long k2 = ai * k1 + k0;
    if (k2 > maxden) break;
    long long h2 = ai * h1 + h0;
    h0 = h1, h1 = h2, k0 = k1, k1 = k2;
    double fr = v - a;
    if (fr < 1e-15) break;
    v = 1.0 / fr;
  }
  return Rational(h1) / Rational(k1);
}

inline double to_double(const Rational& q) { return static_cast<double>(q); }

}  // namespace detail

// The self-dual subspace is the span of the P's and the anti-self-dual
// subspace the span of the Q's (orthonormal for the positive metric that
// flips the sign on the Q's). Only the self-dual part of w_direction enters;
// it must be nonzero. The reported zw pairs zeta with that part.
inline ZetaResult symplectic_zeta_search(const UnimodularForm& f, const CohClass& K, const CohClass& w_direction) {
  validate_form(f);
  require(f.is_odd(), "symplectic zeta search needs an odd (diagonal) form");
  require(f.p_plus >= 3 && f.q_minus >= 3, "symplectic zeta search needs b2+ >= 3 and b2- >= 3");
  const int n = f.rank(), P = f.p_plus;
  require(K.dim() == n && w_direction.dim() == n, "class dimension does not match form rank");
  Rational KK = pairing(f, K, K);
  if (KK > 0) throw ValidationError("K.K > 0: no universal algorithm is known for this case");
  if (K.is_zero()) throw ValidationError("K is torsion (zero): there are no K constraints beyond zeta^+ != 0");
  ZetaResult res;
  // the symplectic form is self-dual: only the P-part of w_direction is used
  CohClass wsd = CohClass::zero(n);
  for (int i = 0; i < P; ++i) wsd.coeffs[i] = w_direction.coeffs[i];
  require(!wsd.is_zero(), "w_direction must have a nonzero self-dual part");
  auto finish = [&](const CohClass& z) {
    res.zeta = z;
    res.zz = pairing(f, z, z);
    res.zK = pairing(f, z, K);
    res.zw = pairing(f, z, wsd);
    if (res.zz != 0 || res.zK != 0 || res.zw == 0) throw NumericalError("symplectic_zeta_search verification failed");
    return res;
  };
  // continuum decomposition K = alpha w~ + c + beta y
  Eigen::VectorXd kd(n), wp = Eigen::VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) kd(i) = detail::to_double(K.coeffs[i]);
  for (int i = 0; i < P; ++i) wp(i) = detail::to_double(w_direction.coeffs[i]);
  Eigen::VectorXd wt = wp / wp.norm();
  Eigen::VectorXd kp = Eigen::VectorXd::Zero(n), kq = Eigen::VectorXd::Zero(n);
  kp.head(P) = kd.head(P);
  kq.tail(n - P) = kd.tail(n - P);
  const double alpha = kp.dot(wt);
  Eigen::VectorXd cvec = kp - alpha * wt;
  const double beta = kq.norm();
  bool c_zero = true;
  {
    // exact test: K_P proportional to w_P
    CohClass kP = CohClass::zero(n), wP = CohClass::zero(n);
    for (int i = 0; i < P; ++i) kP.coeffs[i] = K.coeffs[i], wP.coeffs[i] = w_direction.coeffs[i];
    c_zero = proportional(kP, wP);
  }
  if (KK == 0 && c_zero) {
    res.method = "euler-class";
    res.base = K;
    res.eps_base = 0;
    res.correction = CohClass::zero(n);
    return finish(K);
  }
  // zeta_2 = beta w~ + alpha y + sqrt(beta^2 - alpha^2) y', with y' an ASD unit vector orthogonal to y
  Eigen::VectorXd y = kq / beta;
  Eigen::VectorXd yp = Eigen::VectorXd::Zero(n);
  for (int a = P; a < n && yp.norm() < 0.5; ++a) {
    Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
    e(a) = 1;
    e -= e.dot(y) * y;
    if (e.norm() > 0.3) yp = e / e.norm();
  }
  const double s2 = beta * beta - alpha * alpha;
  if (s2 < 0) throw NumericalError("inconsistent decomposition: beta^2 < alpha^2");
  Eigen::VectorXd z2 = beta * wt + alpha * y + std::sqrt(s2) * yp;
  (void)cvec;
  // rational approximation, projected back to K-orthogonality along the basis direction of largest |e_i.K|
  CohClass z3 = CohClass::zero(n);
  for (int i = 0; i < n; ++i) z3.coeffs[i] = detail::rationalize(z2(i));
  int best = 0;
  Rational bestv = 0;
  for (int i = 0; i < n; ++i) {
    Rational v = K.coeffs[i] * f.gram[i][i];
    if (abs(v) > abs(bestv)) bestv = v, best = i;
  }
  z3.coeffs[best] -= pairing(f, z3, K) / bestv;
  res.base = z3;
  res.eps_base = pairing(f, z3, z3);
  if (res.eps_base == 0) {
    res.method = "exact";
    res.correction = CohClass::zero(n);
    return finish(z3);
  }
  // correction s = sum_k x_k (P_j(k) + delta_k Q_a(k)) solving the two-variable system
  const int Qn = n - P;
  for (int j1 = 0; j1 < P; ++j1)
    for (int j2 = j1 + 1; j2 < P; ++j2)
      for (int a1 = 0; a1 < Qn; ++a1)
        for (int a2 = 0; a2 < Qn; ++a2) {
          if (a1 == a2) continue;
          for (int sg = 0; sg < 4; ++sg) {
            const int d1 = (sg & 1) ? -1 : 1, d2 = (sg & 2) ? -1 : 1;
            Rational A11 = K.coeffs[j1] - d1 * K.coeffs[P + a1], A12 = K.coeffs[j2] - d2 * K.coeffs[P + a2];
            Rational A21 = z3.coeffs[j1] - d1 * z3.coeffs[P + a1], A22 = z3.coeffs[j2] - d2 * z3.coeffs[P + a2];
            Rational det = A11 * A22 - A12 * A21;
            if (det == 0) continue;
            Rational b2 = -res.eps_base / 2;
            Rational x1 = (-A12 * b2) / det, x2 = (A11 * b2) / det;
            CohClass s = CohClass::zero(n);
            s.coeffs[j1] += x1, s.coeffs[P + a1] += d1 * x1;
            s.coeffs[j2] += x2, s.coeffs[P + a2] += d2 * x2;
            CohClass z = z3 + s;
            if (pairing(f, z, wsd) == 0) continue;
            res.correction = s;
            res.assignment = {j1, j2, P + a1, P + a2, d1, d2};
            res.method = "corrected";
            return finish(z);
          }
        }
  throw NumericalError("no assignment solves the correction system");
}

// ---------------------------------------------------------------------------
// Index formula, boundedness criterion and the pairing estimate.

// (1 + b2plus - b1) + tt - tk_sign * tK; tk_sign = +1 is the default convention.
inline Rational index_formula(long long b1, long long b2plus, const Rational& tt, const Rational& tK, int tk_sign = 1) {
  require(tk_sign == 1 || tk_sign == -1, "tK sign flag must be +1 or -1");
  return Rational(1 + b2plus - b1) + tt - Rational(tk_sign) * tK;
}

struct BoundednessResult {
  bool bounded = false;
  long long divergence_rate = 0;   // |n|
  long long slope = 0;             // n
  std::vector<double> sequence;    // q n + eps_q for q = 1..q_max
  double variation = 0;            // max - min of the sequence
};

// eps_q is a deterministic bounded sequence with |eps_q| <= eps_bound.
inline BoundednessResult boundedness_criterion(long long n, double eps_bound, int q_max = 64) {
  require(eps_bound >= 0, "eps_bound must be nonnegative");
  require(q_max >= 1, "q_max must be >= 1");
  BoundednessResult r;
  r.bounded = n == 0;
  r.slope = n;
  r.divergence_rate = n < 0 ? -n : n;
  for (int q = 1; q <= q_max; ++q) r.sequence.push_back(double(q) * double(n) + eps_bound * std::sin(1.7 * q + 0.3));
  auto [lo, hi] = std::minmax_element(r.sequence.begin(), r.sequence.end());
  r.variation = *hi - *lo;
  return r;
}

struct PairingEstimate {
  Rational central;     // exact pairing (the 1/pi is absorbed in the normalization)
  double plus_minus = kappa;
};

inline PairingEstimate prop515_estimate(const CohClass& F_class, const CohClass& Sigma_class, const UnimodularForm& f) {
  PairingEstimate e;
  e.central = pairing(f, F_class, Sigma_class);
  return e;
}

// Sequence version: F = q zeta along r = q pi / m, so the central value is q (zeta.Sigma).
inline std::vector<PairingEstimate> prop515_sequence(const CohClass& zeta, const CohClass& Sigma_class,
                                                     const UnimodularForm& f, const std::vector<long long>& qs) {
  std::vector<PairingEstimate> out;
  for (long long q : qs) out.push_back(prop515_estimate(Rational(q) * zeta, Sigma_class, f));
  return out;
}

}  // namespace sfl
