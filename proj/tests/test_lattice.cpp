#include "specflow/lattice.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sfl;

namespace {

CohClass unit(int n, int i) {
  CohClass c = CohClass::zero(n);
  c.coeffs[i] = 1;
  return c;
}

}  // namespace

TEST(Pairing, HyperbolicPair) {
  auto f = even_form(1, 0);
  EXPECT_EQ(pairing(f, unit(2, 0), unit(2, 1)), Rational(1));
}

TEST(Pairing, DiagonalNullVector) {
  auto f = odd_form(1, 1);
  auto t = CohClass::ints({1, 1});
  EXPECT_EQ(pairing(f, t, t), Rational(0));
}

TEST(Pairing, E8DiagonalEntry) {
  auto f = even_form(0, 1);
  EXPECT_EQ(pairing(f, unit(8, 0), unit(8, 0)), Rational(2));
}

TEST(Pairing, DimensionMismatchRejected) {
  EXPECT_THROW(pairing(odd_form(2, 1), unit(2, 0), unit(3, 0)), ValidationError);
}

TEST(Forms, Unimodular) {
  EXPECT_EQ(abs(determinant(even_form(2, 1).gram)), Rational(1));
  EXPECT_EQ(abs(determinant(odd_form(3, 3).gram)), Rational(1));
}

TEST(Pontrjagin, EvenSmallK) {
  auto r = pontrjagin_class_search(even_form(2, 0), 2, 1);
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.abcd, (std::vector<long long>{1, 1, 0, 0}));
  EXPECT_EQ(r.tt, Rational(2));
}

TEST(Pontrjagin, EvenLargeLeadingCoefficient) {
  auto r = pontrjagin_class_search(even_form(2, 0), 0, 100);
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.abcd, (std::vector<long long>{100, 0, 0, 0}));
  EXPECT_EQ(r.tt, Rational(0));
}

TEST(Pontrjagin, OddExample) {
  auto r = pontrjagin_class_search(odd_form(2, 1), 4, 1);
  ASSERT_TRUE(r.ok);
  EXPECT_EQ(r.tt, Rational(4));
  EXPECT_EQ(abs(r.t.coeffs[0]), Rational(2));
  EXPECT_EQ(abs(r.t.coeffs[1]), Rational(1));
  EXPECT_EQ(abs(r.t.coeffs[2]), Rational(1));
}

TEST(Pontrjagin, EveryEvenKOnEvenForm) {
  for (long long k = -40; k <= 40; k += 2) {
    auto r = pontrjagin_class_search(even_form(2, 0), k, 3);
    ASSERT_TRUE(r.ok) << "k = " << k;
    EXPECT_EQ(pairing(even_form(2, 0), r.t, r.t), Rational(k));
    EXPECT_GE(r.t.coeffs[0], Rational(3));
  }
}

TEST(Pontrjagin, OddCongruenceClasses) {
  for (auto f : {odd_form(2, 1), odd_form(1, 2), odd_form(3, 3)}) {
    const long long eps = f.p_plus >= 2 ? 1 : -1;
    for (long long k = -40; k <= 40; ++k) {
      auto r = pontrjagin_class_search(f, k, 1);
      const bool admissible = k % 4 == 0 || ((eps * k) % 4 + 4) % 4 == 1;
      if (admissible) {
        ASSERT_TRUE(r.ok) << "k = " << k << ": " << r.report;
        EXPECT_EQ(pairing(f, r.t, r.t), Rational(k));
      } else {
        EXPECT_FALSE(r.ok) << "k = " << k;
        EXPECT_NE(r.report.find("congruence failure"), std::string::npos);
      }
    }
  }
}

TEST(Pontrjagin, OddEvenKRejected) {
  auto r = pontrjagin_class_search(even_form(2, 0), 3, 1);
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.report.find("congruence failure"), std::string::npos);
  EXPECT_THROW(pontrjagin_class_search(even_form(2, 0), 2, 0), ValidationError);
}

TEST(Kahler, OddExample) {
  auto f = odd_form(3, 3);
  auto r = kahler_t_search(f, CohClass::ints({1, 1, 1, 1, 1, 1}), CohClass::ints({2, 1, 1, 0, 0, 0}));
  EXPECT_EQ(r.t.coeffs, CohClass::ints({1, -1, 0, 1, -1, 0}).coeffs);
  EXPECT_EQ(r.tt, Rational(0));
  EXPECT_EQ(r.tK, Rational(0));
  EXPECT_EQ(r.tw, Rational(1));
}

TEST(Kahler, SpinExample) {
  auto f = even_form(2, 1);
  std::vector<long long> k(12, 0), w(12, 0);
  k[0] = 1;
  w[0] = 2, w[4] = 1;
  auto K = CohClass::ints(k), W = CohClass::ints(w);
  auto r = kahler_t_search(f, K, W);
  EXPECT_EQ(pairing(f, r.t, r.t), Rational(0));
  EXPECT_EQ(pairing(f, r.t, K), Rational(0));
  EXPECT_NE(pairing(f, r.t, W), Rational(0));
}

TEST(Kahler, ProportionalInputIsObstructed) {
  auto f = odd_form(3, 3);
  auto w = CohClass::ints({2, 1, 1, 0, 0, 0});
  try {
    kahler_t_search(f, Rational(2) * w, w);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("K proportional to w"), std::string::npos);
  }
}

TEST(Kahler, RandomAdmissiblePairs) {
  auto f = odd_form(3, 3);
  std::mt19937 g(5);
  std::uniform_int_distribution<int> U(-3, 3);
  int tested = 0;
  while (tested < 50) {
    std::vector<long long> k(6), w(6);
    for (auto& x : k) x = U(g);
    for (auto& x : w) x = U(g);
    auto K = CohClass::ints(k), W = CohClass::ints(w);
    if (proportional(K, W) || pairing(f, K, K) <= 0 || pairing(f, W, W) <= 0) continue;
    ++tested;
    auto r = kahler_t_search(f, K, W);
    EXPECT_EQ(pairing(f, r.t, r.t), Rational(0));
    EXPECT_EQ(pairing(f, r.t, K), Rational(0));
    EXPECT_NE(pairing(f, r.t, W), Rational(0));
  }
}

TEST(Zeta, NegativeSquare) {
  auto f = odd_form(3, 3);
  auto K = CohClass::ints({1, 0, 0, 1, 1, 1});
  ASSERT_EQ(pairing(f, K, K), Rational(-2));
  auto w = CohClass::ints({1, 0, 0, 0, 0, 0});
  auto z = symplectic_zeta_search(f, K, w);
  EXPECT_EQ(pairing(f, z.zeta, z.zeta), Rational(0));
  EXPECT_EQ(pairing(f, z.zeta, K), Rational(0));
  EXPECT_NE(pairing(f, z.zeta, w), Rational(0));
}

TEST(Zeta, NullSquareWithTransverseComponent) {
  auto f = odd_form(3, 3);
  auto K = CohClass::ints({1, 1, 0, 1, 1, 0});
  ASSERT_EQ(pairing(f, K, K), Rational(0));
  auto w = CohClass::ints({1, 0, 0, 0, 0, 0});
  auto z = symplectic_zeta_search(f, K, w);
  EXPECT_NE(z.method, "euler-class");
  EXPECT_EQ(z.zz, Rational(0));
  EXPECT_EQ(z.zK, Rational(0));
  EXPECT_NE(z.zw, Rational(0));
}

TEST(Zeta, EulerClassBranch) {
  auto f = odd_form(3, 3);
  auto K = CohClass::ints({2, 0, 0, 0, 2, 0});
  auto z = symplectic_zeta_search(f, K, CohClass::ints({1, 0, 0, 0, 0, 0}));
  EXPECT_EQ(z.method, "euler-class");
  EXPECT_EQ(z.zeta.coeffs, K.coeffs);
}

TEST(Zeta, PositiveSquareHasNoAlgorithm) {
  auto f = odd_form(3, 3);
  try {
    symplectic_zeta_search(f, CohClass::ints({1, 1, 0, 0, 0, 0}), CohClass::ints({1, 0, 0, 0, 0, 0}));
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("no universal algorithm"), std::string::npos);
  }
}

TEST(Zeta, TorsionCanonicalClassReported) {
  EXPECT_THROW(symplectic_zeta_search(odd_form(3, 3), CohClass::zero(6), CohClass::ints({1, 0, 0, 0, 0, 0})),
               ValidationError);
}

TEST(Zeta, RandomNonPositiveSquares) {
  auto f = odd_form(3, 3);
  std::mt19937 g(9);
  std::uniform_int_distribution<int> U(-3, 3);
  int tested = 0;
  while (tested < 50) {
    std::vector<long long> k(6), w(6);
    for (auto& x : k) x = U(g);
    for (auto& x : w) x = U(g);
    auto K = CohClass::ints(k), W = CohClass::ints(w);
    if (K.is_zero() || pairing(f, K, K) > 0 || (w[0] == 0 && w[1] == 0 && w[2] == 0)) continue;
    ++tested;
    auto z = symplectic_zeta_search(f, K, W);
    EXPECT_EQ(pairing(f, z.zeta, z.zeta), Rational(0));
    EXPECT_EQ(pairing(f, z.zeta, K), Rational(0));
    EXPECT_NE(z.zw, Rational(0));
  }
}

TEST(Index, Examples) {
  EXPECT_EQ(index_formula(4, 3, 0, 0), Rational(0));
  EXPECT_EQ(index_formula(0, 3, 0, 5), Rational(-1));
  EXPECT_EQ(index_formula(0, 1, 0, 0), Rational(2));
  EXPECT_EQ(index_formula(0, 3, 0, 5, -1), Rational(9));
  EXPECT_THROW(index_formula(0, 3, 0, 5, 0), ValidationError);
}

TEST(Index, AffineWithUnitCoefficients) {
  std::mt19937 g(2);
  std::uniform_int_distribution<int> U(-20, 20);
  for (int i = 0; i < 50; ++i) {
    Rational tt(U(g), 3), tK(U(g), 7);
    Rational base = index_formula(1, 3, 0, 0);
    EXPECT_EQ(index_formula(1, 3, tt, tK) - base, tt - tK);
    EXPECT_EQ(index_formula(1, 3, tt + 1, tK) - index_formula(1, 3, tt, tK), Rational(1));
    EXPECT_EQ(index_formula(1, 3, tt, tK + 1) - index_formula(1, 3, tt, tK), Rational(-1));
  }
}

TEST(Criterion, BoundedIffZero) {
  auto b = boundedness_criterion(0, 0.7);
  EXPECT_TRUE(b.bounded);
  EXPECT_LE(b.variation, 1.4 + 1e-12);
  auto d = boundedness_criterion(3, 0.7);
  EXPECT_FALSE(d.bounded);
  EXPECT_EQ(d.slope, 3);
  EXPECT_EQ(d.divergence_rate, 3);
  EXPECT_EQ(boundedness_criterion(-2, 0.1).divergence_rate, 2);
  EXPECT_EQ(boundedness_criterion(0, 0.0).variation, 0.0);
  EXPECT_THROW(boundedness_criterion(0, -1.0), ValidationError);
}

TEST(Estimate, BoundedFamily) {
  auto f = odd_form(3, 3);
  auto K = CohClass::ints({1, 0, 0, 1, 1, 1});
  auto z = symplectic_zeta_search(f, K, CohClass::ints({1, 0, 0, 0, 0, 0}));
  for (auto& e : prop515_sequence(z.zeta, K, f, {1, 2, 5, 10})) {
    EXPECT_EQ(e.central, Rational(0));
    EXPECT_EQ(e.plus_minus, kappa);
  }
}

TEST(Estimate, LinearGrowthWhenPairingNonzero) {
  auto f = odd_form(3, 3);
  auto zeta = CohClass::ints({1, 0, 0, 1, 0, 0}), Sigma = CohClass::ints({1, 0, 0, 0, 0, 0});
  auto seq = prop515_sequence(zeta, Sigma, f, {1, 2, 3, 4});
  for (size_t i = 0; i < seq.size(); ++i) EXPECT_EQ(seq[i].central, Rational(static_cast<long long>(i + 1)));
}

TEST(Estimate, ZeroClass) {
  auto f = odd_form(3, 3);
  auto e = prop515_estimate(CohClass::zero(6), CohClass::ints({1, 2, 3, 0, 0, 1}), f);
  EXPECT_EQ(e.central, Rational(0));
  EXPECT_EQ(e.plus_minus, kappa);
}
