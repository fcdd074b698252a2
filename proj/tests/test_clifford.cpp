#include "specflow/clifford.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <random>

using namespace sfl;

namespace {

bool contains(const std::vector<std::string>& v, const std::string& s) {
  return std::find(v.begin(), v.end(), s) != v.end();
}

Mat8 random_orthogonal(std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> N;
  Mat8 A;
  for (int i = 0; i < 64; ++i) A(i / 8, i % 8) = N(g);
  Eigen::HouseholderQR<Mat8> qr(A);
  return qr.householderQ();
}

}  // namespace

TEST(Clifford, RelationsHoldExactly) {
  auto rep = build_clifford_rep();
  EXPECT_TRUE(verify_relations(rep).empty());
  EXPECT_EQ(relation_defect(rep), 0.0);
}

TEST(Clifford, GammaSquaresToMinusIdentity) {
  auto rep = build_clifford_rep();
  for (int a = 0; a < 4; ++a) EXPECT_EQ(Mat8(rep.gamma[a] * rep.gamma[a]), Mat8(-Mat8::Identity()));
  for (int k = 0; k < 3; ++k) EXPECT_EQ(Mat8(rep.rho[k] * rep.rho[k]), Mat8(-Mat8::Identity()));
}

TEST(Clifford, MixedAnticommutatorVanishes) {
  auto rep = build_clifford_rep();
  EXPECT_EQ(Mat8(rep.gamma[1] * rep.rho[2] + rep.rho[2] * rep.gamma[1]), Mat8(Mat8::Zero()));
}

TEST(Clifford, GammaIsTracelessInvolution) {
  auto rep = build_clifford_rep();
  EXPECT_EQ(rep.Gamma.trace(), 0.0);
  EXPECT_EQ(Mat8(rep.Gamma * rep.Gamma), Mat8(Mat8::Identity()));
  EXPECT_EQ(rep.Gamma, rep.Gamma.transpose());
}

TEST(Clifford, EntriesAreSignsOrZero) {
  auto rep = build_clifford_rep();
  auto check = [](const Mat8& m) {
    for (int i = 0; i < 64; ++i) {
      double v = m(i / 8, i % 8);
      EXPECT_TRUE(v == 0.0 || v == 1.0 || v == -1.0);
    }
  };
  for (auto& g : rep.gamma) check(g);
  for (auto& r : rep.rho) check(r);
  check(rep.Gamma);
}

TEST(Clifford, IdentityGammaIsReported) {
  auto rep = build_clifford_rep();
  rep.gamma[0] = Mat8::Identity();
  auto v = verify_relations(rep);
  EXPECT_FALSE(v.empty());
  EXPECT_TRUE(contains(v, "γ₁ not anti-symmetric"));
  EXPECT_TRUE(contains(v, "γ₁² ≠ −𝕀"));
}

TEST(Clifford, SwappingRhosKeepsRelations) {
  auto rep = build_clifford_rep();
  std::swap(rep.rho[0], rep.rho[1]);
  EXPECT_TRUE(verify_relations(rep).empty());
}

TEST(Clifford, ConjugatedRepSatisfiesRelationsNumerically) {
  auto rep = conjugate(build_clifford_rep(), random_orthogonal(3));
  EXPECT_LT(relation_defect(rep), 1e-12);
}

class ProjectorTest : public ::testing::TestWithParam<int> {};

TEST_P(ProjectorTest, ResolveIdentityWithRankOne) {
  const int eps = GetParam();
  auto rep = build_clifford_rep();
  auto P = joint_eigenprojectors(rep, eps);
  Mat8c sum = Mat8c::Zero();
  for (auto& p : P) {
    sum += p;
    EXPECT_NEAR(p.trace().real(), 1.0, 1e-12);
    EXPECT_LT((p * p - p).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((p - p.adjoint()).cwiseAbs().maxCoeff(), 1e-12);
  }
  EXPECT_LT((sum - Mat8c::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j) EXPECT_LT((P[i] * P[j]).cwiseAbs().maxCoeff(), 1e-12);
}

TEST_P(ProjectorTest, InvolutionsSquareToIdentityAndCommute) {
  const int eps = GetParam();
  auto J = involutions(build_clifford_rep(), eps);
  for (int k = 0; k < 3; ++k) {
    EXPECT_LT((J[k] * J[k] - Mat8c::Identity()).cwiseAbs().maxCoeff(), 1e-14);
    for (int l = 0; l < 3; ++l) EXPECT_LT((J[k] * J[l] - J[l] * J[k]).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST_P(ProjectorTest, GammaSCommutesAndGammaAnticommutes) {
  const int eps = GetParam();
  auto rep = build_clifford_rep();
  auto J = involutions(rep, eps);
  for (int k = 0; k < 3; ++k) {
    EXPECT_LT((rep.gamma_c(3) * J[k] - J[k] * rep.gamma_c(3)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_LT((rep.Gamma_c() * J[k] + J[k] * rep.Gamma_c()).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST_P(ProjectorTest, GammaMapsPlusSpaceToMinusSpace) {
  const int eps = GetParam();
  auto rep = build_clifford_rep();
  auto P = joint_eigenprojectors(rep, eps);
  // Gamma P(iota) Gamma = P(-iota)
  for (int idx = 0; idx < 8; ++idx) {
    Mat8c C = rep.Gamma_c() * P[idx] * rep.Gamma_c();
    EXPECT_LT((C - P[7 - idx]).cwiseAbs().maxCoeff(), 1e-12);
  }
}

INSTANTIATE_TEST_SUITE_P(Signs, ProjectorTest, ::testing::Values(1, -1));
