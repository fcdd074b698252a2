#include "specflow/flow.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace sfl;

namespace {

MatXcd random_hermitian(std::mt19937& g, int n) {
  std::normal_distribution<double> N;
  MatXcd A(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) A(i, j) = cd(N(g), N(g));
  return (A + A.adjoint()) / 2.0;
}

MatXcd scalar(double v) {
  MatXcd m(1, 1);
  m(0, 0) = v;
  return m;
}

OperatorFamily diag_family(double t0, double t1, int n) {
  OperatorFamily f;
  f.generator = [](double t) {
    MatXcd m = MatXcd::Zero(2, 2);
    m(0, 0) = t, m(1, 1) = -t;
    return dense_operator(m);
  };
  f.t_grid = linspace(t0, t1, n);
  f.description = "diag(t, -t)";
  return f;
}

}  // namespace

TEST(Track, ConstantFamilyHorizontal) {
  MatXcd A = MatXcd::Zero(3, 3);
  A(0, 0) = -0.5, A(1, 1) = 0.25, A(2, 2) = 0.75;
  auto tr = track_eigenvalues(constant_family(A, 0, 1, 11), 1.0);
  ASSERT_EQ(tr.branches.size(), 3u);
  for (auto& b : tr.branches)
    for (double e : b.E) EXPECT_NEAR(e, b.E.front(), 1e-12);
}

TEST(Track, DiagonalBranches) {
  auto tr = track_eigenvalues(diag_family(-0.5, 0.5, 11), 1.0);
  ASSERT_EQ(tr.branches.size(), 2u);
  for (auto& b : tr.branches) {
    double s = (b.E.back() - b.E.front()) / (b.t.back() - b.t.front());
    EXPECT_NEAR(std::abs(s), 1.0, 1e-12);
    for (size_t i = 0; i < b.t.size(); ++i) EXPECT_NEAR(std::abs(b.E[i]), std::abs(b.t[i]), 1e-12);
  }
}

TEST(Track, RejectsBadFamily) {
  OperatorFamily f = diag_family(0, 1, 5);
  f.t_grid = {0.0, 0.5, 0.4};
  EXPECT_THROW(track_eigenvalues(f, 1.0), ValidationError);
  EXPECT_THROW(track_eigenvalues(diag_family(0, 1, 5), -1.0), ValidationError);
}

TEST(Flow, ConstantInvertibleFamily) {
  MatXcd A = MatXcd::Identity(4, 4);
  A(0, 0) = -1;
  auto fr = spectral_flow(constant_family(A, 0, 1, 5), 2.0);
  EXPECT_EQ(fr.net_flow, 0);
  EXPECT_TRUE(fr.crossings.empty());
}

TEST(Flow, SingleUpCrossing) {
  auto fr = spectral_flow(pencil_family(scalar(-0.5), scalar(1.0), 0, 1, 11), 1.0);
  EXPECT_EQ(fr.net_flow, 1);
  ASSERT_EQ(fr.crossings.size(), 1u);
  EXPECT_NEAR(fr.crossings[0].t, 0.5, 1e-12);
  EXPECT_EQ(fr.crossings[0].dir, 1);
}

TEST(Flow, EndpointKernelReportedNotCounted) {
  auto fr = spectral_flow(pencil_family(scalar(-0.5), scalar(1.0), 0, 0.5, 11), 1.0);
  EXPECT_EQ(fr.net_flow, 0);
  EXPECT_EQ(fr.endpoint_ambiguity[0], 0);
  EXPECT_EQ(fr.endpoint_ambiguity[1], 1);
}

TEST(Flow, DiagonalNetZero) {
  auto fr = spectral_flow(diag_family(-0.5, 0.7, 13), 1.0);
  EXPECT_EQ(fr.net_flow, 0);
  EXPECT_EQ(fr.up, 1);
  EXPECT_EQ(fr.down, 1);
}

TEST(Flow, DegenerateCrossingCountsMultiplicity) {
  MatXcd A0 = -0.3 * MatXcd::Identity(3, 3), B = MatXcd::Identity(3, 3);
  auto fr = spectral_flow(pencil_family(A0, B, 0, 1, 9), 1.0);
  EXPECT_EQ(fr.net_flow, 3);
  ASSERT_EQ(fr.crossings.size(), 1u);
  EXPECT_EQ(fr.crossings[0].mult, 3);
}

TEST(Flow, TangencyIsAnError) {
  OperatorFamily f;
  f.generator = [](double t) { return dense_operator(scalar((t - 0.5) * (t - 0.5))); };
  f.t_grid = linspace(0, 1, 11);
  EXPECT_THROW(spectral_flow(f, 1.0), NumericalError);
}

TEST(Flow, GappedFamilyHasEmptyWindow) {
  // D_eps-type family: spectrum stays outside (-eps/2, eps/2)
  const double eps = 0.4;
  MatXcd A = MatXcd::Zero(2, 2);
  A(0, 0) = eps, A(1, 1) = -eps;
  MatXcd B = MatXcd::Zero(2, 2);
  B(0, 1) = B(1, 0) = 1.0;
  auto fr = spectral_flow(pencil_family(A, B, 0, 1, 21), 2.0);
  EXPECT_EQ(fr.net_flow, 0);
  EXPECT_TRUE(fr.crossings.empty());
}

TEST(Flow, LevelShift) {
  MatXcd A = MatXcd::Zero(2, 2);
  A(0, 0) = 0.2, A(1, 1) = 0.9;
  auto fr = spectral_flow(pencil_family(A, MatXcd::Identity(2, 2), 0, 1, 11), 2.0, 1.0);
  EXPECT_EQ(fr.net_flow, 2);
}

TEST(FlowProperty, PencilsMatchOracle) {
  std::mt19937 g(11);
  for (int it = 0; it < 10; ++it) {
    MatXcd A0 = random_hermitian(g, 8), B = random_hermitian(g, 8);
    if (it % 2 == 0) {
      MatXcd C = random_hermitian(g, 8);
      B = -(C * C.adjoint() / 8.0 + 0.1 * MatXcd::Identity(8, 8));
    }
    auto fam = pencil_family(A0, B, -1, 1, 41);
    auto fr = spectral_flow(fam, 1.5);
    auto orc = brute_force_flow([&](double t) { return MatXcd(A0 + t * B); }, -1, 1, 4001);
    EXPECT_EQ(fr.net_flow, orc.net_flow);
    EXPECT_EQ(fr.up, orc.up);
    EXPECT_EQ(fr.down, orc.down);
    EXPECT_EQ(spectral_flow(reverse_family(fam), 1.5).net_flow, -fr.net_flow);
    auto a = spectral_flow(subfamily(fam, -1, 0.0123, 23), 1.5), b = spectral_flow(subfamily(fam, 0.0123, 1, 23), 1.5);
    EXPECT_EQ(a.net_flow + b.net_flow, fr.net_flow);
    auto rp = spectral_flow(reparametrize(fam, [](double s) { return -1 + 2 * s * s; }, 37, 4.0), 1.5);
    EXPECT_EQ(rp.net_flow, fr.net_flow);
  }
}

TEST(FlowProperty, NegativeDefiniteSlopeCountsPassingEigenvalues) {
  std::mt19937 g(3);
  MatXcd A0 = random_hermitian(g, 12), C = random_hermitian(g, 12);
  MatXcd B = -(C * C.adjoint() / 12.0 + 0.1 * MatXcd::Identity(12, 12));
  auto fr = spectral_flow(pencil_family(A0, B, 0, 1, 41), 1.5);
  auto below = [](const MatXcd& M) {
    Eigen::SelfAdjointEigenSolver<MatXcd> es(M);
    return static_cast<int>((es.eigenvalues().array() < 0).count());
  };
  EXPECT_EQ(fr.up, 0);
  EXPECT_EQ(fr.net_flow, -(below(A0 + B) - below(A0)));
}

TEST(Staged, TwoTrivialStages) {
  MatXcd A = MatXcd::Identity(2, 2);
  auto r = staged_flow({constant_family(A, 0, 1, 5), constant_family(A, 1, 2, 5)}, 2.0);
  EXPECT_EQ(r.total, 0);
  EXPECT_EQ(r.stages.size(), 2u);
}

TEST(Staged, TotalIsSumOfStages) {
  auto r = staged_flow({pencil_family(scalar(-0.5), scalar(1.0), 0, 1, 11),
                        pencil_family(scalar(0.5), scalar(-2.0), 0, 0.8, 11)},
                       2.0);
  EXPECT_EQ(r.stages[0].net_flow, 1);
  EXPECT_EQ(r.stages[1].net_flow, -1);
  EXPECT_EQ(r.total, 0);
}

TEST(Staged, JunctionMismatchRejected) {
  EXPECT_THROW(staged_flow({constant_family(scalar(1.0), 0, 1, 3), constant_family(scalar(2.0), 0, 1, 3)}, 3.0),
               ValidationError);
}
