#include "specflow/circle_model.hpp"

#include <gtest/gtest.h>

using namespace sfl;

namespace {

const CliffordRep& rep() {
  static const CliffordRep r = build_clifford_rep();
  return r;
}

Mat3 sample_M() {
  Mat3 M;
  M << 1.2, 0.3, 0.1, -0.2, 0.9, 0.4, 0.1, -0.3, 1.1;
  return M;
}

}  // namespace

TEST(CircleOperator, ConstantIdentityIsHermitian) {
  auto op = build_D_circle(constant_loop(Mat3::Identity(), 1.0), 10.0, nullptr, 3, 4, rep());
  EXPECT_LT(hermiticity_defect(op.matrix), 1e-12);
}

TEST(CircleOperator, RejectsBadArguments) {
  auto L = constant_loop(Mat3::Identity(), 1.0);
  EXPECT_THROW(build_D_circle(L, -1.0, nullptr, 3, 4, rep()), ValidationError);
  EXPECT_THROW(build_D_circle(L, 1.0, nullptr, 3, 0, rep()), ValidationError);
}

TEST(CircleOperator, ZeroPerturbationReproducesBareOperator) {
  auto L = rotation_loop(2 * pi);
  PerturbationData p;
  auto a = build_D_circle(L, 50.0, nullptr, 3, 4, rep());
  auto b = build_D_circle(L, 50.0, &p, 3, 4, rep());
  ASSERT_EQ(a.dim, b.dim);
  EXPECT_EQ((SpMat(a.matrix - b.matrix)).norm(), 0.0);
}

TEST(CircleOperator, PerturbationBoundsEnforced) {
  auto L = constant_loop(Mat3::Identity(), 1.0);
  PerturbationData big;
  big.Mvec = [](double) { return Vec3(1, 0, 0); };
  big.r0 = 1.0;
  EXPECT_THROW(build_D_circle(L, 10.0, &big, 2, 2, rep()), ValidationError);
  PerturbationData bc;
  bc.B = [](double) { return Vec3(5, 0, 0); };
  EXPECT_THROW(build_D_circle(L, 10.0, &bc, 2, 2, rep()), ValidationError);
  PerturbationData q;
  q.q = 1.5;
  EXPECT_THROW(build_D_circle(L, 10.0, &q, 2, 2, rep()), ValidationError);
  PerturbationData b0;
  b0.b0 = 2 * pi;
  EXPECT_THROW(build_D_circle(L, 10.0, &b0, 2, 2, rep()), ValidationError);
}

TEST(CircleOperator, PerturbedOperatorIsHermitian) {
  auto L = rotation_loop(2 * pi);
  PerturbationData p;
  p.Mvec = [](double s) { return Vec3(1e-5 * std::cos(s), 0, 2e-5); };
  p.W = [](double s) {
    Mat3 W = Mat3::Zero();
    W(0, 1) = 1e-5 * std::sin(s), W(1, 0) = -W(0, 1);
    return W;
  };
  p.r0 = 1.0;
  p.B = [](double s) { return Vec3(0.1 * std::sin(s), 0.05, 0); };
  p.C = [](double) { return Vec3(0, 0, 0.08); };
  p.b0 = 0.2;
  p.q = 0.3;
  auto op = build_D_circle(L, 50.0, &p, 3, 4, rep());
  EXPECT_LT(hermiticity_defect(op.matrix), 1e-12);
}

class ConstantLoopTest : public ::testing::TestWithParam<std::tuple<double, double>> {};

TEST_P(ConstantLoopTest, SeparationOfVariables) {
  auto [sgn, ell] = GetParam();
  int count = 0;
  double dev = constant_loop_deviation(sgn * sample_M(), 20.0, ell, 8.0, rep(), &count);
  EXPECT_GT(count, 0);
  EXPECT_LT(dev, 1e-6);
}

INSTANTIATE_TEST_SUITE_P(SignsAndLengths, ConstantLoopTest,
                         ::testing::Combine(::testing::Values(1.0, -1.0), ::testing::Values(1.0, 2.0)));

TEST(ConstantLoop, KernelBranchIsExactLattice) {
  const double ell = 1.0, R = 50.0;
  auto L = constant_loop(Mat3::Identity(), ell);
  double band = std::sqrt(R) / kappa;
  auto op = build_D_circle(L, R, nullptr, 3, default_fourier_max(band, ell), rep());
  auto ep = band_eigenpairs(op, band);
  // the fiber gap 2^(3/4) sqrt(R) exceeds the band, so only the kernel branch remains
  ASSERT_GT(ep.values.size(), 0);
  for (int i = 0; i < ep.values.size(); ++i) {
    double n = -ep.values(i) * ell / (2 * pi);
    EXPECT_NEAR(n, std::round(n), 1e-9);
  }
}

TEST(KernelSection, ConstantLoopIsConstant) {
  auto L = constant_loop(Mat3::Identity(), 1.0);
  auto a = kernel_section(L, 100.0, 0.0, rep());
  auto b = kernel_section(L, 100.0, 0.7, rep());
  EXPECT_NEAR(std::abs(section_overlap(a, b)), 1.0, 1e-8);
  EXPECT_NEAR(std::abs(section_overlap(a, a)), 1.0, 1e-12);
}

TEST(KernelSection, ResidualAndIsolation) {
  auto L = random_loop(7, 2 * pi);
  for (double s : {0.0, 1.3, 4.0}) {
    auto k = kernel_section(L, 100.0, s, rep());
    EXPECT_LT(k.residual, 1e-8);
    EXPECT_GE(k.gap_ratio, 10.0);
  }
}

TEST(KernelSection, RotationLoopNormalized) {
  auto L = rotation_loop(2 * pi);
  auto k = kernel_section(L, 100.0, 2.1, rep());
  EXPECT_NEAR(std::abs(section_overlap(k, k)), 1.0, 1e-12);
}

TEST(Berry, ConstantLoopZero) {
  auto br = berry_alpha(constant_loop(sample_M(), 1.0), 100.0, nullptr, 64, rep());
  EXPECT_NEAR(std::min(br.alpha, 1 - br.alpha), 0.0, 1e-10);
}

TEST(Berry, ConstantLoopShiftHalf) {
  const double ell = 1.0;
  PerturbationData p;
  p.b0 = pi / (2 * ell);
  auto br = berry_alpha(constant_loop(Mat3::Identity(), ell), 100.0, &p, 64, rep());
  EXPECT_NEAR(br.alpha, 0.5, 1e-10);
}

TEST(Berry, RejectsCoarseSteps) {
  EXPECT_THROW(berry_alpha(rotation_loop(2 * pi), 100.0, nullptr, 32, rep()), ValidationError);
}

TEST(Berry, RotationLoopMatchesSpectrumFit) {
  const double R = 400.0, ell = 2 * pi, band = std::sqrt(R) / kappa;
  auto L = rotation_loop(ell);
  auto br = berry_alpha(L, R, nullptr, 64, rep());
  auto fit = low_spectrum_fit(build_D_circle(L, R, nullptr, 4, default_fourier_max(band, ell), rep()), band);
  EXPECT_LE(std::abs(circ_diff(br.alpha, fit.alpha)), kappa / std::sqrt(R));
}

TEST(LatticeFit, ConstantLoopExact) {
  const double R = 100.0, ell = 1.0, band = std::sqrt(R) / kappa;
  auto op = build_D_circle(constant_loop(sample_M(), ell), R, nullptr, 3, default_fourier_max(band, ell), rep());
  auto fit = low_spectrum_fit(op, band);
  EXPECT_NEAR(std::min(fit.alpha, 1 - fit.alpha), 0.0, 1e-9);
  EXPECT_LT(fit.max_tau(), 1e-6);
}

TEST(LatticeFit, BandAboveValidityWindowRejected) {
  auto op = build_D_circle(constant_loop(Mat3::Identity(), 1.0), 16.0, nullptr, 2, 3, rep());
  EXPECT_THROW(low_spectrum_fit(op, 1.5), ValidationError);
}

TEST(LatticeFit, RandomLoopResidualsBounded) {
  const double R = 100.0, ell = 2 * pi, band = std::sqrt(R) / kappa;
  auto op = build_D_circle(random_loop(7, ell), R, nullptr, 4, default_fourier_max(band, ell), rep());
  auto fit = low_spectrum_fit(op, band);
  EXPECT_LE(fit.max_tau(), kappa / std::sqrt(R));
  // lattice count floor(b l / pi) +- 2
  const int expect = static_cast<int>(std::floor(band * ell / pi));
  EXPECT_LE(std::abs(static_cast<int>(fit.eigenvalues.size()) - expect), 2);
}

TEST(LatticeFit, B0ShiftCovariance) {
  const double R = 400.0, ell = 2 * pi, band = std::sqrt(R) / kappa, d = 0.13;
  auto L = rotation_loop(ell);
  PerturbationData p0, p1;
  p1.b0 = d;
  auto f0 = low_spectrum_fit(build_D_circle(L, R, &p0, 4, default_fourier_max(band, ell), rep()), band);
  auto f1 = low_spectrum_fit(build_D_circle(L, R, &p1, 4, default_fourier_max(band, ell), rep()), band);
  auto b0 = berry_alpha(L, R, &p0, 64, rep()), b1 = berry_alpha(L, R, &p1, 64, rep());
  const double shift = frac01(-b0.g * ell * d / pi);
  EXPECT_NEAR(circ_diff(f1.alpha, f0.alpha), circ_diff(shift, 0.0), 1e-3);
  EXPECT_NEAR(circ_diff(b1.alpha, b0.alpha), circ_diff(shift, 0.0), 1e-10);
  EXPECT_NEAR(f1.max_tau(), f0.max_tau(), 2 * kappa / std::sqrt(R));
}

TEST(TauScaling, ConstantLoopDegenerate) {
  auto ts = tau_scaling_study(constant_loop(Mat3::Identity(), 1.0), nullptr, {16, 32, 64, 128}, rep(), 2);
  EXPECT_TRUE(ts.degenerate);
}

TEST(TauScaling, RejectsShortRange) {
  EXPECT_THROW(tau_scaling_study(rotation_loop(2 * pi), nullptr, {50, 60, 70, 80}, rep()), ValidationError);
  EXPECT_THROW(tau_scaling_study(rotation_loop(2 * pi), nullptr, {50, 100, 400}, rep()), ValidationError);
}

TEST(UnionLattice, SingleComponent) {
  auto p = prop48_lattice({{0.0, 1.0}}, 10.0);
  EXPECT_EQ(p.multiplicity_cap, 1);
  ASSERT_EQ(p.points.size(), 3u);
  EXPECT_NEAR(p.points[0].E, -2 * pi, 1e-12);
  EXPECT_NEAR(p.points[1].E, 0.0, 1e-12);
  EXPECT_NEAR(p.points[2].E, 2 * pi, 1e-12);
  for (auto& pt : p.points) EXPECT_NEAR(pt.E, -2 * pi * pt.n, 1e-12);
}

TEST(UnionLattice, TwoIdenticalComponents) {
  auto p = prop48_lattice({{0.0, 1.0}, {0.0, 1.0}}, 10.0);
  EXPECT_EQ(p.multiplicity_cap, 2);
  EXPECT_EQ(p.points.size(), 6u);
}

TEST(UnionLattice, HalfShift) {
  auto p = prop48_lattice({{0.5, 2 * pi}}, 2.0);
  ASSERT_EQ(p.points.size(), 4u);
  const double want[] = {-1.5, -0.5, 0.5, 1.5};
  for (int i = 0; i < 4; ++i) EXPECT_NEAR(p.points[i].E, want[i], 1e-12);
}

TEST(UnionLattice, RejectsBadAlpha) {
  EXPECT_THROW(prop48_lattice({{1.0, 1.0}}, 1.0), ValidationError);
  EXPECT_THROW(prop48_lattice({{0.2, -1.0}}, 1.0), ValidationError);
}

TEST(Localization, BandEigenvectorsDecay) {
  const double R = 100.0, ell = 2 * pi, band = std::sqrt(R) / kappa;
  auto op = build_D_circle(random_loop(7, ell), R, nullptr, 4, default_fourier_max(band, ell), rep());
  auto ep = band_eigenpairs(op, band);
  for (int j = 0; j < ep.values.size(); ++j)
    EXPECT_GE(gaussian_decay_fit(ep.vectors.col(j), ep.values(j), op).rate, R / kappa_fit);
}

TEST(Localization, EigenvectorsConcentrateOnKernelBundle) {
  const double R = 100.0, ell = 2 * pi, band = 2.5;
  auto L = random_loop(7, ell);
  auto cb = build_D_circle_full(L, R, nullptr, 4, default_fourier_max(band, ell), rep());
  auto ep = band_eigenpairs(cb.op, band);
  for (int j = 0; j < ep.values.size(); ++j)
    EXPECT_GE(kernel_bundle_weight(cb, L, ep.vectors.col(j), rep()), 1 - kappa / R);
}
