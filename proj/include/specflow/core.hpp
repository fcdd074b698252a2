// Common types, error classes and small numeric helpers.
#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace sfl {

using cd = std::complex<double>;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using MatXcd = Eigen::MatrixXcd;
using VecXcd = Eigen::VectorXcd;
using MatXd = Eigen::MatrixXd;
using VecXd = Eigen::VectorXd;
using SpMat = Eigen::SparseMatrix<cd>;
using Triplet = Eigen::Triplet<cd>;

inline constexpr double pi = std::numbers::pi;
inline constexpr cd I1{0.0, 1.0};

// Bad input: maps to CLI exit code 2.
struct ValidationError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Solver / convergence / certification failure: maps to CLI exit code 3.
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ValidationError(msg);
}

// Clustering tolerance used for multiplicities throughout.
inline double cluster_tol(double e) { return 1e-6 * (1.0 + std::abs(e)); }

// Localization / lattice window constant: eigenvalues with |E| <= sqrt(R)/kappa
// are in the asymptotic regime, lattice residuals are bounded by kappa/sqrt(R).
inline constexpr double kappa = 4.0;
// Gaussian decay contract: fitted rate >= R / kappa_fit.
inline constexpr double kappa_fit = 4.0;

// frac into [0,1), with values within 1e-12 of 1 folded to 0.
inline double frac01(double x) {
  double f = x - std::floor(x);
  if (f >= 1.0 - 1e-12) f = 0.0;
  return f;
}

// Signed distance on the unit circle R/Z, result in [-1/2, 1/2).
inline double circ_diff(double a, double b) {
  double d = a - b;
  return d - std::floor(d + 0.5);
}

// Max-norm Hermiticity defect relative to the matrix max-norm.
inline double hermiticity_defect(const SpMat& A) {
  SpMat D = A - SpMat(A.adjoint());
  double num = 0, den = 0;
  for (int k = 0; k < D.outerSize(); ++k)
    for (SpMat::InnerIterator it(D, k); it; ++it) num = std::max(num, std::abs(it.value()));
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) den = std::max(den, std::abs(it.value()));
  return den > 0 ? num / den : 0.0;
}

}  // namespace sfl
