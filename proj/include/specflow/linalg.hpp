// Eigensolvers: dense Hermitian (LAPACK), block-diagonal (connected components),
// and sparse shift-invert (ARPACK + sparse LU) with Rayleigh-Ritz certification.
#pragma once

#include "specflow/core.hpp"

#include <Eigen/SparseLU>
#include <arpack/arpack.hpp>

#include <algorithm>
#include <numeric>

#ifndef lapack_complex_double
#define lapack_complex_double std::complex<double>
#endif
#include <lapacke.h>

namespace sfl {

struct EigenPairs {
  VecXd values;    // ascending
  MatXcd vectors;  // columns, may be empty when not requested
  VecXd residuals; // ||A v - E v|| per pair (0 when not computed)
};

// Dense Hermitian eigendecomposition, ascending eigenvalues.
inline EigenPairs dense_eigh(const MatXcd& A, bool vectors = true) {
  const int n = static_cast<int>(A.rows());
  EigenPairs out;
  if (n == 0) return out;
  if (n <= 48) {
    Eigen::SelfAdjointEigenSolver<MatXcd> es(A, vectors ? Eigen::ComputeEigenvectors : Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw NumericalError("dense eigensolver failed");
    out.values = es.eigenvalues();
    if (vectors) out.vectors = es.eigenvectors();
  } else {
    MatXcd W = A;
    out.values.resize(n);
    int info = LAPACKE_zheevd(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', 'L', n, W.data(), n, out.values.data());
    if (info != 0) throw NumericalError("zheevd failed with info " + std::to_string(info));
    if (vectors) out.vectors = std::move(W);
  }
  out.residuals = VecXd::Zero(n);
  return out;
}

// Connected components of the sparsity graph of a structurally symmetric matrix.
inline std::vector<std::vector<int>> connected_components(const SpMat& A) {
  const int n = static_cast<int>(A.rows());
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) {
      int a = find(static_cast<int>(it.row())), b = find(static_cast<int>(it.col()));
      if (a != b) parent[std::max(a, b)] = std::min(a, b);
    }
  std::vector<int> root_id(n, -1);
  std::vector<std::vector<int>> comps;
  for (int i = 0; i < n; ++i) {
    int r = find(i);
    if (root_id[r] < 0) {
      root_id[r] = static_cast<int>(comps.size());
      comps.emplace_back();
    }
    comps[root_id[r]].push_back(i);
  }
  return comps;
}

// Full spectrum of a block-diagonal sparse Hermitian matrix, solving each
// connected component densely. Vectors are returned only for eigenvalues with
// |E| <= vec_cut (sparse columns assembled into a dense matrix).
inline EigenPairs component_eigh(const SpMat& A, double vec_cut = -1.0) {
  const int n = static_cast<int>(A.rows());
  auto comps = connected_components(A);
  std::vector<double> vals;
  vals.reserve(n);
  std::vector<std::pair<double, VecXcd>> keep;
  Eigen::SparseMatrix<cd, Eigen::RowMajor> Ar = A;
  for (const auto& c : comps) {
    const int m = static_cast<int>(c.size());
    MatXcd B = MatXcd::Zero(m, m);
    for (int a = 0; a < m; ++a) {
      for (Eigen::SparseMatrix<cd, Eigen::RowMajor>::InnerIterator it(Ar, c[a]); it; ++it) {
        auto pos = std::lower_bound(c.begin(), c.end(), static_cast<int>(it.col()));
        B(a, pos - c.begin()) = it.value();
      }
    }
    bool need_vec = vec_cut >= 0;
    EigenPairs ep = dense_eigh(B, need_vec);
    for (int j = 0; j < m; ++j) {
      vals.push_back(ep.values(j));
      if (need_vec && std::abs(ep.values(j)) <= vec_cut) {
        VecXcd v = VecXcd::Zero(n);
        for (int a = 0; a < m; ++a) v(c[a]) = ep.vectors(a, j);
        keep.emplace_back(ep.values(j), std::move(v));
      }
    }
  }
  std::sort(vals.begin(), vals.end());
  EigenPairs out;
  out.values = Eigen::Map<VecXd>(vals.data(), n);
  out.residuals = VecXd::Zero(n);
  if (vec_cut >= 0) {
    std::stable_sort(keep.begin(), keep.end(), [](auto& a, auto& b) { return a.first < b.first; });
    out.vectors.resize(n, static_cast<Eigen::Index>(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j) out.vectors.col(static_cast<Eigen::Index>(j)) = keep[j].second;
  }
  return out;
}

// Eigenpairs of sparse Hermitian A closest to sigma: ARPACK in shift-invert mode
// on (A - sigma)^{-1} with a sparse LU factorization, followed by a
// Rayleigh-Ritz refinement on the converged Ritz space. Returned ascending.
inline EigenPairs eigs_near(const SpMat& A, double sigma, int nev, double tol = 1e-12, int maxit = 3000) {
  const int n = static_cast<int>(A.rows());
  if (nev >= n - 1 || n <= 160) {
    EigenPairs all = dense_eigh(MatXcd(A), true);
    std::vector<int> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
      return std::abs(all.values(a) - sigma) < std::abs(all.values(b) - sigma);
    });
    int m = std::min(nev, n);
    idx.resize(m);
    std::sort(idx.begin(), idx.end());
    EigenPairs out;
    out.values.resize(m);
    out.vectors.resize(n, m);
    for (int j = 0; j < m; ++j) {
      out.values(j) = all.values(idx[j]);
      out.vectors.col(j) = all.vectors.col(idx[j]);
    }
    out.residuals.resize(m);
    for (int j = 0; j < m; ++j) out.residuals(j) = (A * out.vectors.col(j) - out.values(j) * out.vectors.col(j)).norm();
    return out;
  }
  SpMat S = A;
  SpMat Id(n, n);
  Id.setIdentity();
  S -= cd(sigma) * Id;
  S.makeCompressed();
  Eigen::SparseLU<SpMat, Eigen::COLAMDOrdering<int>> lu;
  lu.compute(S);
  if (lu.info() != Eigen::Success) throw NumericalError("sparse LU factorization failed (shift is an eigenvalue?)");

  a_int ncv = std::min<a_int>(n, std::max<a_int>(2 * nev + 20, 40));
  a_int ido = 0, info = 0;
  std::vector<cd> resid(n), V(static_cast<size_t>(n) * ncv), workd(3 * static_cast<size_t>(n));
  a_int lworkl = 3 * ncv * ncv + 5 * ncv;
  std::vector<cd> workl(lworkl);
  std::vector<double> rwork(ncv);
  a_int iparam[11] = {0}, ipntr[14] = {0};
  iparam[0] = 1;
  iparam[2] = maxit;
  iparam[6] = 1;
  // deterministic start vector
  for (int i = 0; i < n; ++i) resid[i] = cd(1.0 + 0.5 * std::sin(1.0 + 0.7 * i), 0.25 * std::cos(0.3 * i));
  info = 1;
  while (true) {
    arpack::naupd(ido, arpack::bmat::identity, n, arpack::which::largest_magnitude, nev, tol, resid.data(), ncv,
                  V.data(), n, iparam, ipntr, workd.data(), workl.data(), lworkl, rwork.data(), info);
    if (ido == -1 || ido == 1) {
      Eigen::Map<VecXcd> x(workd.data() + ipntr[0] - 1, n);
      Eigen::Map<VecXcd> y(workd.data() + ipntr[1] - 1, n);
      y = lu.solve(VecXcd(x));
    } else {
      break;
    }
  }
  if (info < 0) throw NumericalError("ARPACK znaupd error " + std::to_string(info));
  a_int nconv = iparam[4];
  if (nconv < nev) throw NumericalError("ARPACK converged only " + std::to_string(nconv) + " of " + std::to_string(nev));
  std::vector<a_int> select(ncv);
  std::vector<cd> d(nev + 1), Z(static_cast<size_t>(n) * nev), workev(2 * ncv);
  a_int rvec = 1;
  arpack::neupd(rvec, arpack::howmny::ritz_vectors, select.data(), d.data(), Z.data(), n, cd(0), workev.data(),
                arpack::bmat::identity, n, arpack::which::largest_magnitude, nev, tol, resid.data(), ncv, V.data(), n,
                iparam, ipntr, workd.data(), workl.data(), lworkl, rwork.data(), info);
  if (info != 0) throw NumericalError("ARPACK zneupd error " + std::to_string(info));
  // Rayleigh-Ritz on the orthonormalized Ritz space.
  MatXcd Zm = Eigen::Map<MatXcd>(Z.data(), n, nev);
  Eigen::HouseholderQR<MatXcd> qr(Zm);
  MatXcd Q = qr.householderQ() * MatXcd::Identity(n, nev);
  MatXcd AQ = A * Q;
  MatXcd H = Q.adjoint() * AQ;
  H = 0.5 * (H + H.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<MatXcd> es(H);
  EigenPairs out;
  out.values = es.eigenvalues();
  out.vectors = Q * es.eigenvectors();
  MatXcd R = AQ * es.eigenvectors() - out.vectors * out.values.asDiagonal();
  out.residuals.resize(nev);
  for (int j = 0; j < nev; ++j) out.residuals(j) = R.col(j).norm();
  return out;
}

// Group ascending eigenvalues into clusters (cluster_tol); returns (value, multiplicity).
inline std::vector<std::pair<double, int>> cluster_values(const std::vector<double>& sorted) {
  std::vector<std::pair<double, int>> out;
  size_t i = 0;
  while (i < sorted.size()) {
    size_t j = i + 1;
    double sum = sorted[i];
    while (j < sorted.size() && sorted[j] - sorted[j - 1] <= cluster_tol(sorted[j])) sum += sorted[j++];
    out.emplace_back(sum / double(j - i), static_cast<int>(j - i));
    i = j;
  }
  return out;
}

}  // namespace sfl
