// Ladder operators, the fiber operator D0 = sum gamma_k d_k + sqrt2 i R sum M_jk x_j rho_k,
// the 1-D model D = gamma_x d_x + sqrt2 R_mu x rhohat, closed-form spectra and
// Gaussian localization fits.
//
// Basis. Per axis: Hermite functions h_n of width 1/sqrt(lambda'), lambda' = sqrt2 R lambda,
// so a = d + lambda' y, a^dag = -d + lambda' y, [a, a^dag] = 2 lambda'. Spinor: the joint
// eigenbasis e_iota of J_k = i gamma~_k rho~'_k. States are (n_1, n_2, n_3; iota) with
// N_k = n_k + delta_k, delta_k = (1 + iota_k)/2. D0 in normal form conserves every N_k,
// so truncating on N (per axis, or in total) cuts no matrix element inside a block and
// the retained low spectrum is free of truncation pollution.
#pragma once

#include "specflow/clifford.hpp"
#include "specflow/linalg.hpp"

#include <array>
#include <functional>
#include <map>
#include <optional>

namespace sfl {

struct OscBasisSpec {
  double R = 1.0;
  std::array<double, 3> lambdas{1.0, 1.0, 1.0};
  int n_max = 40;

  void validate() const {
    require(R > 0, "R must be positive");
    for (double l : lambdas) require(l > 0, "singular values must be positive");
    require(n_max >= 1, "n_max must be >= 1");
  }
};

// ---------------------------------------------------------------------------
// Ladder matrices and Hermite functions

struct Ladder {
  MatXd a, a_dag;
};

inline Ladder ladder_matrices(double R, double lambda, int n_max) {
  require(R > 0 && lambda > 0, "ladder_matrices: R and lambda must be positive");
  require(n_max >= 1, "ladder_matrices: n_max must be >= 1");
  const double lp = std::sqrt(2.0) * R * lambda;
  Ladder L;
  L.a = MatXd::Zero(n_max + 1, n_max + 1);
  for (int n = 1; n <= n_max; ++n) L.a(n - 1, n) = std::sqrt(2.0 * lp * n);
  L.a_dag = L.a.transpose();
  return L;
}

// h_0..h_nmax at y for width parameter lp (h_0 ~ exp(-lp y^2 / 2)).
inline std::vector<double> hermite_functions(double lp, int nmax, double y) {
  std::vector<double> h(nmax + 1);
  const double xi = std::sqrt(lp) * y;
  h[0] = std::pow(lp, 0.25) * std::pow(pi, -0.25) * std::exp(-0.5 * xi * xi);
  if (nmax >= 1) h[1] = std::sqrt(2.0) * xi * h[0];
  for (int n = 1; n < nmax; ++n)
    h[n + 1] = std::sqrt(2.0 / (n + 1)) * xi * h[n] - std::sqrt(double(n) / (n + 1)) * h[n - 1];
  return h;
}

// ---------------------------------------------------------------------------
// Spinor frame: rotated generators and their matrices in the joint eigenbasis.

struct SpinorFrame {
  Mat8c E;                    // columns e_idx in the standard C^8 basis
  std::array<Mat8c, 3> G;     // E^dag gamma~_m E
  std::array<Mat8c, 3> P;     // E^dag (i rho~'_b) E
  std::array<Mat8c, 3> rhoE;  // E^dag rho~'_b E
  Mat8c gs;                   // E^dag gamma_s E
  Mat8c Gam;                  // E^dag Gamma E
};

inline Mat8c sparsify(Mat8c m, double tol = 1e-12) {
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double re = std::abs(m(i, j).real()) < tol ? 0.0 : m(i, j).real();
      double im = std::abs(m(i, j).imag()) < tol ? 0.0 : m(i, j).imag();
      m(i, j) = cd(re, im);
    }
  return m;
}

// gamma~_m = sum_k Pg(k,m) gamma_k, rho~'_m = sum_k Qr(k,m) rho_k (Qr already carries eps).
inline SpinorFrame make_spinor_frame(const CliffordRep& rep, const Mat3& Pg, const Mat3& Qr) {
  std::array<Mat8c, 3> gt, rt;
  for (int m = 0; m < 3; ++m) {
    Mat8 g = Mat8::Zero(), r = Mat8::Zero();
    for (int k = 0; k < 3; ++k) {
      g += Pg(k, m) * rep.gamma[k];
      r += Qr(k, m) * rep.rho[k];
    }
    gt[m] = g.cast<cd>();
    rt[m] = r.cast<cd>();
  }
  std::array<Mat8c, 3> J;
  for (int k = 0; k < 3; ++k) J[k] = I1 * (gt[k] * rt[k]);
  SpinorFrame f;
  f.E = eigenbasis_from(J);
  Mat8c Ed = f.E.adjoint();
  for (int m = 0; m < 3; ++m) {
    f.G[m] = sparsify(Ed * gt[m] * f.E);
    f.P[m] = sparsify(Ed * (I1 * rt[m]) * f.E);
    f.rhoE[m] = sparsify(Ed * rt[m] * f.E);
  }
  f.gs = sparsify(Ed * rep.gamma_c(3) * f.E);
  f.Gam = sparsify(Ed * rep.Gamma_c() * f.E);
  return f;
}

// ---------------------------------------------------------------------------
// Fiber basis: (n_1, n_2, n_3; sector) with per-axis or total truncation in N = n + delta.

struct FiberBasis {
  enum class Trunc { PerAxis, Total };
  Trunc trunc = Trunc::PerAxis;
  int bound = 0;  // n_max (per axis) or L_max (total)
  std::vector<std::array<int, 3>> n;
  std::vector<int> sec;
  int side = 0;  // lookup table side (bound + 2)
  std::vector<int> lookup;

  int index(int n1, int n2, int n3, int s) const {
    if (n1 < 0 || n2 < 0 || n3 < 0 || n1 >= side || n2 >= side || n3 >= side) return -1;
    return lookup[((static_cast<size_t>(n1) * side + n2) * side + n3) * 8 + s];
  }
  int size() const { return static_cast<int>(n.size()); }
  int total_level(int i) const {
    int L = 0;
    for (int k = 0; k < 3; ++k) L += n[i][k] + ((sec[i] >> k) & 1);
    return L;
  }
};

inline FiberBasis make_fiber_basis(FiberBasis::Trunc t, int bound) {
  require(bound >= 0, "fiber truncation bound must be non-negative");
  FiberBasis fb;
  fb.trunc = t;
  fb.bound = bound;
  fb.side = bound + 2;
  fb.lookup.assign(static_cast<size_t>(fb.side) * fb.side * fb.side * 8, -1);
  // ordering: by total level, then N lexicographic, then sector
  std::vector<std::array<int, 5>> items;  // L, n1, n2, n3, s
  for (int n1 = 0; n1 <= bound; ++n1)
    for (int n2 = 0; n2 <= bound; ++n2)
      for (int n3 = 0; n3 <= bound; ++n3)
        for (int s = 0; s < 8; ++s) {
          int N[3] = {n1 + (s & 1), n2 + ((s >> 1) & 1), n3 + ((s >> 2) & 1)};
          bool ok;
          if (t == FiberBasis::Trunc::PerAxis)
            ok = N[0] <= bound && N[1] <= bound && N[2] <= bound;
          else
            ok = N[0] + N[1] + N[2] <= bound;
          if (ok) items.push_back({N[0] + N[1] + N[2], n1, n2, n3, s});
        }
  std::sort(items.begin(), items.end());
  for (const auto& it : items) {
    int id = static_cast<int>(fb.n.size());
    fb.n.push_back({it[1], it[2], it[3]});
    fb.sec.push_back(it[4]);
    fb.lookup[((static_cast<size_t>(it[1]) * fb.side + it[2]) * fb.side + it[3]) * 8 + it[4]] = id;
  }
  return fb;
}

// Spatial operator on one oscillator state: list of (target n, coefficient).
using SpatialTerm = std::function<void(const std::array<int, 3>&, std::vector<std::pair<std::array<int, 3>, cd>>&)>;

// Compression onto the fiber basis of (spatial operator) (x) (spinor matrix in e-basis).
inline void fiber_kron(const FiberBasis& fb, const SpatialTerm& spatial, const Mat8c& spin, cd scale,
                       std::vector<Triplet>& out, int row_off = 0, int col_off = 0) {
  std::vector<std::pair<std::array<int, 3>, cd>> tgt;
  std::array<std::vector<std::pair<int, cd>>, 8> cols;
  for (int s = 0; s < 8; ++s)
    for (int sp = 0; sp < 8; ++sp)
      if (spin(sp, s) != cd(0)) cols[s].emplace_back(sp, spin(sp, s));
  for (int i = 0; i < fb.size(); ++i) {
    const int s = fb.sec[i];
    if (cols[s].empty()) continue;
    tgt.clear();
    spatial(fb.n[i], tgt);
    for (const auto& [n2, c] : tgt) {
      if (c == cd(0)) continue;
      for (const auto& [sp, v] : cols[s]) {
        int j = fb.index(n2[0], n2[1], n2[2], sp);
        if (j >= 0) out.emplace_back(row_off + j, col_off + i, scale * c * v);
      }
    }
  }
}

// Basic spatial operators in terms of the ladders with widths lp[k].
inline SpatialTerm spatial_identity() {
  return [](const std::array<int, 3>& n, auto& out) { out.emplace_back(n, cd(1)); };
}
inline SpatialTerm spatial_d(int m, const std::array<double, 3>& lp) {
  return [m, lp](const std::array<int, 3>& n, auto& out) {
    // d = (a - a^dag)/2
    if (n[m] > 0) {
      auto t = n;
      t[m] -= 1;
      out.emplace_back(t, cd(0.5 * std::sqrt(2.0 * lp[m] * n[m])));
    }
    auto t = n;
    t[m] += 1;
    out.emplace_back(t, cd(-0.5 * std::sqrt(2.0 * lp[m] * (n[m] + 1))));
  };
}
inline SpatialTerm spatial_y(int a, const std::array<double, 3>& lp) {
  return [a, lp](const std::array<int, 3>& n, auto& out) {
    // y = (a + a^dag) / (2 lp)
    if (n[a] > 0) {
      auto t = n;
      t[a] -= 1;
      out.emplace_back(t, cd(std::sqrt(2.0 * lp[a] * n[a]) / (2.0 * lp[a])));
    }
    auto t = n;
    t[a] += 1;
    out.emplace_back(t, cd(std::sqrt(2.0 * lp[a] * (n[a] + 1)) / (2.0 * lp[a])));
  };
}

inline SpMat from_triplets(int rows, int cols, const std::vector<Triplet>& t) {
  SpMat A(rows, cols);
  A.setFromTriplets(t.begin(), t.end());
  // drop cancellation noise (e.g. the a^dag part of (gamma + i rho) on the wrong sector)
  double mx = 0;
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) mx = std::max(mx, std::abs(it.value()));
  const double cut = 1e-13 * mx;
  A.prune([cut](const Eigen::Index&, const Eigen::Index&, const cd& v) { return std::abs(v) > cut; });
  return A;
}

// Makes a numerically Hermitian matrix exactly Hermitian.
inline SpMat hermitian_part(const SpMat& A) {
  SpMat H = 0.5 * (A + SpMat(A.adjoint()));
  H.prune(cd(0), 0.0);
  return H;
}

// ---------------------------------------------------------------------------
// Truncated operator

struct BasisState {
  int fourier = 0;
  std::array<int, 3> osc{0, 0, 0};
  int spin = 0;
};

struct TruncatedOperator {
  int dim = 0;
  SpMat matrix;
  std::string kind;  // "d0", "model1d", "circle", "torus"
  int axes = 3;
  std::array<double, 3> scale{1, 1, 1};  // lambda' per axis of the Hermite basis
  std::vector<BasisState> basis;
  std::map<std::string, double> meta;
  std::vector<std::string> warnings;
};

// Normal form M = eps P diag(lambda) Q^T with P, Q in SO(3).
struct NormalForm {
  Mat3 P, Q;
  Vec3 lambda;
  int eps = 1;
};

inline NormalForm normal_form(const Mat3& M) {
  Eigen::JacobiSVD<Mat3> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  NormalForm nf;
  nf.lambda = svd.singularValues();
  Mat3 U = svd.matrixU(), V = svd.matrixV();
  double su = U.determinant() > 0 ? 1 : -1, sv = V.determinant() > 0 ? 1 : -1;
  U.col(2) *= su;
  V.col(2) *= sv;
  nf.P = U;
  nf.Q = V;
  nf.eps = static_cast<int>(su * sv);
  return nf;
}

// Assemble sum_m gamma~_m d_m + i sum_ab C_ab y_a rho~'_b on a fiber basis.
inline void fiber_dirac_triplets(const FiberBasis& fb, const SpinorFrame& sf, const std::array<double, 3>& lp,
                                 const Eigen::Matrix3cd& C, std::vector<Triplet>& out, bool with_grad = true,
                                 int off = 0) {
  if (with_grad)
    for (int m = 0; m < 3; ++m) fiber_kron(fb, spatial_d(m, lp), sf.G[m], cd(1), out, off, off);
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      if (std::abs(C(a, b)) > 0) fiber_kron(fb, spatial_y(a, lp), sf.P[b], C(a, b), out, off, off);
}

inline TruncatedOperator build_D0(const Mat3& M, double R, const CliffordRep& rep, int n_max) {
  require(R > 0, "build_D0: R must be positive");
  require(n_max >= 1, "build_D0: n_max must be >= 1");
  require(std::abs(M.determinant()) > 0 && M.allFinite(), "build_D0: M is singular");
  NormalForm nf = normal_form(M);
  require(nf.lambda.minCoeff() > 1e-14 * std::max(1.0, nf.lambda.maxCoeff()), "build_D0: M is singular");
  TruncatedOperator op;
  if (nf.lambda.minCoeff() < 1e-8) op.warnings.push_back("ill-conditioned M: min singular value < 1e-8");
  SpinorFrame sf = make_spinor_frame(rep, nf.P, double(nf.eps) * nf.Q);
  FiberBasis fb = make_fiber_basis(FiberBasis::Trunc::PerAxis, n_max);
  std::array<double, 3> lp;
  for (int k = 0; k < 3; ++k) lp[k] = std::sqrt(2.0) * R * nf.lambda(k);
  Eigen::Matrix3cd C = Eigen::Matrix3cd::Zero();
  for (int k = 0; k < 3; ++k) C(k, k) = lp[k];
  std::vector<Triplet> trip;
  trip.reserve(static_cast<size_t>(fb.size()) * 6);
  fiber_dirac_triplets(fb, sf, lp, C, trip);
  op.dim = fb.size();
  op.matrix = hermitian_part(from_triplets(op.dim, op.dim, trip));
  op.kind = "d0";
  op.axes = 3;
  op.scale = lp;
  op.basis.resize(op.dim);
  for (int i = 0; i < op.dim; ++i) op.basis[i] = {0, fb.n[i], fb.sec[i]};
  op.meta = {{"R", R}, {"n_max", n_max}, {"eps", nf.eps}, {"lambda1", nf.lambda(0)}, {"lambda2", nf.lambda(1)},
             {"lambda3", nf.lambda(2)}};
  return op;
}

// gamma_s = gamma_4 in the operator basis (spinor part only), for D0-type operators.
inline SpMat d0_gamma_s(const TruncatedOperator& op, const Mat3& M, const CliffordRep& rep) {
  NormalForm nf = normal_form(M);
  SpinorFrame sf = make_spinor_frame(rep, nf.P, double(nf.eps) * nf.Q);
  FiberBasis fb = make_fiber_basis(FiberBasis::Trunc::PerAxis, static_cast<int>(op.meta.at("n_max")));
  std::vector<Triplet> t;
  fiber_kron(fb, spatial_identity(), sf.gs, cd(1), t);
  return from_triplets(fb.size(), fb.size(), t);
}

// ---------------------------------------------------------------------------
// Spectra

struct SpectrumSlice {
  std::vector<double> eigenvalues;  // distinct (clustered) values, ascending
  std::vector<int> multiplicities;
  std::vector<double> residuals;    // per listed value
  double truncation_residual = 0.0;
  std::vector<std::vector<std::string>> labels;  // closed form only
};

// Closed-form spectrum: 0 (multiplicity 1) and +-sqrt(2 sqrt2 R sum_k N_k lambda_k),
// N_k = delta_k + n_k not all zero; a label set with z nonzero N_k contributes
// 2^(z-1) to each sign. Returns the `count` distinct values of smallest |E|.
inline SpectrumSlice d0_spectrum_closedform(const OscBasisSpec& spec, int count) {
  spec.validate();
  require(count >= 1, "count must be >= 1");
  require(count <= 20000, "count exceeds enumeration capacity");
  const double c = 2.0 * std::sqrt(2.0) * spec.R;
  const auto& l = spec.lambdas;
  double lmin = std::min({l[0], l[1], l[2]});
  // enumerate levels with sum N_k l_k <= cap, enlarging cap until enough distinct values
  double cap = 4.0 * lmin;
  while (true) {
    std::map<double, std::pair<int, std::vector<std::string>>> lev;  // E^2/c -> (mult per sign, labels)
    int lim[3];
    for (int k = 0; k < 3; ++k) lim[k] = static_cast<int>(std::floor(cap / l[k] + 1e-9));
    for (int a = 0; a <= lim[0]; ++a)
      for (int b = 0; b <= lim[1]; ++b)
        for (int d = 0; d <= lim[2]; ++d) {
          double s = a * l[0] + b * l[1] + d * l[2];
          if (s > cap * (1 + 1e-12)) continue;
          if (a + b + d == 0) continue;
          int z = (a > 0) + (b > 0) + (d > 0);
          // merge with an existing level within clustering tolerance
          double key = s;
          auto it = lev.lower_bound(s - 1e-9 * (1 + s));
          if (it != lev.end() && std::abs(it->first - s) <= 1e-9 * (1 + s)) key = it->first;
          auto& e = lev[key];
          e.first += 1 << (z - 1);
          e.second.push_back("N=(" + std::to_string(a) + "," + std::to_string(b) + "," + std::to_string(d) + ")");
        }
    int distinct = 1 + 2 * static_cast<int>(lev.size());
    bool complete = static_cast<int>(lev.size()) * 2 + 1 >= count + 2;
    if (complete || cap > 1e7 * lmin) {
      if (distinct < count) throw ValidationError("count exceeds enumeration capacity");
      struct Lv {
        double E;
        int m;
        std::vector<std::string> lab;
      };
      std::vector<Lv> all;
      all.push_back({0.0, 1, {"kernel"}});
      for (auto& [s, e] : lev) {
        double E = std::sqrt(c * s);
        std::vector<std::string> lm, lpz;
        for (auto& x : e.second) lm.push_back("eps0=-1 " + x), lpz.push_back("eps0=+1 " + x);
        all.push_back({-E, e.first, lm});
        all.push_back({E, e.first, lpz});
      }
      std::stable_sort(all.begin(), all.end(), [](const Lv& x, const Lv& y) {
        if (std::abs(x.E) != std::abs(y.E)) return std::abs(x.E) < std::abs(y.E);
        return x.E < y.E;
      });
      all.resize(count);
      std::sort(all.begin(), all.end(), [](const Lv& x, const Lv& y) { return x.E < y.E; });
      SpectrumSlice out;
      for (auto& v : all) {
        out.eigenvalues.push_back(v.E);
        out.multiplicities.push_back(v.m);
        out.residuals.push_back(0.0);
        out.labels.push_back(v.lab);
      }
      return out;
    }
    cap *= 2.0;
  }
}

// Eigenpairs of an operator inside [-band, band] (vectors included).
inline EigenPairs band_eigenpairs(const TruncatedOperator& op, double band) {
  auto comps_max = [&]() {
    auto comps = connected_components(op.matrix);
    size_t mx = 0;
    for (auto& c : comps) mx = std::max(mx, c.size());
    return mx;
  };
  EigenPairs ep;
  if (op.kind == "d0" || op.kind == "model1d" || comps_max() <= 64) {
    ep = component_eigh(op.matrix, band);
    std::vector<int> keep;
    for (int j = 0; j < ep.values.size(); ++j)
      if (std::abs(ep.values(j)) <= band) keep.push_back(j);
    EigenPairs out;
    out.values.resize(static_cast<Eigen::Index>(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j) out.values(static_cast<Eigen::Index>(j)) = ep.values(keep[j]);
    out.vectors = ep.vectors;
    out.residuals.resize(out.vectors.cols());
    for (int j = 0; j < out.vectors.cols(); ++j)
      out.residuals(j) = (op.matrix * out.vectors.col(j) - out.values(j) * out.vectors.col(j)).norm();
    return out;
  }
  if (op.dim <= 700) {
    EigenPairs all = dense_eigh(MatXcd(op.matrix), true);
    std::vector<int> keep;
    for (int j = 0; j < op.dim; ++j)
      if (std::abs(all.values(j)) <= band) keep.push_back(j);
    EigenPairs out;
    out.values.resize(static_cast<Eigen::Index>(keep.size()));
    out.vectors.resize(op.dim, static_cast<Eigen::Index>(keep.size()));
    out.residuals.resize(static_cast<Eigen::Index>(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j) {
      out.values(j) = all.values(keep[j]);
      out.vectors.col(j) = all.vectors.col(keep[j]);
      out.residuals(j) = (op.matrix * out.vectors.col(j) - out.values(j) * out.vectors.col(j)).norm();
    }
    return out;
  }
  int nev = std::max(8, static_cast<int>(op.meta.count("nev_hint") ? op.meta.at("nev_hint") : 16));
  // slight offset keeps the factorization regular when 0 is an exact eigenvalue
  const double sigma = 1e-7 * (1.0 + band);
  while (true) {
    nev = std::min(nev, op.dim - 2);
    EigenPairs e = eigs_near(op.matrix, sigma, nev);
    double far = std::max(std::abs(e.values(0)), std::abs(e.values(e.values.size() - 1)));
    bool covers = e.values(0) < -band && e.values(e.values.size() - 1) > band;
    if (covers || nev >= op.dim - 2 || far > 4 * band) {
      std::vector<int> keep;
      for (int j = 0; j < e.values.size(); ++j)
        if (std::abs(e.values(j)) <= band) keep.push_back(j);
      EigenPairs out;
      out.values.resize(static_cast<Eigen::Index>(keep.size()));
      out.vectors.resize(op.dim, static_cast<Eigen::Index>(keep.size()));
      out.residuals.resize(static_cast<Eigen::Index>(keep.size()));
      for (size_t j = 0; j < keep.size(); ++j) {
        out.values(j) = e.values(keep[j]);
        out.vectors.col(j) = e.vectors.col(keep[j]);
        out.residuals(j) = e.residuals(keep[j]);
      }
      return out;
    }
    nev = nev * 3 / 2 + 4;
  }
}

// Distinct eigenvalues of smallest |E| (count of them), clustered, with max residual per cluster.
inline SpectrumSlice lowest_levels(const TruncatedOperator& op, int count) {
  require(count >= 1, "count must be >= 1");
  std::vector<double> vals;
  std::vector<double> res;
  if (op.kind == "d0" || op.kind == "model1d") {
    EigenPairs ep = component_eigh(op.matrix, -1.0);
    vals.assign(ep.values.data(), ep.values.data() + ep.values.size());
    res.assign(vals.size(), 0.0);
  } else {
    double band = 1.0;
    while (true) {
      EigenPairs ep = band_eigenpairs(op, band);
      auto cl = cluster_values(std::vector<double>(ep.values.data(), ep.values.data() + ep.values.size()));
      if (static_cast<int>(cl.size()) >= count + 1 || band > 1e6) {
        vals.assign(ep.values.data(), ep.values.data() + ep.values.size());
        res.assign(ep.residuals.data(), ep.residuals.data() + ep.residuals.size());
        break;
      }
      band *= 2;
    }
  }
  // cluster with residual tracking
  struct C {
    double v;
    int m;
    double r;
  };
  std::vector<C> cl;
  size_t i = 0;
  while (i < vals.size()) {
    size_t j = i + 1;
    double sum = vals[i], r = res[i];
    while (j < vals.size() && vals[j] - vals[j - 1] <= cluster_tol(vals[j])) sum += vals[j], r = std::max(r, res[j]), ++j;
    cl.push_back({sum / double(j - i), static_cast<int>(j - i), r});
    i = j;
  }
  std::stable_sort(cl.begin(), cl.end(), [](const C& a, const C& b) {
    if (std::abs(a.v) != std::abs(b.v)) return std::abs(a.v) < std::abs(b.v);
    return a.v < b.v;
  });
  if (static_cast<int>(cl.size()) > count) cl.resize(count);
  std::sort(cl.begin(), cl.end(), [](const C& a, const C& b) { return a.v < b.v; });
  SpectrumSlice s;
  for (auto& c : cl) {
    s.eigenvalues.push_back(std::abs(c.v) < 1e-12 ? 0.0 : c.v);
    s.multiplicities.push_back(c.m);
    s.residuals.push_back(c.r);
  }
  return s;
}

// Largest change of the listed levels between two truncations (matched by position).
inline double slice_change(const SpectrumSlice& a, const SpectrumSlice& b) {
  double d = 0;
  size_t n = std::min(a.eigenvalues.size(), b.eigenvalues.size());
  for (size_t i = 0; i < n; ++i) d = std::max(d, std::abs(a.eigenvalues[i] - b.eigenvalues[i]));
  if (a.eigenvalues.size() != b.eigenvalues.size()) d = std::max(d, 1.0);
  return d;
}

// Levels at n_max certified against the n_max + 4 truncation: truncation_residual is the largest
// level change, and each level's residual is raised to its own change.
inline SpectrumSlice certified_levels(const std::function<TruncatedOperator(int)>& build, int n_max, int count) {
  SpectrumSlice a = lowest_levels(build(n_max), count);
  SpectrumSlice b = lowest_levels(build(n_max + 4), count);
  a.truncation_residual = slice_change(a, b);
  for (size_t i = 0; i < a.eigenvalues.size(); ++i) {
    double d = i < b.eigenvalues.size() ? std::abs(a.eigenvalues[i] - b.eigenvalues[i]) : 1.0;
    a.residuals[i] = std::max(a.residuals[i], d);
  }
  return a;
}

// ---------------------------------------------------------------------------
// 1-D model D = gamma_x d_x + sqrt2 R_mu x rhohat on the +1 eigenspace of rhohat Gamma in
// R^8 (x) R^2, with rhohat = rho_3 (x) J, gamma_x = gamma_4 (x) 1.

struct Model1DFrame {
  Eigen::Matrix<double, 16, 8> U;  // orthonormal basis: columns 0..3 sigma=-1, 4..7 sigma=+1 of gamma_x rhohat
  Eigen::Matrix<double, 16, 16> gx, rh, Gam;
};

inline Model1DFrame model1d_frame(const CliffordRep& rep) {
  Eigen::Matrix2d J;
  J << 0, -1, 1, 0;
  Model1DFrame f;
  auto kron = [](const Mat8& A, const Eigen::Matrix2d& B) {
    Eigen::Matrix<double, 16, 16> K;
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) K.block<2, 2>(2 * i, 2 * j) = A(i, j) * B;
    return K;
  };
  f.gx = kron(rep.gamma[3], Eigen::Matrix2d::Identity());
  f.rh = kron(rep.rho[2], J);
  f.Gam = kron(rep.Gamma, Eigen::Matrix2d::Identity());
  using M16 = Eigen::Matrix<double, 16, 16>;
  M16 Id = M16::Identity();
  M16 Pplus = 0.5 * (Id + f.rh * f.Gam);
  M16 S = f.gx * f.rh;
  for (int sgn = 0; sgn < 2; ++sgn) {
    double sigma = sgn == 0 ? -1.0 : 1.0;
    M16 Pr = Pplus * 0.5 * (Id + sigma * S);
    Pr = 0.5 * (Pr + Pr.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<M16> es(Pr);
    // eigenvalue-1 eigenvectors are the last four
    for (int j = 0; j < 4; ++j) {
      Eigen::Matrix<double, 16, 1> v = es.eigenvectors().col(12 + j);
      // deterministic sign: largest component positive
      Eigen::Index arg;
      v.cwiseAbs().maxCoeff(&arg);
      if (v(arg) < 0) v = -v;
      f.U.col(4 * sgn + j) = v;
    }
  }
  return f;
}

inline TruncatedOperator build_model_1d(double R_mu, const CliffordRep& rep, int n_max) {
  require(R_mu > 0, "build_model_1d: R_mu must be positive");
  require(n_max >= 1, "build_model_1d: n_max must be >= 1");
  Model1DFrame f = model1d_frame(rep);
  const double lp = std::sqrt(2.0) * R_mu;
  // states: (n, j) for j in 0..3 (sigma = -1) with n <= n_max; (n, 4+j) with n <= n_max - 1
  std::vector<std::pair<int, int>> st;
  for (int n = 0; n <= n_max; ++n)
    for (int j = 0; j < 8; ++j)
      if (j < 4 || n <= n_max - 1) st.emplace_back(n, j);
  auto idx = [&](int n, int j) -> int {
    if (n < 0 || j < 0) return -1;
    if (j < 4 ? n > n_max : n > n_max - 1) return -1;
    // position: each level n has 8 states except the top (4)
    return n * 8 + j;
  };
  Eigen::Matrix<double, 8, 8> A = f.U.transpose() * (f.gx + f.rh) * f.U;   // coefficient of a / 2
  Eigen::Matrix<double, 8, 8> B = f.U.transpose() * (f.rh - f.gx) * f.U;   // coefficient of a^dag / 2
  std::vector<Triplet> t;
  for (int c = 0; c < static_cast<int>(st.size()); ++c) {
    auto [n, j] = st[c];
    for (int i = 0; i < 8; ++i) {
      if (n > 0 && std::abs(A(i, j)) > 1e-12) {
        int r = idx(n - 1, i);
        if (r >= 0) t.emplace_back(r, c, 0.5 * A(i, j) * std::sqrt(2.0 * lp * n));
      }
      if (std::abs(B(i, j)) > 1e-12) {
        int r = idx(n + 1, i);
        if (r >= 0) t.emplace_back(r, c, 0.5 * B(i, j) * std::sqrt(2.0 * lp * (n + 1)));
      }
    }
  }
  TruncatedOperator op;
  op.dim = static_cast<int>(st.size());
  op.matrix = hermitian_part(from_triplets(op.dim, op.dim, t));
  op.kind = "model1d";
  op.axes = 1;
  op.scale = {lp, lp, lp};
  op.basis.resize(op.dim);
  for (int c = 0; c < op.dim; ++c) op.basis[c] = {0, {st[c].first, 0, 0}, st[c].second};
  op.meta = {{"R_mu", R_mu}, {"n_max", n_max}};
  return op;
}

// ---------------------------------------------------------------------------
// Gaussian localization fit

struct DecayFit {
  double rate = 0;          // min over directions of the fitted c in |psi| ~ A exp(-c r^2)
  double rel_residual = 0;  // RMS log residual relative to the fitted log range
  std::vector<double> rates;
};

// Density |psi|^2(y) summed over spinor and Fourier labels.
inline double basis_density(const TruncatedOperator& op, const VecXcd& v, const Vec3& y, int nmax_osc) {
  std::array<std::vector<double>, 3> h;
  for (int k = 0; k < op.axes; ++k) h[k] = hermite_functions(op.scale[k], nmax_osc, y(k));
  std::map<std::pair<int, int>, cd> amp;
  for (int i = 0; i < op.dim; ++i) {
    if (v(i) == cd(0)) continue;
    const auto& b = op.basis[i];
    double w = 1.0;
    for (int k = 0; k < op.axes; ++k) w *= h[k][b.osc[k]];
    amp[{b.fourier, b.spin}] += v(i) * w;
  }
  double d = 0;
  for (auto& [k, a] : amp) d += std::norm(a);
  return d;
}

inline DecayFit gaussian_decay_fit(const VecXcd& eigvec, double E, const TruncatedOperator& op) {
  const double R = op.meta.count("R") ? op.meta.at("R") : op.meta.at("R_mu");
  if (std::abs(E) > std::sqrt(R) / kappa)
    throw ValidationError("gaussian_decay_fit: eigenvalue outside the localization window |E| <= sqrt(R)/kappa");
  require(std::abs(eigvec.norm() - 1.0) < 1e-6, "gaussian_decay_fit: eigenvector must be normalized");
  int nmax_osc = 0;
  for (const auto& b : op.basis)
    for (int k = 0; k < 3; ++k) nmax_osc = std::max(nmax_osc, b.osc[k]);
  // restrict to the support of the vector
  VecXcd v = eigvec;
  for (int i = 0; i < v.size(); ++i)
    if (std::abs(v(i)) < 1e-14) v(i) = 0;
  double lp_max = 0;
  for (int k = 0; k < op.axes; ++k) lp_max = std::max(lp_max, op.scale[k]);
  const double w = 1.0 / std::sqrt(lp_max);  // narrowest Gaussian width
  std::vector<Vec3> dirs;
  if (op.axes == 1) {
    dirs = {Vec3(1, 0, 0), Vec3(-1, 0, 0)};
  } else {
    dirs = {Vec3(1, 0, 0), Vec3(0, 1, 0), Vec3(0, 0, 1)};
    for (int sx : {1, -1})
      for (int sy : {1, -1}) dirs.push_back(Vec3(1, sx, sy).normalized());
  }
  DecayFit out;
  out.rate = std::numeric_limits<double>::infinity();
  double worst = 0;
  const int npts = 24;
  for (const Vec3& u : dirs) {
    // least squares log|psi| = A - c r^2 on r in [0.5 w, 3 w]
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::vector<double> xs, ys;
    for (int i = 0; i < npts; ++i) {
      double r = w * (0.5 + 2.5 * i / (npts - 1));
      double dens = basis_density(op, v, r * u, nmax_osc);
      if (!(dens > 1e-300)) throw NumericalError("gaussian_decay_fit: density underflow (truncation-dominated)");
      double x = r * r, y = 0.5 * std::log(dens);
      xs.push_back(x), ys.push_back(y);
      sx += x, sy += y, sxx += x * x, sxy += x * y;
    }
    double n = npts;
    double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    double icpt = (sy - slope * sx) / n;
    double ss = 0;
    for (int i = 0; i < npts; ++i) ss += std::pow(ys[i] - (icpt + slope * xs[i]), 2);
    double rms = std::sqrt(ss / n);
    double range = std::abs(slope) * (xs.back() - xs.front());
    double rel = range > 0 ? rms / range : 1.0;
    worst = std::max(worst, rel);
    out.rates.push_back(-slope);
    out.rate = std::min(out.rate, -slope);
  }
  out.rel_residual = worst;
  if (worst > 0.1 || !(out.rate > 0))
    throw NumericalError("gaussian_decay_fit: profile is not Gaussian (truncation-dominated or not in decay regime)");
  return out;
}

}  // namespace sfl
