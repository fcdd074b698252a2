// Operators on R/(l Z) x R^3:
//   D = gamma_s d_s + sum gamma_k d_k + sqrt2 i R sum M_jk(s) x_j rho_k  (+ perturbations),
// kernel-bundle holonomy, eigenvalue-lattice fits.
//
// Assembly uses a moving frame. With the polar decomposition M = H O, H = (M M^T)^(1/2),
// eps = sign det M and R(s) = eps O(s) in SO(3), a spin lift S(s) (S rho_k S^-1 = R_km rho_m)
// conjugates the operator into
//   gamma_s (d_s + G'(s)) + sum gamma~_m d_m + sqrt2 i R sum H~_ab(s) y_a rho~'_b,
// with G' = 1/4 sum Omega_ab rho_a rho_b, Omega = R' R^T, and y = Vbar^T x where Vbar
// diagonalizes the loop mean of H. When S(l) = -S(0) the conjugated functions are
// antiperiodic, so Fourier modes are e^{2 pi i (m + theta) s / l} with theta = 1/2.
// The fiber basis is truncated in total level sum_k N_k <= L_max, which keeps the
// normal-form blocks intact.
#pragma once

#include "specflow/oscillator.hpp"

#include <random>

namespace sfl {

// ---------------------------------------------------------------------------
// Loops

struct MatrixLoop {
  double ell = 1.0;
  std::function<Mat3(double)> M;
  std::function<Mat3(double)> dM;
  std::string name = "loop";

  void validate(int samples = 256) const {
    require(ell > 0, "loop length must be positive");
    require(static_cast<bool>(M) && static_cast<bool>(dM), "loop needs M and dM");
    double dmin = std::numeric_limits<double>::infinity(), dmax = 0;
    for (int j = 0; j <= samples; ++j) {
      double d = M(ell * j / samples).determinant();
      require(std::isfinite(d), "loop matrix is not finite");
      dmin = std::min(dmin, std::abs(d));
      dmax = std::max(dmax, std::abs(d));
    }
    require(dmin > 1e-10 * std::max(1.0, dmax), "loop matrix is singular at some sample");
    require((M(0.0) - M(ell)).cwiseAbs().maxCoeff() <= 1e-10 * std::max(1.0, M(0.0).cwiseAbs().maxCoeff()),
            "loop is not periodic");
  }
};

inline Mat3 rot_axis(const Vec3& n, double ang) { return Eigen::AngleAxisd(ang, n.normalized()).toRotationMatrix(); }
inline Mat3 hat(const Vec3& n) {
  Mat3 K;
  K << 0, -n(2), n(1), n(2), 0, -n(0), -n(1), n(0), 0;
  return K;
}

inline MatrixLoop constant_loop(const Mat3& M, double ell) {
  MatrixLoop L;
  L.ell = ell;
  L.M = [M](double) { return M; };
  L.dM = [](double) { return Mat3(Mat3::Zero()); };
  L.name = "constant";
  return L;
}

// M(s) = sign * rotation about e_3 by 2 pi s / l.
inline MatrixLoop rotation_loop(double ell, int sign = 1) {
  require(sign == 1 || sign == -1, "sign must be +-1");
  MatrixLoop L;
  L.ell = ell;
  const double w = 2 * pi / ell;
  L.M = [=](double s) { return Mat3(double(sign) * rot_axis(Vec3::UnitZ(), w * s)); };
  L.dM = [=](double s) { return Mat3(double(sign) * w * hat(Vec3::UnitZ()) * rot_axis(Vec3::UnitZ(), w * s)); };
  L.name = "rotation";
  return L;
}

// Seeded smooth loop M(s) = H(s) Rz(w s) Rn(w s) with H(s) = H0 + degree-2 symmetric trig
// polynomial (positive definite), n a random unit axis, w = 2 pi / l.
inline MatrixLoop random_loop(std::uint64_t seed, double ell, double amp = 0.12) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  auto rsym = [&]() {
    Mat3 A;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) A(i, j) = U(rng);
    return Mat3(0.5 * (A + A.transpose()));
  };
  Mat3 Q0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) Q0(i, j) = U(rng);
  Q0 = Eigen::HouseholderQR<Mat3>(Q0).householderQ();
  Vec3 ev(1.0 + 0.15 * (U(rng) + 1), 1.0 + 0.25 * (U(rng) + 1), 1.0 + 0.35 * (U(rng) + 1));
  Mat3 H0 = Q0 * ev.asDiagonal() * Q0.transpose();
  std::array<Mat3, 4> A;
  for (auto& a : A) a = amp * rsym();
  Vec3 n(U(rng), U(rng), U(rng));
  n.normalize();
  const double w = 2 * pi / ell;
  auto H = [=](double s) {
    return Mat3(H0 + A[0] * std::cos(w * s) + A[1] * std::sin(w * s) + A[2] * std::cos(2 * w * s) +
                A[3] * std::sin(2 * w * s));
  };
  auto dH = [=](double s) {
    return Mat3(w * (-A[0] * std::sin(w * s) + A[1] * std::cos(w * s)) +
                2 * w * (-A[2] * std::sin(2 * w * s) + A[3] * std::cos(2 * w * s)));
  };
  auto Rr = [=](double s) { return Mat3(rot_axis(Vec3::UnitZ(), w * s) * rot_axis(n, w * s)); };
  auto dR = [=](double s) {
    Mat3 Rz = rot_axis(Vec3::UnitZ(), w * s), Rn = rot_axis(n, w * s);
    return Mat3(w * hat(Vec3::UnitZ()) * Rz * Rn + Rz * (w * hat(n) * Rn));
  };
  MatrixLoop L;
  L.ell = ell;
  L.M = [=](double s) { return Mat3(H(s) * Rr(s)); };
  L.dM = [=](double s) { return Mat3(dH(s) * Rr(s) + H(s) * dR(s)); };
  L.name = "random(" + std::to_string(seed) + ")";
  // positivity of H is required for H to be the polar factor
  for (int j = 0; j < 64; ++j) {
    Eigen::SelfAdjointEigenSolver<Mat3> es(H(ell * j / 64));
    if (es.eigenvalues().minCoeff() < 0.3) throw ValidationError("random_loop: amplitude too large");
  }
  return L;
}

// Loop from equally spaced samples M(j l / n), j = 0..n-1, by trigonometric interpolation.
inline MatrixLoop loop_from_samples(double ell, const std::vector<Mat3>& samples) {
  const int n = static_cast<int>(samples.size());
  require(n >= 8, "need at least 8 loop samples");
  const int K = (n - 1) / 2;
  std::vector<std::array<cd, 9>> c(2 * K + 1);
  for (int k = -K; k <= K; ++k) {
    std::array<cd, 9> acc{};
    for (int j = 0; j < n; ++j) {
      cd e = std::exp(cd(0, -2 * pi * k * j / n));
      for (int q = 0; q < 9; ++q) acc[q] += samples[j](q / 3, q % 3) * e;
    }
    for (auto& a : acc) a /= double(n);
    c[k + K] = acc;
  }
  auto eval = [=](double s, bool deriv) {
    Mat3 M = Mat3::Zero();
    for (int k = -K; k <= K; ++k) {
      cd e = std::exp(cd(0, 2 * pi * k * s / ell));
      cd f = deriv ? cd(0, 2 * pi * k / ell) * e : e;
      for (int q = 0; q < 9; ++q) M(q / 3, q % 3) += (c[k + K][q] * f).real();
    }
    return M;
  };
  MatrixLoop L;
  L.ell = ell;
  L.M = [=](double s) { return eval(s, false); };
  L.dM = [=](double s) { return eval(s, true); };
  L.name = "sampled";
  return L;
}

// ---------------------------------------------------------------------------
// Perturbations

// chi: 1 on (-inf, 1/4], 0 on [3/4, inf), C^2 quintic smoothstep in between.
inline double chi(double t) {
  if (t <= 0.25) return 1.0;
  if (t >= 0.75) return 0.0;
  double u = (t - 0.25) / 0.5;
  return 1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u);
}

struct PerturbationData {
  std::function<Vec3(double)> Mvec;  // metric term M_j(s)
  std::function<Mat3(double)> W;     // antisymmetric W_ij(s)
  std::function<Vec3(double)> B, C;
  double b0 = 0.0;
  double q = 0.0;
  double r0 = 1.0;
};

inline constexpr double kappa_B = 10.0;

inline double sup_norm(const std::function<Vec3(double)>& f, double ell) {
  if (!f) return 0.0;
  double m = 0;
  for (int j = 0; j < 256; ++j) m = std::max(m, f(ell * j / 256).norm());
  return m;
}

inline void validate_pert(const PerturbationData& p, double ell, double R) {
  require(p.r0 > 0, "r0 must be positive");
  require(std::abs(p.q) <= 1.0, "|q| must be <= 1");
  require(p.b0 >= 0 && p.b0 < 2 * pi / ell, "b0 must lie in [0, 2 pi / l)");
  double supM = sup_norm(p.Mvec, ell), supW = 0;
  if (p.W)
    for (int j = 0; j < 256; ++j) {
      Mat3 w = p.W(ell * j / 256);
      require((w + w.transpose()).cwiseAbs().maxCoeff() < 1e-12, "W must be antisymmetric");
      supW = std::max(supW, w.norm());
    }
  require(p.r0 * (supM + supW) < 1e-4, "ellipticity bound violated: r0 (|M| + |W|) must be < 1e-4");
  double supBC = 0;
  for (int j = 0; j < 256; ++j) {
    double s = ell * j / 256, v = 0;
    if (p.B) v += p.B(s).norm();
    if (p.C) v += p.C(s).norm();
    supBC = std::max(supBC, v);
  }
  require(supBC < R / kappa_B, "size condition violated: sup(|B| + |C|) must be < R / kappa_B");
}

// ---------------------------------------------------------------------------
// Moving frame

struct LoopFrame {
  double ell = 1;
  int eps = 1;
  double theta = 0;   // 0 periodic, 1/2 antiperiodic spin lift
  Mat3 Vbar;          // columns: eigenvectors of the loop mean of H, det +1
  Vec3 lambda_bar;
  int samples = 0;
  std::vector<Mat3> Ht;     // Vbar^T H(s_j) Vbar
  std::vector<Mat3> Omt;    // Vbar^T (R' R^T)(s_j) Vbar
};

struct PolarData {
  Mat3 H, O, W;  // M = H O, O' = W O
  int eps;
};

inline PolarData polar_with_derivative(const Mat3& M, const Mat3& dM) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(M * M.transpose());
  Vec3 h = es.eigenvalues().cwiseMax(0).cwiseSqrt();
  Mat3 Q = es.eigenvectors();
  PolarData p;
  p.H = Q * h.asDiagonal() * Q.transpose();
  p.O = Q * h.cwiseInverse().asDiagonal() * Q.transpose() * M;
  p.eps = M.determinant() > 0 ? 1 : -1;
  Mat3 C = dM * p.O.transpose() - p.O * dM.transpose();
  Mat3 Cq = Q.transpose() * C * Q, Wq;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) Wq(i, j) = Cq(i, j) / (h(i) + h(j));
  p.W = Q * Wq * Q.transpose();
  return p;
}

// Spin lift of a rotation: S = exp(1/4 sum c_ab rho_a rho_b), c = log Rm.
inline Mat8 spin_lift(const Mat3& Rm, const CliffordRep& rep) {
  Eigen::AngleAxisd aa(Rm);
  double th = aa.angle();
  Mat3 c = th * hat(aa.axis());
  Mat8 G = Mat8::Zero();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b)
      if (c(a, b) != 0) G += 0.25 * c(a, b) * rep.rho[a] * rep.rho[b];
  double h = 0.5 * th;
  if (std::abs(h) < 1e-300) return Mat8::Identity();
  return std::cos(h) * Mat8::Identity() + (std::sin(h) / h) * G;
}

// Spin lifts along s_j = j l / n (j = 0..n), continuous in j; sub-stepping keeps continuity.
inline std::vector<Mat8> spin_lifts(const MatrixLoop& loop, int n, const CliffordRep& rep, int sub = 8) {
  std::vector<Mat8> out;
  Mat8 prev;
  for (int j = 0; j <= n * sub; ++j) {
    double s = loop.ell * j / (double(n) * sub);
    PolarData p = polar_with_derivative(loop.M(s), loop.dM(s));
    Mat8 S = spin_lift(double(p.eps) * p.O, rep);
    if (j > 0 && (prev.transpose() * S).trace() < 0) S = -S;
    prev = S;
    if (j % sub == 0) out.push_back(S);
  }
  return out;
}

inline LoopFrame compute_frame(const MatrixLoop& loop, const CliffordRep& rep, int samples = 128) {
  loop.validate();
  LoopFrame f;
  f.ell = loop.ell;
  f.samples = samples;
  std::vector<PolarData> pd(samples);
  Mat3 Hbar = Mat3::Zero();
  for (int j = 0; j < samples; ++j) {
    double s = loop.ell * j / samples;
    pd[j] = polar_with_derivative(loop.M(s), loop.dM(s));
    if (j == 0) f.eps = pd[0].eps;
    require(pd[j].eps == f.eps, "loop determinant changes sign");
    Hbar += pd[j].H / double(samples);
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es(Hbar);
  f.lambda_bar = es.eigenvalues();
  f.Vbar = es.eigenvectors();
  // deterministic column signs: largest component positive, then fix det = +1
  for (int c = 0; c < 3; ++c) {
    Eigen::Index arg;
    f.Vbar.col(c).cwiseAbs().maxCoeff(&arg);
    if (f.Vbar(arg, c) < 0) f.Vbar.col(c) *= -1;
  }
  if (f.Vbar.determinant() < 0) f.Vbar.col(2) *= -1;
  for (int j = 0; j < samples; ++j) {
    f.Ht.push_back(f.Vbar.transpose() * pd[j].H * f.Vbar);
    f.Omt.push_back(f.Vbar.transpose() * pd[j].W * f.Vbar);
  }
  auto lifts = spin_lifts(loop, samples, rep, 4);
  double tr = (lifts.front().transpose() * lifts.back()).trace() / 8.0;
  if (std::abs(std::abs(tr) - 1.0) > 1e-6) throw NumericalError("spin lift does not close up");
  f.theta = tr > 0 ? 0.0 : 0.5;
  return f;
}

// Fourier coefficients c_k (|k| <= K) of equally spaced samples; trailing modes below
// rel_tol * max are dropped. Throws when the series is not resolved by the sampling.
template <class T>
std::vector<std::pair<int, T>> fourier_coeffs(const std::vector<T>& samp, double rel_tol = 1e-13) {
  const int n = static_cast<int>(samp.size());
  const int K = n / 2 - 1;
  std::vector<std::pair<int, T>> out;
  double mx = 0;
  std::vector<T> all;
  for (int k = -K; k <= K; ++k) {
    T acc = T::Zero();
    for (int j = 0; j < n; ++j) acc += samp[j].template cast<cd>() * std::exp(cd(0, -2 * pi * double(k) * j / n));
    acc /= double(n);
    all.push_back(acc);
    mx = std::max(mx, acc.cwiseAbs().maxCoeff());
  }
  for (int k = -K; k <= K; ++k) {
    const T& a = all[k + K];
    double m = a.cwiseAbs().maxCoeff();
    if (std::abs(k) >= K - 2 && m > 1e-9 * std::max(mx, 1e-300))
      throw NumericalError("loop data is not resolved by the Fourier sampling");
    if (m > rel_tol * mx) out.emplace_back(k, a);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Quadrature matrices for the cutoff terms chi0(|y|) y_a and chi0 y_n d_m on oscillator states.

struct OscSet {
  std::vector<std::array<int, 3>> n;
  std::map<std::array<int, 3>, int> idx;
};

inline OscSet osc_set(int L) {
  OscSet o;
  for (int t = 0; t <= L; ++t)
    for (int a = 0; a <= t; ++a)
      for (int b = 0; a + b <= t; ++b) {
        std::array<int, 3> v{a, b, t - a - b};
        o.idx[v] = static_cast<int>(o.n.size());
        o.n.push_back(v);
      }
  return o;
}

struct CutoffMatrices {
  std::array<MatXd, 3> chiY;                 // <n'| chi0 y_a |n>
  std::array<std::array<MatXd, 3>, 3> chiYD;  // anti-symmetric part of <n'| chi0 y_n d_m |n>, [m][n]
};

inline void gauss_legendre(int n, std::vector<double>& x, std::vector<double>& w) {
  x.resize(n), w.resize(n);
  for (int i = 0; i < n; ++i) {
    double z = std::cos(pi * (i + 0.75) / (n + 0.5)), pp = 0;
    for (int it = 0; it < 100; ++it) {
      double p1 = 1, p2 = 0;
      for (int j = 0; j < n; ++j) {
        double p3 = p2;
        p2 = p1;
        p1 = ((2.0 * j + 1) * z * p2 - j * p3) / (j + 1);
      }
      pp = n * (z * p1 - p2) / (z * z - 1);
      double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) < 1e-15) break;
    }
    x[i] = z;
    w[i] = 2.0 / ((1 - z * z) * pp * pp);
  }
}

inline CutoffMatrices cutoff_matrices(const OscSet& os, const std::array<double, 3>& lp, double r0, int nq = 40) {
  int nmax = 0;
  for (auto& v : os.n) nmax = std::max({nmax, v[0], v[1], v[2]});
  double lpmin = std::min({lp[0], lp[1], lp[2]});
  double ext = (std::sqrt(2.0 * nmax + 1.0) + 7.0) / std::sqrt(lpmin);
  double half = std::min(1.75 * r0, ext);
  std::vector<double> gx, gw;
  gauss_legendre(nq, gx, gw);
  const int no = static_cast<int>(os.n.size());
  CutoffMatrices cm;
  for (int a = 0; a < 3; ++a) cm.chiY[a] = MatXd::Zero(no, no);
  for (int m = 0; m < 3; ++m)
    for (int n = 0; n < 3; ++n) cm.chiYD[m][n] = MatXd::Zero(no, no);
  // per-axis tables of h and h'
  std::array<std::vector<std::vector<double>>, 3> h, dh;
  for (int k = 0; k < 3; ++k) {
    h[k].resize(nq), dh[k].resize(nq);
    for (int i = 0; i < nq; ++i) {
      double y = half * gx[i];
      auto hv = hermite_functions(lp[k], nmax + 1, y);
      h[k][i].assign(hv.begin(), hv.begin() + nmax + 1);
      dh[k][i].resize(nmax + 1);
      for (int q = 0; q <= nmax; ++q)
        dh[k][i][q] = 0.5 * ((q > 0 ? std::sqrt(2.0 * lp[k] * q) * hv[q - 1] : 0.0) -
                             std::sqrt(2.0 * lp[k] * (q + 1)) * hv[q + 1]);
    }
  }
  VecXd f(no);
  std::array<VecXd, 3> df;
  for (int i = 0; i < nq; ++i)
    for (int j = 0; j < nq; ++j)
      for (int l = 0; l < nq; ++l) {
        Vec3 y(half * gx[i], half * gx[j], half * gx[l]);
        double c = chi(y.norm() / r0 - 1.0);
        if (c == 0.0) continue;
        double wq = gw[i] * gw[j] * gw[l] * half * half * half * c;
        int id[3] = {i, j, l};
        for (int s = 0; s < no; ++s) {
          const auto& v = os.n[s];
          f(s) = h[0][i][v[0]] * h[1][j][v[1]] * h[2][l][v[2]];
          for (int m = 0; m < 3; ++m) {
            double p = 1;
            for (int k = 0; k < 3; ++k) p *= (k == m ? dh[k][id[k]][v[k]] : h[k][id[k]][v[k]]);
            if (m == 0) df[0].resize(no);
            df[m].resize(no);
            df[m](s) = p;
          }
        }
        for (int a = 0; a < 3; ++a) cm.chiY[a].noalias() += (wq * y(a)) * f * f.transpose();
        for (int m = 0; m < 3; ++m)
          for (int n = 0; n < 3; ++n) cm.chiYD[m][n].noalias() += (wq * y(n)) * f * df[m].transpose();
      }
  for (int m = 0; m < 3; ++m)
    for (int n = 0; n < 3; ++n) cm.chiYD[m][n] = 0.5 * (cm.chiYD[m][n] - cm.chiYD[m][n].transpose()).eval();
  for (int a = 0; a < 3; ++a) cm.chiY[a] = 0.5 * (cm.chiY[a] + cm.chiY[a].transpose()).eval();
  return cm;
}

inline SpatialTerm spatial_dense(const OscSet& os, const MatXd& A) {
  return [&os, &A](const std::array<int, 3>& n, auto& out) {
    auto it = os.idx.find(n);
    if (it == os.idx.end()) return;
    int c = it->second;
    for (int r = 0; r < A.rows(); ++r)
      if (A(r, c) != 0.0) out.emplace_back(os.n[r], cd(A(r, c)));
  };
}

// ---------------------------------------------------------------------------
// Circle operator

inline int default_fourier_max(double band, double ell) {
  return static_cast<int>(std::ceil(band * ell / (2 * pi))) + 8;
}

struct CircleBuild {
  TruncatedOperator op;
  LoopFrame frame;
  SpinorFrame spin;
  FiberBasis fiber;
};

inline CircleBuild build_D_circle_full(const MatrixLoop& loop, double R, const PerturbationData* pert, int L_max,
                                       int fourier_max, const CliffordRep& rep, int samples = 128) {
  require(R > 0, "R must be positive");
  require(fourier_max >= 1, "fourier_max must be >= 1");
  require(L_max >= 1, "fiber level bound must be >= 1");
  if (pert) validate_pert(*pert, loop.ell, R);
  CircleBuild cb;
  cb.frame = compute_frame(loop, rep, samples);
  const LoopFrame& fr = cb.frame;
  cb.spin = make_spinor_frame(rep, fr.Vbar, double(fr.eps) * fr.Vbar);
  cb.fiber = make_fiber_basis(FiberBasis::Trunc::Total, L_max);
  const SpinorFrame& sf = cb.spin;
  const FiberBasis& fb = cb.fiber;
  const int nf = fb.size(), F = fourier_max, nm = 2 * F + 1, dim = nm * nf;
  const double ell = loop.ell;
  std::array<double, 3> lp;
  for (int k = 0; k < 3; ++k) lp[k] = std::sqrt(2.0) * R * fr.lambda_bar(k);

  // Fourier data of the moving-frame coefficients
  auto Hk = fourier_coeffs<Eigen::Matrix3cd>(std::vector<Eigen::Matrix3cd>(fr.Ht.begin(), fr.Ht.end()));
  std::vector<Eigen::Matrix3cd> om(fr.Omt.begin(), fr.Omt.end());
  auto Ok = fourier_coeffs<Eigen::Matrix3cd>(om);

  // Fiber-level blocks per Fourier offset: list of (k, triplets in fiber indices).
  std::map<int, std::vector<Triplet>> blocks;
  for (auto& [k, Hc] : Hk) {
    Eigen::Matrix3cd C = std::sqrt(2.0) * R * Hc;
    if (k == 0)
      for (int a = 0; a < 3; ++a) C(a, a) = lp[a];  // the mean is diag(lambda_bar) up to rounding
    fiber_dirac_triplets(fb, sf, lp, C, blocks[k], k == 0);
  }
  // spin connection gamma_s G'(s)
  std::map<int, Mat8c> Gk;  // G' per Fourier mode, e-basis
  for (auto& [k, Oc] : Ok) {
    Mat8c G = Mat8c::Zero();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (Oc(a, b) != cd(0)) G += 0.25 * Oc(a, b) * sf.rhoE[a] * sf.rhoE[b];
    Gk[k] = sparsify(G, 1e-14);
  }
  // D_s = d_s + G' as an operator on the full basis (used by the metric term as well)
  std::vector<Triplet> tDs;
  auto kmom = [&](int m) { return 2 * pi * (m + fr.theta) / ell; };
  for (int mi = 0; mi < nm; ++mi) {
    int m = mi - F;
    for (int i = 0; i < nf; ++i) tDs.emplace_back(mi * nf + i, mi * nf + i, cd(0, kmom(m)));
  }
  for (auto& [k, G] : Gk) {
    std::vector<Triplet> t;
    fiber_kron(fb, spatial_identity(), G, cd(1), t);
    for (int mi = 0; mi < nm; ++mi) {
      int mj = mi + k;
      if (mj < 0 || mj >= nm) continue;
      for (auto& x : t) tDs.emplace_back(mj * nf + x.row(), mi * nf + x.col(), x.value());
    }
  }
  SpMat Ds = from_triplets(dim, dim, tDs);
  std::vector<Triplet> tgs;
  {
    std::vector<Triplet> t;
    fiber_kron(fb, spatial_identity(), sf.gs, cd(1), t);
    for (int mi = 0; mi < nm; ++mi)
      for (auto& x : t) tgs.emplace_back(mi * nf + x.row(), mi * nf + x.col(), x.value());
  }
  SpMat GS = from_triplets(dim, dim, tgs);

  auto spread = [&](std::vector<Triplet>& out, int k, const std::vector<Triplet>& fibt) {
    for (int mi = 0; mi < nm; ++mi) {
      int mj = mi + k;
      if (mj < 0 || mj >= nm) continue;
      for (auto& x : fibt) out.emplace_back(mj * nf + x.row(), mi * nf + x.col(), x.value());
    }
  };
  std::vector<Triplet> trip;
  for (auto& [k, t] : blocks) spread(trip, k, t);

  // perturbations
  auto vec_samples = [&](const std::function<Vec3(double)>& fn) {
    std::vector<Eigen::Matrix<cd, 3, 1>> v(fr.samples);
    for (int j = 0; j < fr.samples; ++j) v[j] = (fr.Vbar.transpose() * fn(ell * j / fr.samples)).cast<cd>();
    return v;
  };
  SpMat pertM;
  if (pert) {
    const PerturbationData& p = *pert;
    OscSet os = osc_set(L_max);
    bool needCut = (p.Mvec && sup_norm(p.Mvec, ell) > 0);
    bool needW = false;
    if (p.W)
      for (int j = 0; j < 64 && !needW; ++j) needW = p.W(ell * j / 64).cwiseAbs().maxCoeff() > 0;
    CutoffMatrices cm;
    if (needCut || needW) cm = cutoff_matrices(os, lp, p.r0);
    if (needCut) {
      // -1/2 gamma_s (g D_s + D_s g), g = chi0 y . M~(s)
      auto Mk = fourier_coeffs<Eigen::Matrix<cd, 3, 1>>(vec_samples(p.Mvec));
      std::vector<Triplet> tg;
      for (auto& [k, mv] : Mk)
        for (int a = 0; a < 3; ++a) {
          if (mv(a) == cd(0)) continue;
          std::vector<Triplet> t;
          fiber_kron(fb, spatial_dense(os, cm.chiY[a]), Mat8c::Identity(), mv(a), t);
          spread(tg, k, t);
        }
      SpMat Gm = from_triplets(dim, dim, tg);
      SpMat Tf = SpMat(GS * (Gm * Ds + Ds * Gm)) * cd(-0.5);
      pertM = Tf;
    }
    if (needW) {
      // -gamma_s chi0 W~_mn y_n d_m
      std::vector<Mat3> Ws(fr.samples);
      for (int j = 0; j < fr.samples; ++j) Ws[j] = fr.Vbar.transpose() * p.W(ell * j / fr.samples) * fr.Vbar;
      std::vector<Eigen::Matrix3cd> Wc(Ws.size());
      for (size_t j = 0; j < Ws.size(); ++j) Wc[j] = Ws[j].cast<cd>();
      auto Wk = fourier_coeffs<Eigen::Matrix3cd>(Wc);
      for (auto& [k, wm] : Wk)
        for (int m = 0; m < 3; ++m)
          for (int n = 0; n < 3; ++n) {
            if (wm(m, n) == cd(0)) continue;
            std::vector<Triplet> t;
            fiber_kron(fb, spatial_dense(os, cm.chiYD[m][n]), sf.gs, -wm(m, n), t);
            spread(trip, k, t);
          }
    }
    if (p.B) {
      // i sum eps_bac B~_c(s) gamma~_a y_b
      auto Bk = fourier_coeffs<Eigen::Matrix<cd, 3, 1>>(vec_samples(p.B));
      for (auto& [k, bv] : Bk)
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            for (int c = 0; c < 3; ++c) {
              int e = (a == b || b == c || a == c) ? 0 : ((b - a + 3) % 3 == 1 ? -1 : 1);
              // eps_bac = -eps_abc; eps_abc = +1 for cyclic (a,b,c)
              if (e == 0 || bv(c) == cd(0)) continue;
              std::vector<Triplet> t;
              fiber_kron(fb, spatial_y(b, lp), sf.G[a], cd(0, 1) * double(e) * bv(c), t);
              spread(trip, k, t);
            }
    }
    if (p.C) {
      // -2i (y . C~(s)) gamma_s
      auto Ck = fourier_coeffs<Eigen::Matrix<cd, 3, 1>>(vec_samples(p.C));
      for (auto& [k, cv] : Ck)
        for (int b = 0; b < 3; ++b) {
          if (cv(b) == cd(0)) continue;
          std::vector<Triplet> t;
          fiber_kron(fb, spatial_y(b, lp), sf.gs, cd(0, -2) * cv(b), t);
          spread(trip, k, t);
        }
    }
    if (p.b0 != 0.0) {
      std::vector<Triplet> t;
      fiber_kron(fb, spatial_identity(), sf.gs, cd(0, -2 * p.b0), t);
      spread(trip, 0, t);
    }
    if (p.q != 0.0) {
      std::vector<Triplet> t;
      fiber_kron(fb, spatial_identity(), sf.Gam, cd(-p.q), t);
      spread(trip, 0, t);
    }
  }
  SpMat A = from_triplets(dim, dim, trip);
  A += SpMat(GS * Ds);
  if (pertM.nonZeros() > 0) A += pertM;
  if (hermiticity_defect(A) > 1e-10) throw NumericalError("assembled circle operator is not Hermitian");
  CircleBuild& out = cb;
  out.op.matrix = hermitian_part(A);
  out.op.dim = dim;
  out.op.kind = "circle";
  out.op.axes = 3;
  out.op.scale = lp;
  out.op.basis.resize(dim);
  for (int mi = 0; mi < nm; ++mi)
    for (int i = 0; i < nf; ++i) out.op.basis[mi * nf + i] = {mi - F, fb.n[i], fb.sec[i]};
  out.op.meta = {{"R", R},         {"ell", ell},          {"L_max", L_max}, {"fourier_max", F},
                 {"theta", fr.theta}, {"eps", fr.eps},    {"b0", pert ? pert->b0 : 0.0},
                 {"nev_hint", std::ceil(2.0 * std::sqrt(R) / kappa * ell / (2 * pi)) + 8}};
  return cb;
}

inline TruncatedOperator build_D_circle(const MatrixLoop& loop, double R, const PerturbationData* pert, int L_max,
                                        int fourier_max, const CliffordRep& rep) {
  return build_D_circle_full(loop, R, pert, L_max, fourier_max, rep).op;
}

// ---------------------------------------------------------------------------
// Separation-of-variables oracle for constant M.

struct CircleLevel {
  double E;
  int n;        // Fourier index
  double Ehat;  // fiber eigenvalue (0 for the kernel branch)
};

// Eigenvalues in [-band, band] of gamma_s d_s + D0 with constant M: +-sqrt(4 pi^2 n^2 / l^2 + Ehat^2)
// for Ehat != 0 and the kernel branch -(2 pi n / l) * g (g = +1 for det M > 0, -1 otherwise).
inline std::vector<CircleLevel> circle_constant_levels(const Mat3& M, double R, double ell, double band) {
  NormalForm nf = normal_form(M);
  OscBasisSpec sp{R, {nf.lambda(0), nf.lambda(1), nf.lambda(2)}, 40};
  int count = 3;
  SpectrumSlice sl;
  while (true) {
    sl = d0_spectrum_closedform(sp, count);
    if (std::abs(sl.eigenvalues.front()) > band && std::abs(sl.eigenvalues.back()) > band) break;
    count += 20;
  }
  std::vector<CircleLevel> out;
  int nmax = static_cast<int>(std::ceil(band * ell / (2 * pi))) + 1;
  for (int n = -nmax; n <= nmax; ++n) {
    double w = 2 * pi * n / ell;
    double g = nf.eps;
    if (std::abs(w) <= band) out.push_back({-g * w, n, 0.0});
  }
  for (size_t i = 0; i < sl.eigenvalues.size(); ++i) {
    double e = sl.eigenvalues[i];
    if (e <= 0) continue;  // each +-Ehat pair gives one +- pair per Fourier mode
    for (int n = -nmax; n <= nmax; ++n) {
      double E = std::sqrt(std::pow(2 * pi * n / ell, 2) + e * e);
      if (E <= band)
        for (int r = 0; r < sl.multiplicities[i]; ++r) {
          out.push_back({E, n, e});
          out.push_back({-E, n, e});
        }
    }
  }
  std::sort(out.begin(), out.end(), [](auto& a, auto& b) { return a.E < b.E; });
  return out;
}

// Smallest total-level bound whose truncation holds every fiber level with |E^| <= band
// (E^2 = 2 sum lambda'_k N_k >= 2 lambda'_min N).
inline int fiber_level_for_band(const Mat3& M, double R, double band) {
  NormalForm nf = normal_form(M);
  double lpmin = std::sqrt(2.0) * R * nf.lambda.minCoeff();
  return std::max(2, static_cast<int>(std::floor(band * band / (2 * lpmin))) + 1);
}

// Max deviation of the computed band spectrum of a constant loop from the closed form;
// +inf when the counts differ.
inline double constant_loop_deviation(const Mat3& M, double R, double ell, double band, const CliffordRep& rep,
                                      int* count = nullptr) {
  int L = fiber_level_for_band(M, R, band);
  auto op = build_D_circle(constant_loop(M, ell), R, nullptr, L, default_fourier_max(band, ell), rep);
  auto ep = band_eigenpairs(op, band);
  auto ref = circle_constant_levels(M, R, ell, band);
  if (count) *count = static_cast<int>(ep.values.size());
  if (static_cast<size_t>(ep.values.size()) != ref.size()) return std::numeric_limits<double>::infinity();
  double d = 0;
  for (size_t i = 0; i < ref.size(); ++i) d = std::max(d, std::abs(ep.values(i) - ref[i].E) - ep.residuals(i));
  return std::max(d, 0.0);
}

// ---------------------------------------------------------------------------
// Kernel sections and holonomy

struct KernelSection {
  double s = 0;
  std::vector<std::array<int, 3>> osc;  // Hermite triples (coordinates y = Vbar^T x, widths lambda_bar)
  MatXcd lab;                           // osc.size() x 8 spinor components, standard C^8 basis
  double eigenvalue = 0;
  double residual = 0;  // || D0(s) phi || against a basis two levels larger
  double gap_ratio = 0; // |E_1| / |E_0| of the two smallest |eigenvalues|
  int L = 0;
};

struct FiberOp {
  SpMat A;
  FiberBasis fb;
  SpinorFrame sf;
};

inline FiberOp fiber_operator_at(const LoopFrame& fr, const MatrixLoop& loop, double R, double s, int L,
                                 const CliffordRep& rep, const SpinorFrame* sf_in = nullptr) {
  FiberOp fo;
  fo.sf = sf_in ? *sf_in : make_spinor_frame(rep, fr.Vbar, double(fr.eps) * fr.Vbar);
  fo.fb = make_fiber_basis(FiberBasis::Trunc::Total, L);
  PolarData p = polar_with_derivative(loop.M(s), loop.dM(s));
  Mat3 Ht = fr.Vbar.transpose() * p.H * fr.Vbar;
  std::array<double, 3> lp;
  for (int k = 0; k < 3; ++k) lp[k] = std::sqrt(2.0) * R * fr.lambda_bar(k);
  Eigen::Matrix3cd C = (std::sqrt(2.0) * R * Ht).cast<cd>();
  std::vector<Triplet> t;
  fiber_dirac_triplets(fo.fb, fo.sf, lp, C, t);
  fo.A = hermitian_part(from_triplets(fo.fb.size(), fo.fb.size(), t));
  return fo;
}

// Kernel vector of the moving-frame fiber operator at s, as coefficients on fb; adaptive in L.
inline KernelSection kernel_section_frame(const LoopFrame& fr, const MatrixLoop& loop, double R, double s,
                                          const CliffordRep& rep, const SpinorFrame& sf, const Mat8& S,
                                          int L0 = 8, int Lmax = 20) {
  KernelSection ks;
  ks.s = s;
  for (int L = L0; L <= Lmax; L += 2) {
    FiberOp fo = fiber_operator_at(fr, loop, R, s, L, rep, &sf);
    const double scale = std::sqrt(R);
    EigenPairs ep = eigs_near(fo.A, 1e-9 * scale, 3);
    std::vector<int> ord = {0, 1, 2};
    std::sort(ord.begin(), ord.end(), [&](int a, int b) { return std::abs(ep.values(a)) < std::abs(ep.values(b)); });
    double e0 = std::abs(ep.values(ord[0])), e1 = std::abs(ep.values(ord[1]));
    VecXcd v = ep.vectors.col(ord[0]);
    // residual against a larger basis
    FiberOp big = fiber_operator_at(fr, loop, R, s, L + 2, rep, &sf);
    VecXcd vb = VecXcd::Zero(big.fb.size());
    for (int i = 0; i < fo.fb.size(); ++i)
      vb(big.fb.index(fo.fb.n[i][0], fo.fb.n[i][1], fo.fb.n[i][2], fo.fb.sec[i])) = v(i);
    double res = (big.A * vb).norm();
    ks.eigenvalue = ep.values(ord[0]);
    ks.residual = res;
    ks.gap_ratio = e0 > 0 ? e1 / e0 : std::numeric_limits<double>::infinity();
    ks.L = L;
    if (ks.gap_ratio < 10) throw NumericalError("kernel_section: kernel not isolated at this truncation");
    // lab representation
    OscSet os = osc_set(L);
    ks.osc = os.n;
    ks.lab = MatXcd::Zero(static_cast<Eigen::Index>(os.n.size()), 8);
    Mat8c SE = S.cast<cd>() * sf.E;
    for (int i = 0; i < fo.fb.size(); ++i) {
      int o = os.idx.at(fo.fb.n[i]);
      ks.lab.row(o) += v(i) * SE.col(fo.fb.sec[i]).transpose();
    }
    if (res < 1e-9 || L + 2 > Lmax) break;
  }
  return ks;
}

inline cd section_overlap(const KernelSection& a, const KernelSection& b) {
  // both use nested osc_set orderings, so the common prefix lines up
  Eigen::Index n = std::min(a.lab.rows(), b.lab.rows());
  cd s = 0;
  for (Eigen::Index i = 0; i < n; ++i) s += a.lab.row(i).conjugate().cwiseProduct(b.lab.row(i)).sum();
  return s;
}

// Kernel sections on s_j = j l / n with phases fixed by parallel transport from s = 0.
inline std::vector<KernelSection> kernel_sections(const MatrixLoop& loop, double R, int n, const CliffordRep& rep) {
  LoopFrame fr = compute_frame(loop, rep);
  SpinorFrame sf = make_spinor_frame(rep, fr.Vbar, double(fr.eps) * fr.Vbar);
  auto lifts = spin_lifts(loop, n, rep);
  std::vector<KernelSection> out;
  for (int j = 0; j < n; ++j) {
    KernelSection ks = kernel_section_frame(fr, loop, R, loop.ell * j / n, rep, sf, lifts[j]);
    if (j == 0) {
      Eigen::Index r, c;
      ks.lab.cwiseAbs().maxCoeff(&r, &c);
      ks.lab *= std::conj(ks.lab(r, c)) / std::abs(ks.lab(r, c));
    } else {
      cd ov = section_overlap(out.back(), ks);
      ks.lab *= std::conj(ov) / std::abs(ov);
    }
    out.push_back(std::move(ks));
  }
  return out;
}

inline Eigen::Matrix<cd, 8, 1> kernel_spinor(const Mat3& M, const CliffordRep& rep, double* gap = nullptr);

// Kernel vector at s. The phase follows parallel transport of the exact kernel spinor from s = 0;
// the fiber vector is aligned so its component on the ground Hermite state is a positive multiple
// of the transported spinor (the kernel Gaussian has positive overlap with that state).
inline KernelSection kernel_section(const MatrixLoop& loop, double R, double s, const CliffordRep& rep, int steps = 256) {
  require(R > 0, "R must be positive");
  require(std::abs(loop.M(s).determinant()) > 0, "kernel_section: singular M(s)");
  LoopFrame fr = compute_frame(loop, rep);
  SpinorFrame sf = make_spinor_frame(rep, fr.Vbar, double(fr.eps) * fr.Vbar);
  Eigen::Matrix<cd, 8, 1> u = kernel_spinor(loop.M(0.0), rep, nullptr);
  {
    Eigen::Index arg;
    u.cwiseAbs().maxCoeff(&arg);
    u *= std::conj(u(arg)) / std::abs(u(arg));
  }
  for (int j = 1; j <= steps; ++j) {
    Eigen::Matrix<cd, 8, 1> v = kernel_spinor(loop.M(s * j / steps), rep, nullptr);
    cd ov = v.dot(u);
    u = v * (ov / std::abs(ov));
  }
  PolarData p = polar_with_derivative(loop.M(s), loop.dM(s));
  Mat8 S = spin_lift(double(p.eps) * p.O, rep);
  KernelSection ks = kernel_section_frame(fr, loop, R, s, rep, sf, S);
  cd ov = 0;
  for (int c = 0; c < 8; ++c) ov += std::conj(u(c)) * ks.lab(0, c);
  if (std::abs(ov) < 1e-3) throw NumericalError("kernel_section: ground-state component vanishes");
  ks.lab *= std::conj(ov) / std::abs(ov);
  return ks;
}

struct BerryResult {
  double alpha = 0;
  double alpha_coarse = 0, alpha_fine = 0;
  double Theta = 0;  // arg of the Wilson loop (fine grid)
  int g = 1;         // -i <phi0, gamma_s phi0>
};

// Kernel spinor of D0(M): the lowest eigenvector of K = i sum M_jk gamma_j rho_k (eigenvalue
// -(lambda_1 + lambda_2 + lambda_3), simple). The kernel of D0(M) is this spinor times the real
// positive Gaussian exp(-(R / sqrt2) x^T H x), H = (M M^T)^(1/2).
inline Eigen::Matrix<cd, 8, 1> kernel_spinor(const Mat3& M, const CliffordRep& rep, double* gap) {
  Mat8c K = Mat8c::Zero();
  for (int j = 0; j < 3; ++j)
    for (int k = 0; k < 3; ++k) K += I1 * M(j, k) * (rep.gamma_c(j) * rep.rho_c(k));
  Eigen::SelfAdjointEigenSolver<Mat8c> es(0.5 * (K + K.adjoint()));
  if (gap) *gap = es.eigenvalues()(1) - es.eigenvalues()(0);
  return es.eigenvectors().col(0);
}

// Wilson loop of the kernel line over s_j = j l / n. Gaussian overlaps are real and positive,
// so only the spinor overlaps contribute to the phase.
inline double wilson_phase(const MatrixLoop& loop, int n, const CliffordRep& rep, int* g_out = nullptr) {
  std::vector<Eigen::Matrix<cd, 8, 1>> u(n);
  for (int j = 0; j < n; ++j) {
    double gap;
    u[j] = kernel_spinor(loop.M(loop.ell * j / n), rep, &gap);
    if (!(gap > 1e-8)) throw NumericalError("kernel spinor not isolated");
  }
  if (g_out) {
    cd v = u[0].dot(rep.gamma_c(3) * u[0]);
    *g_out = v.imag() > 0 ? 1 : -1;
  }
  cd prod = 1;
  for (int j = 0; j < n; ++j) {
    cd ov = u[j].dot(u[(j + 1) % n]);
    if (std::abs(ov) < 0.5) throw NumericalError("berry_alpha: step too coarse for the loop");
    prod *= ov / std::abs(ov);
  }
  return std::arg(prod);
}

// alpha = frac( g (Theta / 2 pi - l b0 / pi) ), Theta = arg prod_j <phi_j, phi_{j+1}>, with a
// Richardson extrapolation over n_steps -> 2 n_steps.
inline BerryResult berry_alpha(const MatrixLoop& loop, double R, const PerturbationData* pert, int n_steps,
                               const CliffordRep& rep) {
  require(n_steps >= 64, "berry_alpha: n_steps must be >= 64");
  require(R > 0, "R must be positive");
  if (pert) validate_pert(*pert, loop.ell, R);
  const double b0 = pert ? pert->b0 : 0.0;
  BerryResult br;
  double t1 = wilson_phase(loop, n_steps, rep, &br.g);
  double t2 = wilson_phase(loop, 2 * n_steps, rep);
  auto a_of = [&](double th) { return frac01(br.g * (th / (2 * pi) - loop.ell * b0 / pi)); };
  br.alpha_coarse = a_of(t1);
  br.alpha_fine = a_of(t2);
  double d = circ_diff(br.alpha_fine, br.alpha_coarse);
  if (std::abs(d) > 1e-4) throw NumericalError("berry_alpha: holonomy not converged under step doubling");
  br.alpha = frac01(br.alpha_fine + d / 3.0);
  br.Theta = t2;
  return br;
}

// ---------------------------------------------------------------------------
// Eigenvalue-lattice fit E = -(alpha + n) 2 pi / l + tau

struct EigenLatticeFit {
  double alpha = 0;
  std::vector<double> eigenvalues;
  std::vector<double> residuals;  // tau
  std::vector<int> n_indices;
  std::vector<double> eig_residuals;
  double tau_bound = 0;  // kappa / sqrt(R)
  double max_tau() const {
    double m = 0;
    for (double t : residuals) m = std::max(m, std::abs(t));
    return m;
  }
};

inline EigenLatticeFit lattice_fit_values(const std::vector<double>& E, double ell, double R) {
  EigenLatticeFit fit;
  fit.eigenvalues = E;
  fit.tau_bound = kappa / std::sqrt(R);
  if (E.empty()) throw NumericalError("low_spectrum_fit: no eigenvalues in band");
  std::vector<double> x(E.size());
  for (size_t i = 0; i < E.size(); ++i) x[i] = -E[i] * ell / (2 * pi);
  cd z = 0;
  for (double xi : x) z += std::exp(cd(0, 2 * pi * xi));
  double a = frac01(std::arg(z) / (2 * pi));
  for (int it = 0; it < 4; ++it) {
    double acc = 0;
    for (double xi : x) acc += circ_diff(xi, a);
    a = frac01(a + acc / double(x.size()));
  }
  fit.alpha = a;
  for (size_t i = 0; i < E.size(); ++i) {
    int n = static_cast<int>(std::lround(x[i] - a));
    fit.n_indices.push_back(n);
    fit.residuals.push_back(E[i] + (a + n) * 2 * pi / ell);
  }
  return fit;
}

inline EigenLatticeFit low_spectrum_fit(const TruncatedOperator& op, double band) {
  const double R = op.meta.at("R"), ell = op.meta.at("ell");
  require(band > 0 && band <= std::sqrt(R) / kappa * (1 + 1e-12), "low_spectrum_fit: band must be <= sqrt(R)/kappa");
  EigenPairs ep = band_eigenpairs(op, band);
  std::vector<double> E(ep.values.data(), ep.values.data() + ep.values.size());
  EigenLatticeFit fit = lattice_fit_values(E, ell, R);
  fit.eig_residuals.assign(ep.residuals.data(), ep.residuals.data() + ep.residuals.size());
  if (fit.max_tau() > (2 * pi / ell) / 4) throw NumericalError("low_spectrum_fit: lattice structure absent");
  return fit;
}

// ---------------------------------------------------------------------------
// tau scaling

// max|tau| against R. The slope is taken at fixed energy: the fit band is the common window
// sqrt(R_min)/kappa for every R (the lattice index range then stays fixed). The per-R full windows
// sqrt(R)/kappa are fitted as well and their max|tau| checked against kappa / sqrt(R).
struct TauScaling {
  std::vector<double> R, max_tau, max_tau_full, alpha;
  std::vector<int> counts;
  double band = 0;
  double slope = std::numeric_limits<double>::quiet_NaN();
  double slope_full = std::numeric_limits<double>::quiet_NaN();
  bool degenerate = false;
  bool bound_ok = true;  // max_tau_full <= kappa / sqrt(R) at every R
};

inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const int n = static_cast<int>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < n; ++i) {
    double a = std::log(x[i]), b = std::log(y[i]);
    sx += a, sy += b, sxx += a * a, sxy += a * b;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline TauScaling tau_scaling_study(const MatrixLoop& loop, const PerturbationData* pert,
                                    const std::vector<double>& R_list, const CliffordRep& rep, int L_max = 4) {
  require(R_list.size() >= 4, "tau_scaling_study: need at least 4 values of R");
  for (size_t i = 1; i < R_list.size(); ++i) require(R_list[i] > R_list[i - 1], "R_list must increase");
  require(R_list.front() > 0, "R must be positive");
  require(R_list.back() / R_list.front() >= 8 - 1e-12, "R_list must span a factor >= 8");
  TauScaling ts;
  ts.band = std::sqrt(R_list.front()) / kappa;
  for (double R : R_list) {
    double full = std::sqrt(R) / kappa;
    auto op = build_D_circle(loop, R, pert, L_max, default_fourier_max(full, loop.ell), rep);
    auto fit = low_spectrum_fit(op, full);
    double mt = 0;
    for (size_t i = 0; i < fit.eigenvalues.size(); ++i)
      if (std::abs(fit.eigenvalues[i]) <= ts.band) mt = std::max(mt, std::abs(fit.residuals[i]));
    ts.R.push_back(R);
    ts.max_tau.push_back(mt);
    ts.max_tau_full.push_back(fit.max_tau());
    ts.alpha.push_back(fit.alpha);
    ts.counts.push_back(static_cast<int>(fit.eigenvalues.size()));
    if (fit.max_tau() > fit.tau_bound) ts.bound_ok = false;
  }
  double mx = *std::max_element(ts.max_tau_full.begin(), ts.max_tau_full.end());
  if (mx < 1e-9) {
    ts.degenerate = true;
    return ts;
  }
  ts.slope_full = loglog_slope(ts.R, ts.max_tau_full);
  if (*std::min_element(ts.max_tau.begin(), ts.max_tau.end()) > 0) ts.slope = loglog_slope(ts.R, ts.max_tau);
  return ts;
}

// ---------------------------------------------------------------------------
// Union of per-component lattices

struct LatticePoint {
  double E;
  int component;
  int n;
};

struct LatticePrediction {
  std::vector<LatticePoint> points;
  int multiplicity_cap = 0;
};

inline LatticePrediction prop48_lattice(const std::vector<std::pair<double, double>>& comps, double band) {
  LatticePrediction p;
  p.multiplicity_cap = static_cast<int>(comps.size());
  for (size_t c = 0; c < comps.size(); ++c) {
    auto [alpha, ell] = comps[c];
    require(alpha >= 0 && alpha < 1, "alpha must lie in [0,1)");
    require(ell > 0, "component length must be positive");
    const double w = 2 * pi / ell;
    int nmax = static_cast<int>(std::ceil(band / w)) + 1;
    for (int n = -nmax - 1; n <= nmax + 1; ++n) {
      double E = -(alpha + n) * w;
      if (std::abs(E) <= band + 1e-12) p.points.push_back({E, static_cast<int>(c), n});
    }
  }
  std::stable_sort(p.points.begin(), p.points.end(), [](auto& a, auto& b) { return a.E < b.E; });
  return p;
}

// Weight of an eigenvector of the circle operator on the kernel bundle: mean over s of
// |<psi0~(s), v(s)>|^2 in the moving frame (fiber kernel at the operator's truncation).
inline double kernel_bundle_weight(const CircleBuild& cb, const MatrixLoop& loop, const VecXcd& v, const CliffordRep& rep,
                                   int ns = 64) {
  const auto& op = cb.op;
  const double R = op.meta.at("R"), ell = op.meta.at("ell"), theta = op.meta.at("theta");
  const int F = static_cast<int>(op.meta.at("fourier_max"));
  const int L = static_cast<int>(op.meta.at("L_max"));
  const int nf = cb.fiber.size(), nm = 2 * F + 1;
  double acc = 0;
  for (int j = 0; j < ns; ++j) {
    double s = ell * j / ns;
    FiberOp fo = fiber_operator_at(cb.frame, loop, R, s, L, rep, &cb.spin);
    EigenPairs ep = eigs_near(fo.A, 1e-9, 1);
    VecXcd k0 = ep.vectors.col(0);
    VecXcd vs = VecXcd::Zero(nf);
    for (int mi = 0; mi < nm; ++mi) {
      cd ph = std::exp(cd(0, 2 * pi * (mi - F + theta) * s / ell));
      vs += ph * v.segment(static_cast<Eigen::Index>(mi) * nf, nf);
    }
    acc += std::norm(k0.dot(vs));
  }
  return acc / ns;
}

}  // namespace sfl
