// T^4 model with the reducible pair (covariantly constant omega): the discrete
// dbar operator on a magnetic T^2, the L+ sector operator family D_t, crossing
// predictions, tracked sector flow and the staged deformation path.
#pragma once

#include "specflow/clifford.hpp"
#include "specflow/flow.hpp"
#include "specflow/linalg.hpp"

#include <map>
#include <mutex>

namespace sfl {

// ---------------------------------------------------------------------------
// Discrete dbar on the degree-d magnetic line bundle over T^2 (lattice n x n).
//
// (D psi)(i,j) = U_x(i,j) psi(i+1,j) - psi(i,j) + i (U_y(i,j) psi(i,j+1) - psi(i,j))
// with links U = exp(-i int A): U_y(i,j) = exp(-i phi i), U_x(n-1,j) = exp(i phi n j),
// other U_x = 1 and phi = 2 pi d / n^2. Every plaquette holonomy is exp(-i phi),
// i.e. flux phi per plaquette and total flux 2 pi d.

struct DbarOperator {
  int d = 0;
  int n = 0;
  SpMat D;       // the dbar operator
  SpMat Sx, Sy;  // covariant forward differences U psi(x + e) - psi(x)
  double flux_defect = 0;  // max plaquette phase error and total-flux error
};

inline int dbar_site(int n, int i, int j) { return ((i % n + n) % n) * n + ((j % n + n) % n); }

inline DbarOperator build_dbar(int d, int n) {
  require(n >= 2, "lattice_n must be >= 2");
  DbarOperator op;
  op.d = d;
  op.n = n;
  const int N = n * n;
  const double phi = 2.0 * pi * d / double(N);
  auto Ux = [&](int i, int j) { return i == n - 1 ? std::exp(I1 * phi * double(n) * double(j)) : cd(1.0); };
  auto Uy = [&](int i, int) { return std::exp(-I1 * phi * double(i)); };
  std::vector<Triplet> tx, ty;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const int r = dbar_site(n, i, j);
      tx.emplace_back(r, dbar_site(n, i + 1, j), Ux(i, j));
      tx.emplace_back(r, r, cd(-1.0));
      ty.emplace_back(r, dbar_site(n, i, j + 1), Uy(i, j));
      ty.emplace_back(r, r, cd(-1.0));
    }
  op.Sx.resize(N, N);
  op.Sx.setFromTriplets(tx.begin(), tx.end());
  op.Sy.resize(N, N);
  op.Sy.setFromTriplets(ty.begin(), ty.end());
  op.D = op.Sx + I1 * op.Sy;
  op.D.makeCompressed();
  // flux quantization: every plaquette holonomy equals exp(-i phi), total phi n^2 = 2 pi d
  double defect = std::abs(phi * double(N) - 2.0 * pi * d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      cd hol = Ux(i, j) * Uy((i + 1) % n, j) * std::conj(Ux(i, (j + 1) % n)) * std::conj(Uy(i, j));
      defect = std::max(defect, std::abs(hol - std::exp(-I1 * phi)));
    }
  op.flux_defect = defect;
  return op;
}

struct DbarResult {
  int dim = 0;            // kernel dimension after the smoothness filter
  int raw_kernel = 0;     // numerical kernel of the lattice operator (includes doublers)
  double sigma_max = 0;   // largest singular value (power iteration)
  double threshold = 0;   // 1e-6 sigma_max
  double gap_ratio = 0;   // first non-kernel singular value / threshold
  std::vector<double> singular_values;  // smallest ones, ascending
  std::vector<double> energies;         // Dirichlet energy ratios of the kernel modes
  double flux_defect = 0;
  double residual = 0;    // max ||D v|| over the kernel vectors
};

inline DbarResult dbar_kernel(int d, int lattice_n) {
  require(lattice_n >= 8 * std::abs(d) + 8, "lattice_n must be >= 8|d| + 8");
  DbarOperator op = build_dbar(d, lattice_n);
  if (op.flux_defect > 1e-10) throw NumericalError("flux quantization failure: defect " + std::to_string(op.flux_defect));
  DbarResult res;
  res.flux_defect = op.flux_defect;
  SpMat H = SpMat(op.D.adjoint()) * op.D;
  H.makeCompressed();
  const int N = static_cast<int>(H.rows());
  // largest singular value by power iteration on D^dag D
  VecXcd v(N);
  for (int i = 0; i < N; ++i) v(i) = cd(std::sin(0.37 * i + 0.1), std::cos(0.11 * i));
  v.normalize();
  double lam = 0;
  for (int it = 0; it < 300; ++it) {
    VecXcd w = H * v;
    double nl = w.norm();
    v = w / nl;
    if (std::abs(nl - lam) <= 1e-12 * nl) {
      lam = nl;
      break;
    }
    lam = nl;
  }
  res.sigma_max = std::sqrt(lam);
  res.threshold = 1e-6 * res.sigma_max;
  int nev = std::abs(d) + 6;
  EigenPairs ep;
  while (true) {
    nev = std::min(nev, N - 2);
    ep = eigs_near(H, -1e-4 * lam, nev);
    int k = 0;
    for (int j = 0; j < ep.values.size(); ++j)
      if (std::sqrt(std::max(ep.values(j), 0.0)) < res.threshold) ++k;
    if (k < nev || nev >= N - 2) break;
    nev *= 2;
  }
  int k = 0;
  for (int j = 0; j < ep.values.size(); ++j) {
    double s = std::sqrt(std::max(ep.values(j), 0.0));
    res.singular_values.push_back(s);
    if (s < res.threshold) ++k;
  }
  res.raw_kernel = k;
  if (k < static_cast<int>(res.singular_values.size())) {
    res.gap_ratio = res.singular_values[k] / res.threshold;
    if (res.gap_ratio < 10.0) throw NumericalError("dbar singular-value gap below 10x the kernel threshold");
  }
  if (k == 0) return res;
  MatXcd K = ep.vectors.leftCols(k);
  for (int j = 0; j < k; ++j) res.residual = std::max(res.residual, (op.D * K.col(j)).norm());
  // Dirichlet energy ratio on the kernel subspace separates smooth sections from lattice doublers
  MatXcd SxK = op.Sx * K, SyK = op.Sy * K;
  MatXcd Em = SxK.adjoint() * SxK + SyK.adjoint() * SyK;
  MatXcd G = K.adjoint() * K;
  Eigen::GeneralizedSelfAdjointEigenSolver<MatXcd> ges(0.5 * (Em + Em.adjoint()), 0.5 * (G + G.adjoint()));
  for (int j = 0; j < k; ++j) {
    double e = ges.eigenvalues()(j);
    res.energies.push_back(e);
    if (e < 0.5) ++res.dim;
  }
  return res;
}

inline int dbar_kernel_dim(int d, int lattice_n) { return dbar_kernel(d, lattice_n).dim; }

// Memoized count for operator assembly (generators are called at every grid point).
inline int dbar_kernel_dim_cached(int d, int lattice_n) {
  static std::mutex mu;
  static std::map<std::pair<int, int>, int> cache;
  {
    std::lock_guard<std::mutex> lk(mu);
    auto it = cache.find({d, lattice_n});
    if (it != cache.end()) return it->second;
  }
  int v = dbar_kernel_dim(d, lattice_n);
  std::lock_guard<std::mutex> lk(mu);
  cache[{d, lattice_n}] = v;
  return v;
}

// ---------------------------------------------------------------------------
// Model parameters.

struct TorusModelSpec {
  int q = 1;
  double m = 1.0;
  double r = pi;        // r m / pi = q
  int lattice_n = 0;    // grid points per T^2 axis for the dbar solve
  int landau_max = 3;   // Landau index N <= landau_max in the L+ sector
  int fourier_max = 1;  // |k_3|, |k_4| <= fourier_max
};

inline TorusModelSpec torus_spec(int q, double m, int lattice_n = 0) {
  require(m > 0, "m must be positive");
  TorusModelSpec s;
  s.q = q;
  s.m = m;
  s.r = pi * q / m;
  s.lattice_n = lattice_n > 0 ? lattice_n : 16 * std::abs(q) + 8;
  return s;
}

inline void validate_torus_spec(const TorusModelSpec& s) {
  require(s.m > 0, "m must be positive");
  require(s.r >= 0, "r must be nonnegative");
  require(std::abs(s.r * s.m / pi - s.q) <= 1e-12 * (1.0 + std::abs(s.q)), "r m / pi must equal q");
  require(s.lattice_n >= 8 * std::abs(s.q) + 8, "lattice_n must be >= 8|q| + 8");
  require(s.landau_max >= 1 && s.fourier_max >= 0, "landau_max >= 1 and fourier_max >= 0 required");
}

// Degree of L+ (= L_q^2) and the lattice size used for its dbar count.
inline int lplus_degree(const TorusModelSpec& s) { return 2 * s.q; }
inline int lplus_lattice(const TorusModelSpec& s) { return std::max(s.lattice_n, 8 * std::abs(lplus_degree(s)) + 8); }

// ---------------------------------------------------------------------------
// L+ sector operator:
//   D = gamma_1 nabla_1 + gamma_2 nabla_2 + gamma_3 nabla_3 + gamma_4 nabla_4
//       + alg_scale (-sqrt2 r i rho_3) - t Gamma / 2 + shift,
// with nabla_1 = (A - A^dag)/2, nabla_2 = (A + A^dag)/(2i), A = field_scale sqrt(4 pi d) a
// on the Landau levels of the degree-d bundle (each of degeneracy d), and
// nabla_{3,4} = 2 pi i k_{3,4} on the constant-connection Fourier modes.
// With J = i gamma_1 gamma_2, N = n + (1 - J)/2 is conserved, so the basis keeps
// whole N-blocks (N <= landau_max). The L0 sector is flat in all four directions.

enum class TorusSector { Plus, Zero };

struct SectorParams {
  double t = 0;
  double alg_scale = 1.0;
  double field_scale = 1.0;
  double shift = 0.0;
};

struct SectorParts {
  SpMat kinetic;    // gamma_alpha nabla_alpha
  SpMat algebraic;  // omega term - t Gamma / 2 (+ shift)
  SpMat full;
  int degeneracy = 0;
};

namespace detail {

struct JFrame {
  Mat8c E;                 // columns: J-eigenbasis
  std::array<int, 8> nshift;  // n = N - nshift[c]
};

inline JFrame j_frame(const CliffordRep& rep) {
  Mat8c J = I1 * (rep.gamma_c(0) * rep.gamma_c(1));
  Eigen::SelfAdjointEigenSolver<Mat8c> es(J);
  JFrame f;
  f.E = es.eigenvectors();
  Mat8c lower = rep.gamma_c(0) - I1 * rep.gamma_c(1);  // accompanies A (lowers n)
  // lower maps the J-eigenspace with eigenvalue j to -j; the source sector keeps n = N
  Eigen::Matrix<cd, 8, 1> probe;
  double src_plus = 0, src_minus = 0;
  for (int c = 0; c < 8; ++c) {
    probe = f.E.col(c);
    double nrm = (lower * probe).norm();
    (es.eigenvalues()(c) > 0 ? src_plus : src_minus) += nrm;
  }
  const double src = src_plus > src_minus ? 1.0 : -1.0;
  for (int c = 0; c < 8; ++c) f.nshift[c] = es.eigenvalues()(c) * src > 0 ? 0 : 1;
  return f;
}

}  // namespace detail

inline SectorParts torus_sector_parts(const TorusModelSpec& s, TorusSector sector, const SectorParams& p) {
  validate_torus_spec(s);
  const CliffordRep rep = build_clifford_rep();
  const Mat8c Gam = rep.Gamma_c();
  const Mat8c irho3 = I1 * rep.rho_c(2);
  const int F = s.fourier_max;
  std::vector<std::array<int, 2>> ks;
  for (int a = -F; a <= F; ++a)
    for (int b = -F; b <= F; ++b) ks.push_back({a, b});
  std::vector<Triplet> tk, ta;
  SectorParts out;
  const int d = lplus_degree(s);
  if (sector == TorusSector::Plus && d != 0) {
    require(d > 0, "the L+ sector operator needs q >= 0");
    const int deg = dbar_kernel_dim_cached(d, lplus_lattice(s));
    if (deg != d) throw NumericalError("dbar count " + std::to_string(deg) + " differs from the degree " + std::to_string(d));
    out.degeneracy = deg;
    detail::JFrame jf = detail::j_frame(rep);
    const Mat8c& E = jf.E;
    const Mat8c Lo = E.adjoint() * (0.5 * (rep.gamma_c(0) - I1 * rep.gamma_c(1))) * E;
    const Mat8c Ra = E.adjoint() * (-0.5 * (rep.gamma_c(0) + I1 * rep.gamma_c(1))) * E;
    const Mat8c G3 = E.adjoint() * rep.gamma_c(2) * E, G4 = E.adjoint() * rep.gamma_c(3) * E;
    const Mat8c Alg = E.adjoint() * (p.alg_scale * (-std::sqrt(2.0) * s.r) * irho3 - 0.5 * p.t * Gam) * E;
    const double wA = p.field_scale * std::sqrt(4.0 * pi * d);
    // states within one (k, copy) block
    struct St {
      int N, c, n;
    };
    std::vector<St> st;
    for (int N = 0; N <= s.landau_max; ++N)
      for (int c = 0; c < 8; ++c) {
        int n = N - jf.nshift[c];
        if (n >= 0) st.push_back({N, c, n});
      }
    const int bs = static_cast<int>(st.size());
    int off = 0;
    for (auto& k : ks) {
      for (int g = 0; g < deg; ++g, off += bs) {
        for (int a = 0; a < bs; ++a)
          for (int b = 0; b < bs; ++b) {
            const St &x = st[a], &y = st[b];
            cd kin = 0, alg = 0;
            if (x.n == y.n) {
              kin += 2.0 * pi * I1 * (double(k[0]) * G3(x.c, y.c) + double(k[1]) * G4(x.c, y.c));
              alg += Alg(x.c, y.c);
              if (a == b) alg += p.shift;
            }
            if (x.n == y.n - 1) kin += wA * std::sqrt(double(y.n)) * Lo(x.c, y.c);
            if (x.n == y.n + 1) kin += wA * std::sqrt(double(y.n + 1)) * Ra(x.c, y.c);
            if (std::abs(kin) > 1e-14) tk.emplace_back(off + a, off + b, kin);
            if (std::abs(alg) > 1e-14) ta.emplace_back(off + a, off + b, alg);
          }
      }
    }
    out.kinetic = from_triplets(off, off, tk);
    out.algebraic = from_triplets(off, off, ta);
  } else {
    // flat sector: Fourier modes in all four directions, omega term absent on L0
    const bool plus = sector == TorusSector::Plus;
    out.degeneracy = 1;
    const Mat8c Alg = (plus ? p.alg_scale * (-std::sqrt(2.0) * s.r) : 0.0) * irho3 - 0.5 * p.t * Gam;
    int off = 0;
    for (auto& k12 : ks)
      for (auto& k34 : ks) {
        const int kk[4] = {k12[0], k12[1], k34[0], k34[1]};
        Mat8c Kin = Mat8c::Zero();
        for (int a = 0; a < 4; ++a) Kin += 2.0 * pi * I1 * double(kk[a]) * rep.gamma_c(a);
        for (int a = 0; a < 8; ++a)
          for (int b = 0; b < 8; ++b) {
            if (std::abs(Kin(a, b)) > 1e-14) tk.emplace_back(off + a, off + b, Kin(a, b));
            cd al = Alg(a, b) + (a == b ? cd(p.shift) : cd(0));
            if (std::abs(al) > 1e-14) ta.emplace_back(off + a, off + b, al);
          }
        off += 8;
      }
    out.kinetic = from_triplets(off, off, tk);
    out.algebraic = from_triplets(off, off, ta);
  }
  out.full = out.kinetic + out.algebraic;
  return out;
}

inline TruncatedOperator torus_sector_operator(const TorusModelSpec& s, TorusSector sector, const SectorParams& p) {
  SectorParts parts = torus_sector_parts(s, sector, p);
  TruncatedOperator op;
  op.dim = static_cast<int>(parts.full.rows());
  op.matrix = parts.full;
  op.kind = "torus";
  op.axes = 0;
  op.meta["q"] = s.q;
  op.meta["t"] = p.t;
  op.meta["degeneracy"] = parts.degeneracy;
  return op;
}

// Entrywise defect of D^2 - K^2 - Alg^2 (zero when the cross terms anticommute away).
inline double sum_of_squares_defect(const TorusModelSpec& s, TorusSector sector, double t) {
  SectorParams p;
  p.t = t;
  SectorParts parts = torus_sector_parts(s, sector, p);
  SpMat R = SpMat(parts.full * parts.full) - SpMat(parts.kinetic * parts.kinetic) - SpMat(parts.algebraic * parts.algebraic);
  double m = 0;
  for (int k = 0; k < R.outerSize(); ++k)
    for (SpMat::InnerIterator it(R, k); it; ++it) m = std::max(m, std::abs(it.value()));
  return m;
}

// ---------------------------------------------------------------------------
// Crossing predictions and the tracked check.

struct CrossingPrediction {
  double t_cross = 0;
  int up = 0, down = 0, net = 0;
  int dbar_dim = 0;      // dbar kernel dimension for degree 2q
  int sector_up = 0, sector_down = 0;  // L+ alone; L- mirrors it
  std::string note;
};

inline CrossingPrediction crossing_predictions(const TorusModelSpec& s) {
  validate_torus_spec(s);
  CrossingPrediction cp;
  if (s.q == 0) {
    cp.note = "flat sector: omega = 0, no crossing";
    return cp;
  }
  require(s.q > 0, "crossing predictions need q > 0");
  cp.t_cross = 2.0 * std::sqrt(2.0) * s.r;
  cp.dbar_dim = dbar_kernel_dim(lplus_degree(s), lplus_lattice(s));
  cp.sector_up = cp.sector_down = cp.dbar_dim;
  cp.up = cp.down = 2 * cp.dbar_dim;
  cp.net = cp.up - cp.down;
  cp.note = "L+ holomorphic sector plus its L- mirror";
  return cp;
}

inline OperatorFamily torus_t_family(const TorusModelSpec& s, TorusSector sector, double ta, double tb, int n_grid) {
  validate_torus_spec(s);
  require(tb > ta, "window must be increasing");
  OperatorFamily f;
  f.generator = [s, sector](double t) {
    SectorParams p;
    p.t = t;
    return torus_sector_operator(s, sector, p);
  };
  f.t_grid = linspace(ta, tb, n_grid);
  f.description = sector == TorusSector::Plus ? "D_t on L+" : "D_t on L0";
  f.lipschitz = 0.5;
  return f;
}

struct SectorFlowCheck {
  FlowResult flow;
  CrossingPrediction prediction;
  bool window_contains_cross = false;
  bool clustered = true;       // every crossing within one grid step of t_cross
  bool counts_match = false;   // L+ up/down doubled by the mirror equal the predicted totals
};

inline SectorFlowCheck sector_flow_check(const TorusModelSpec& s, double ta, double tb, int n_grid = 41, double band = 1.0) {
  SectorFlowCheck c;
  c.prediction = crossing_predictions(s);
  c.flow = spectral_flow(torus_t_family(s, TorusSector::Plus, ta, tb, n_grid), band);
  const double step = (tb - ta) / double(n_grid - 1);
  c.window_contains_cross = s.q > 0 && c.prediction.t_cross > ta && c.prediction.t_cross < tb;
  for (auto& x : c.flow.crossings)
    if (std::abs(x.t - c.prediction.t_cross) > step) c.clustered = false;
  if (c.window_contains_cross)
    c.counts_match = 2 * c.flow.up == c.prediction.up && 2 * c.flow.down == c.prediction.down;
  else
    c.counts_match = c.flow.up == 0 && c.flow.down == 0;
  return c;
}

// Staged path on the L+ sector:
//   1: s -> D_{t=m} - (1 - s) m / 2
//   2: t from m to T
//   3: omega term scaled by (1 - s) at t = T
//   4: connection deformed to the flat one (Landau field scaled by 1 - s)
//   5: D_eps with eps from T down to eps_end
inline std::vector<OperatorFamily> torus_stages(const TorusModelSpec& s, double T, double eps_end, int n_grid = 41) {
  validate_torus_spec(s);
  require(T > s.m && eps_end > 0 && eps_end < T, "stages need m < T and 0 < eps_end < T");
  std::vector<OperatorFamily> st(5);
  const double m = s.m;
  auto gen = [s](SectorParams p) { return torus_sector_operator(s, TorusSector::Plus, p); };
  st[0].generator = [gen, m](double u) {
    SectorParams p;
    p.t = m;
    p.shift = -0.5 * (1.0 - u) * m;
    return gen(p);
  };
  st[0].t_grid = linspace(0, 1, n_grid);
  st[0].description = "stage 1: constant shift removed";
  st[1].generator = [gen](double t) {
    SectorParams p;
    p.t = t;
    return gen(p);
  };
  st[1].t_grid = linspace(m, T, n_grid);
  st[1].description = "stage 2: t increased to T";
  st[2].generator = [gen, T](double u) {
    SectorParams p;
    p.t = T;
    p.alg_scale = 1.0 - u;
    return gen(p);
  };
  st[2].t_grid = linspace(0, 1, n_grid);
  st[2].description = "stage 3: omega term switched off";
  st[3].generator = [gen, T](double u) {
    SectorParams p;
    p.t = T;
    p.alg_scale = 0.0;
    p.field_scale = 1.0 - u;
    return gen(p);
  };
  st[3].t_grid = linspace(0, 1, n_grid);
  st[3].description = "stage 4: connection moved to the flat one";
  st[4].generator = [gen, T, eps_end](double u) {
    SectorParams p;
    p.t = T + u * (eps_end - T);
    p.alg_scale = 0.0;
    p.field_scale = 0.0;
    return gen(p);
  };
  st[4].t_grid = linspace(0, 1, n_grid);
  st[4].description = "stage 5: eps decreased";
  return st;
}

}  // namespace sfl
