// Spectral flow along one-parameter families of truncated Hermitian operators:
// eigenvalue tracking by eigenvector overlap, signed crossing counts with
// multiplicities, endpoint-kernel ambiguity and staged paths.
#pragma once

#include "specflow/linalg.hpp"
#include "specflow/oscillator.hpp"

#include <array>
#include <functional>
#include <future>
#include <map>
#include <string>
#include <thread>
#include <vector>

namespace sfl {

struct OperatorFamily {
  std::function<TruncatedOperator(double)> generator;
  std::vector<double> t_grid;
  std::string description;
  double lipschitz = 0;  // bound on the max entry change per unit t (0 disables the check)
};

struct Crossing {
  double t = 0;
  int dir = 0;   // +1 from below, -1 from above
  int mult = 1;
  double slope = 0;
};

struct FlowResult {
  std::vector<Crossing> crossings;
  int net_flow = 0;
  int up = 0, down = 0;
  std::array<int, 2> endpoint_ambiguity{0, 0};
  std::string description;
  int grid_points = 0;
  int refinements = 0;
  double max_residual = 0;  // largest eigen-residual over the tracked snapshots
};

struct Branch {
  std::vector<double> t, E;
};

struct TrackResult {
  std::vector<Branch> branches;
  std::vector<double> grid;  // final (possibly refined) grid
  std::vector<double> ktol;  // kernel tolerance at each grid point
  int refinements = 0;
  double max_residual = 0;
};

inline constexpr double flow_kernel_rel_tol = 1e-8;
inline constexpr double flow_slope_tol = 1e-6;
inline constexpr int flow_max_refinements = 6;

// Max absolute row sum.
inline double op_norm_inf(const SpMat& A) {
  Eigen::SparseMatrix<cd, Eigen::RowMajor> Ar = A;
  double m = 0;
  for (int r = 0; r < Ar.outerSize(); ++r) {
    double s = 0;
    for (Eigen::SparseMatrix<cd, Eigen::RowMajor>::InnerIterator it(Ar, r); it; ++it) s += std::abs(it.value());
    m = std::max(m, s);
  }
  return m;
}

inline double max_entry_diff(const SpMat& A, const SpMat& B) {
  SpMat D = A - B;
  double m = 0;
  for (int k = 0; k < D.outerSize(); ++k)
    for (SpMat::InnerIterator it(D, k); it; ++it) m = std::max(m, std::abs(it.value()));
  return m;
}

namespace detail {

struct Snapshot {
  double t = 0;
  SpMat A;  // shifted operator A(t) - level
  VecXd E;
  MatXcd V;
  double ktol = 0;
  double resid = 0;
  int kernel = 0;  // eigenvalues within ktol of the level
};

// Eigenpairs within |E - level| <= window.
inline Snapshot snapshot(const OperatorFamily& fam, double t, double level, double window) {
  TruncatedOperator op = fam.generator(t);
  Snapshot s;
  s.t = t;
  s.ktol = flow_kernel_rel_tol * std::max(op_norm_inf(op.matrix), 1e-300);
  SpMat A = op.matrix;
  if (level != 0.0) {
    SpMat Id(A.rows(), A.cols());
    Id.setIdentity();
    A -= cd(level) * Id;
  }
  auto comps = connected_components(A);
  size_t cmax = 0;
  for (auto& c : comps) cmax = std::max(cmax, c.size());
  EigenPairs ep;
  if (cmax <= 64 || op.dim <= 700) {
    ep = component_eigh(A, window);
    std::vector<int> keep;
    for (int j = 0; j < ep.values.size(); ++j)
      if (std::abs(ep.values(j)) <= window) keep.push_back(j);
    VecXd v(static_cast<Eigen::Index>(keep.size()));
    for (size_t j = 0; j < keep.size(); ++j) v(static_cast<Eigen::Index>(j)) = ep.values(keep[j]);
    ep.values = v;
  } else {
    TruncatedOperator shifted = op;
    shifted.matrix = A;
    ep = band_eigenpairs(shifted, window);
  }
  s.E = ep.values;
  s.V = ep.vectors;
  s.A = A;
  for (int j = 0; j < s.V.cols(); ++j) {
    double r = (A * s.V.col(j) - s.E(j) * s.V.col(j)).norm();
    s.resid = std::max(s.resid, r);
    if (std::abs(s.E(j)) <= s.ktol) ++s.kernel;
  }
  return s;
}

// Rotate each degenerate cluster of b so it aligns with the predecessor vectors
// (Lowdin / polar alignment), making individual overlaps meaningful.
inline void align_clusters(const Snapshot& a, Snapshot& b) {
  const int nb = static_cast<int>(b.E.size());
  int i = 0;
  while (i < nb) {
    int j = i + 1;
    while (j < nb && b.E(j) - b.E(j - 1) <= cluster_tol(b.E(j))) ++j;
    const int m = j - i;
    if (m >= 2 && a.V.cols() >= m) {
      MatXcd M = b.V.middleCols(i, m).adjoint() * a.V;  // m x na
      std::vector<int> idx(a.V.cols());
      std::iota(idx.begin(), idx.end(), 0);
      std::stable_sort(idx.begin(), idx.end(), [&](int x, int y) { return M.col(x).norm() > M.col(y).norm(); });
      MatXcd Ms(m, m);
      for (int c = 0; c < m; ++c) Ms.col(c) = M.col(idx[c]);
      Eigen::JacobiSVD<MatXcd> svd(Ms, Eigen::ComputeFullU | Eigen::ComputeFullV);
      MatXcd X = svd.matrixU() * svd.matrixV().adjoint();
      MatXcd rotated = b.V.middleCols(i, m) * X;
      b.V.middleCols(i, m) = rotated;
    }
    i = j;
  }
}

// Match columns of b to columns of a (b_to_a, -1 for a new branch). Returns
// false when an interior a-branch has no partner with overlap >= 0.5 or an
// interior b-branch appears from nowhere.
inline bool match(const Snapshot& a, Snapshot& b, double band, std::vector<int>& b_to_a) {
  align_clusters(a, b);
  const int na = static_cast<int>(a.E.size()), nb = static_cast<int>(b.E.size());
  b_to_a.assign(nb, -1);
  std::vector<int> a_to_b(na, -1);
  if (na == 0 || nb == 0) {
    for (int i = 0; i < na; ++i)
      if (std::abs(a.E(i)) <= band) return false;
    for (int j = 0; j < nb; ++j)
      if (std::abs(b.E(j)) < 0.75 * band) return false;
    return true;
  }
  MatXd O = (a.V.adjoint() * b.V).cwiseAbs2();
  std::vector<std::tuple<double, int, int>> cand;
  for (int i = 0; i < na; ++i)
    for (int j = 0; j < nb; ++j)
      if (O(i, j) >= 0.5) cand.emplace_back(O(i, j), i, j);
  std::sort(cand.begin(), cand.end(), [](auto& x, auto& y) { return std::get<0>(x) > std::get<0>(y); });
  for (auto& [o, i, j] : cand) {
    if (a_to_b[i] >= 0 || b_to_a[j] >= 0) continue;
    a_to_b[i] = j;
    b_to_a[j] = i;
  }
  for (int i = 0; i < na; ++i)
    if (a_to_b[i] < 0 && std::abs(a.E(i)) <= band) return false;
  for (int j = 0; j < nb; ++j)
    if (b_to_a[j] < 0 && std::abs(b.E(j)) < 0.75 * band) return false;
  return true;
}

}  // namespace detail

inline void validate_family(const OperatorFamily& fam) {
  require(static_cast<bool>(fam.generator), "family generator is empty");
  require(fam.t_grid.size() >= 2, "family grid needs at least two points");
  for (size_t i = 1; i < fam.t_grid.size(); ++i) require(fam.t_grid[i] > fam.t_grid[i - 1], "family grid must be increasing");
}

// Tracks eigenvalue branches of (A(t) - level) inside [-band, band] on the grid,
// bisecting intervals where overlap matching fails. Eigenvalues are reported
// relative to the level.
inline TrackResult track_relative(const OperatorFamily& fam, double band, double level = 0.0,
                                  const std::vector<double>* grid_override = nullptr) {
  validate_family(fam);
  require(band > 0, "band must be positive");
  const double window = 1.5 * band;
  std::vector<double> grid = grid_override ? *grid_override : fam.t_grid;
  // diagonalize the grid points concurrently, in batches of the hardware width
  std::vector<detail::Snapshot> snaps(grid.size());
  {
    const size_t width = std::max(1u, std::thread::hardware_concurrency());
    for (size_t b0 = 0; b0 < grid.size(); b0 += width) {
      std::vector<std::future<detail::Snapshot>> fut;
      for (size_t i = b0; i < std::min(grid.size(), b0 + width); ++i)
        fut.push_back(std::async(std::launch::async, detail::snapshot, std::cref(fam), grid[i], level, window));
      for (size_t i = b0; i < std::min(grid.size(), b0 + width); ++i) snaps[i] = fut[i - b0].get();
    }
  }
  int dim = -1;
  for (auto& s : snaps) {
    if (dim < 0) dim = static_cast<int>(s.V.rows());
    if (s.V.cols() > 0 && static_cast<int>(s.V.rows()) != dim) throw ValidationError("family operators change dimension");
  }
  if (fam.lipschitz > 0) {
    for (size_t i = 1; i < grid.size(); ++i) {
      double d = max_entry_diff(fam.generator(grid[i]).matrix, fam.generator(grid[i - 1]).matrix);
      if (d > fam.lipschitz * (grid[i] - grid[i - 1]) * (1 + 1e-9) + 1e-14)
        throw ValidationError("family violates its Lipschitz bound between t = " + std::to_string(grid[i - 1]) +
                              " and " + std::to_string(grid[i]));
    }
  }
  TrackResult tr;
  std::vector<int> col_branch;  // branch id of each column of the current snapshot
  auto start = [&](const detail::Snapshot& s) {
    col_branch.assign(s.E.size(), -1);
    for (int j = 0; j < s.E.size(); ++j) {
      col_branch[j] = static_cast<int>(tr.branches.size());
      tr.branches.push_back({{s.t}, {s.E(j)}});
    }
  };
  start(snaps[0]);
  tr.grid.push_back(snaps[0].t);
  tr.ktol.push_back(snaps[0].ktol);
  tr.max_residual = snaps[0].resid;
  std::function<void(detail::Snapshot&, detail::Snapshot&, int)> advance = [&](detail::Snapshot& a, detail::Snapshot& b,
                                                                               int depth) {
    std::vector<int> b_to_a;
    // Weyl: eigenvalues move by at most ||A(b) - A(a)||, kept below half the band
    const bool too_far = op_norm_inf(b.A - a.A) > 0.5 * band;
    if (too_far || !detail::match(a, b, band, b_to_a)) {
      if (depth >= 24 || (!too_far && depth >= 12))
        throw NumericalError("eigenvector matching failed near t = " + std::to_string(a.t) + " (best overlap < 0.5)");
      detail::Snapshot mid = detail::snapshot(fam, 0.5 * (a.t + b.t), level, window);
      ++tr.refinements;
      advance(a, mid, depth + 1);
      advance(mid, b, depth + 1);
      return;
    }
    std::vector<int> nb(b.E.size(), -1);
    for (int j = 0; j < b.E.size(); ++j) {
      if (b_to_a[j] >= 0 && col_branch[b_to_a[j]] >= 0) {
        nb[j] = col_branch[b_to_a[j]];
        tr.branches[nb[j]].t.push_back(b.t);
        tr.branches[nb[j]].E.push_back(b.E(j));
      } else {
        nb[j] = static_cast<int>(tr.branches.size());
        tr.branches.push_back({{b.t}, {b.E(j)}});
      }
    }
    col_branch = nb;
    tr.grid.push_back(b.t);
    tr.ktol.push_back(b.ktol);
    tr.max_residual = std::max(tr.max_residual, b.resid);
    a = b;
  };
  detail::Snapshot cur = snaps[0];
  for (size_t i = 1; i < snaps.size(); ++i) {
    detail::Snapshot nxt = snaps[i];
    advance(cur, nxt, 0);
    cur = nxt;
  }
  return tr;
}

// Branches inside [-band, band] (absolute eigenvalues).
inline TrackResult track_eigenvalues(const OperatorFamily& fam, double band) {
  TrackResult tr = track_relative(fam, band, 0.0);
  std::vector<Branch> keep;
  for (auto& b : tr.branches) {
    Branch nb;
    for (size_t k = 0; k < b.t.size(); ++k)
      if (std::abs(b.E[k]) <= band) nb.t.push_back(b.t[k]), nb.E.push_back(b.E[k]);
    if (!nb.t.empty()) keep.push_back(std::move(nb));
  }
  tr.branches = std::move(keep);
  return tr;
}

inline FlowResult spectral_flow(const OperatorFamily& fam, double band, double level = 0.0) {
  validate_family(fam);
  require(band > 0, "band must be positive");
  std::vector<double> grid = fam.t_grid;
  const double t0 = grid.front(), t1 = grid.back();
  for (int round = 0;; ++round) {
    TrackResult tr = track_relative(fam, band, level, &grid);
    std::map<double, double> ktol;
    for (size_t i = 0; i < tr.grid.size(); ++i) ktol[tr.grid[i]] = tr.ktol[i];
    std::vector<Crossing> raw;
    std::vector<std::pair<double, double>> bad;  // intervals needing refinement
    for (auto& b : tr.branches) {
      int last = -1;  // index of last point with nonzero sign
      auto sgn = [&](size_t k) {
        double e = b.E[k];
        if (std::abs(e) <= ktol[b.t[k]]) return 0;
        return e > 0 ? 1 : -1;
      };
      for (size_t k = 0; k < b.t.size(); ++k) {
        int s = sgn(k);
        if (s == 0) {
          bool interior = b.t[k] > t0 && b.t[k] < t1;
          if (interior && k > 0 && k + 1 < b.t.size()) {
            double sl = std::min(std::abs((b.E[k] - b.E[k - 1]) / (b.t[k] - b.t[k - 1])),
                                 std::abs((b.E[k + 1] - b.E[k]) / (b.t[k + 1] - b.t[k])));
            // a touch (same sign on both sides) is non-transversal as well
            size_t nx = k + 1;
            while (nx < b.t.size() && sgn(nx) == 0) ++nx;
            bool touch = last >= 0 && nx < b.t.size() && sgn(last) == sgn(nx);
            if (sl < flow_slope_tol || touch) bad.emplace_back(b.t[k - 1], b.t[k + 1]);
          }
          continue;
        }
        if (last >= 0) {
          int sl = sgn(last);
          if (sl != s) {
            double ta = b.t[last], tb = b.t[k], ea = b.E[last], eb = b.E[k];
            double slope = (eb - ea) / (tb - ta);
            double tc = ta + (0 - ea) * (tb - ta) / (eb - ea);
            if (std::abs(slope) < flow_slope_tol) bad.emplace_back(ta, tb);
            raw.push_back({tc, sl < 0 ? +1 : -1, 1, slope});
          }
        }
        last = static_cast<int>(k);
      }
    }
    if (!bad.empty()) {
      if (round >= flow_max_refinements)
        throw NumericalError("non-transversal crossing persists after " + std::to_string(flow_max_refinements) +
                             " refinements near t = " + std::to_string(bad.front().first));
      std::vector<double> ng = tr.grid;
      for (auto& [a, b] : bad) ng.push_back(0.5 * (a + b));
      std::sort(ng.begin(), ng.end());
      ng.erase(std::unique(ng.begin(), ng.end()), ng.end());
      grid = ng;
      continue;
    }
    std::sort(raw.begin(), raw.end(), [](const Crossing& a, const Crossing& b) {
      if (a.t != b.t) return a.t < b.t;
      return a.dir < b.dir;
    });
    FlowResult fr;
    fr.description = fam.description;
    for (auto& c : raw) {
      if (!fr.crossings.empty()) {
        Crossing& p = fr.crossings.back();
        if (p.dir == c.dir && std::abs(p.t - c.t) <= 1e-7 * (1.0 + std::abs(c.t))) {
          ++p.mult;
          continue;
        }
      }
      fr.crossings.push_back(c);
    }
    for (auto& c : fr.crossings) {
      fr.net_flow += c.dir * c.mult;
      (c.dir > 0 ? fr.up : fr.down) += c.mult;
    }
    // endpoint kernels
    for (auto& b : tr.branches) {
      if (b.t.front() == t0 && std::abs(b.E.front()) <= ktol[t0]) ++fr.endpoint_ambiguity[0];
      if (b.t.back() == t1 && std::abs(b.E.back()) <= ktol[t1]) ++fr.endpoint_ambiguity[1];
    }
    fr.grid_points = static_cast<int>(tr.grid.size());
    fr.refinements = round + tr.refinements;
    fr.max_residual = tr.max_residual;
    return fr;
  }
}

struct StagedFlowResult {
  std::vector<FlowResult> stages;
  int total = 0;
  std::vector<int> junction_kernels;  // kernel dims at start, each junction, end
};

inline StagedFlowResult staged_flow(const std::vector<OperatorFamily>& stages, double band, double level = 0.0) {
  require(!stages.empty(), "staged_flow needs at least one stage");
  for (size_t k = 0; k + 1 < stages.size(); ++k) {
    SpMat a = stages[k].generator(stages[k].t_grid.back()).matrix;
    SpMat b = stages[k + 1].generator(stages[k + 1].t_grid.front()).matrix;
    if (a.rows() != b.rows() || a.cols() != b.cols() || max_entry_diff(a, b) > 1e-10)
      throw ValidationError("junction mismatch between stage " + std::to_string(k + 1) + " and stage " +
                            std::to_string(k + 2));
  }
  StagedFlowResult r;
  for (size_t k = 0; k < stages.size(); ++k) {
    r.stages.push_back(spectral_flow(stages[k], band, level));
    r.total += r.stages.back().net_flow;
    if (k == 0) r.junction_kernels.push_back(r.stages.back().endpoint_ambiguity[0]);
    r.junction_kernels.push_back(r.stages.back().endpoint_ambiguity[1]);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Family constructors.

inline TruncatedOperator dense_operator(const MatXcd& A, const std::string& kind = "matrix") {
  TruncatedOperator op;
  op.dim = static_cast<int>(A.rows());
  op.matrix = A.sparseView(0.0, 0.0);
  op.kind = kind;
  op.axes = 0;
  return op;
}

inline std::vector<double> linspace(double a, double b, int n) {
  require(n >= 2, "linspace needs n >= 2");
  std::vector<double> g(n);
  for (int i = 0; i < n; ++i) g[i] = a + (b - a) * double(i) / double(n - 1);
  g.back() = b;
  return g;
}

inline double max_abs_entry(const MatXcd& A) { return A.size() ? A.cwiseAbs().maxCoeff() : 0.0; }

inline OperatorFamily pencil_family(const MatXcd& A0, const MatXcd& B, double t0, double t1, int n_grid,
                                    const std::string& desc = "pencil A0 + t B") {
  require(A0.rows() == A0.cols() && B.rows() == A0.rows() && B.cols() == A0.cols(), "pencil matrices must be square and equal size");
  require(max_abs_entry(A0 - A0.adjoint()) < 1e-12 && max_abs_entry(B - B.adjoint()) < 1e-12, "pencil matrices must be Hermitian");
  OperatorFamily f;
  f.generator = [A0, B](double t) { return dense_operator(A0 + t * B); };
  f.t_grid = linspace(t0, t1, n_grid);
  f.description = desc;
  f.lipschitz = max_abs_entry(B);
  return f;
}

inline OperatorFamily constant_family(const MatXcd& A, double t0, double t1, int n_grid) {
  OperatorFamily f;
  f.generator = [A](double) { return dense_operator(A); };
  f.t_grid = linspace(t0, t1, n_grid);
  f.description = "constant";
  f.lipschitz = 1e-300;
  return f;
}

// Reversed path: s -> A(t0 + t1 - s) on the mirrored grid.
inline OperatorFamily reverse_family(const OperatorFamily& fam) {
  OperatorFamily r = fam;
  const double a = fam.t_grid.front(), b = fam.t_grid.back();
  auto gen = fam.generator;
  r.generator = [gen, a, b](double s) { return gen(a + b - s); };
  r.t_grid.clear();
  for (auto it = fam.t_grid.rbegin(); it != fam.t_grid.rend(); ++it) r.t_grid.push_back(a + b - *it);
  r.t_grid.front() = a;
  r.t_grid.back() = b;
  r.description = fam.description + " (reversed)";
  return r;
}

// Monotone reparametrization s in [0, 1] -> phi(s) with phi(0) = t0, phi(1) = t1.
inline OperatorFamily reparametrize(const OperatorFamily& fam, std::function<double(double)> phi, int n_grid,
                                    double lipschitz_phi) {
  OperatorFamily r;
  auto gen = fam.generator;
  r.generator = [gen, phi](double s) { return gen(phi(s)); };
  r.t_grid = linspace(0.0, 1.0, n_grid);
  r.description = fam.description + " (reparametrized)";
  r.lipschitz = fam.lipschitz * lipschitz_phi;
  return r;
}

// Restriction to [ta, tb] with n_grid uniform points.
inline OperatorFamily subfamily(const OperatorFamily& fam, double ta, double tb, int n_grid) {
  OperatorFamily r = fam;
  r.t_grid = linspace(ta, tb, n_grid);
  return r;
}

// ---------------------------------------------------------------------------
// Brute-force oracle for small dense families: sorted eigenvalues on a fine
// grid; each sorted curve is continuous, so its sign changes against the
// level are exactly the level crossings when the grid resolves them.
inline FlowResult brute_force_flow(const std::function<MatXcd(double)>& A, double t0, double t1, int n_fine, double level = 0.0) {
  require(n_fine >= 2, "oracle grid needs >= 2 points");
  std::vector<VecXd> ev(n_fine);
  std::vector<double> ts = linspace(t0, t1, n_fine);
  double ktol0 = 0, ktol1 = 0;
  for (int i = 0; i < n_fine; ++i) {
    MatXcd M = A(ts[i]);
    Eigen::SelfAdjointEigenSolver<MatXcd> es(M, Eigen::EigenvaluesOnly);
    ev[i] = es.eigenvalues().array() - level;
    if (i == 0) ktol0 = flow_kernel_rel_tol * M.cwiseAbs().rowwise().sum().maxCoeff();
    if (i == n_fine - 1) ktol1 = flow_kernel_rel_tol * M.cwiseAbs().rowwise().sum().maxCoeff();
  }
  FlowResult fr;
  fr.description = "brute-force sorted oracle";
  const int n = static_cast<int>(ev[0].size());
  for (int k = 0; k < n; ++k) {
    int last = 0;
    for (int i = 0; i < n_fine; ++i) {
      double e = ev[i](k);
      double tol = i == 0 ? ktol0 : (i == n_fine - 1 ? ktol1 : 0.0);
      int s = std::abs(e) <= tol ? 0 : (e > 0 ? 1 : -1);
      if (s == 0) continue;
      if (last != 0 && s != last) {
        Crossing c;
        c.dir = last < 0 ? +1 : -1;
        c.t = ts[i - 1] + (0 - ev[i - 1](k)) * (ts[i] - ts[i - 1]) / (e - ev[i - 1](k));
        fr.crossings.push_back(c);
        fr.net_flow += c.dir;
        (c.dir > 0 ? fr.up : fr.down) += 1;
      }
      last = s;
    }
  }
  for (int k = 0; k < n; ++k) {
    if (std::abs(ev.front()(k)) <= ktol0) ++fr.endpoint_ambiguity[0];
    if (std::abs(ev.back()(k)) <= ktol1) ++fr.endpoint_ambiguity[1];
  }
  std::sort(fr.crossings.begin(), fr.crossings.end(), [](auto& a, auto& b) { return a.t < b.t; });
  fr.grid_points = n_fine;
  return fr;
}

}  // namespace sfl
