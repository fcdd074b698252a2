// The 8-dimensional real Clifford module {gamma_1..4, rho_1..3, Gamma}.
//
// R^8 = H + H (pairs of quaternions),
//   gamma_a(x, y) = (e_a y, -conj(e_a) x),  (e_1..e_4) = (i, j, k, 1),
//   rho_k(x, y)   = (x e_k, -y e_k),
//   Gamma         = +1 on the first summand, -1 on the second.
#pragma once

#include "specflow/core.hpp"

#include <array>
#include <string>
#include <vector>

namespace sfl {

using Mat8 = Eigen::Matrix<double, 8, 8>;
using Mat8c = Eigen::Matrix<cd, 8, 8>;
using Mat8i = Eigen::Matrix<long long, 8, 8>;

struct CliffordRep {
  std::array<Mat8, 4> gamma;  // gamma[3] is gamma_s
  std::array<Mat8, 3> rho;
  Mat8 Gamma;

  Mat8c gamma_c(int a) const { return gamma[a].cast<cd>(); }
  Mat8c rho_c(int k) const { return rho[k].cast<cd>(); }
  Mat8c Gamma_c() const { return Gamma.cast<cd>(); }
};

namespace detail {

// Quaternion q = q0 + q1 i + q2 j + q3 k as a 4-vector; left/right multiplication matrices.
inline Eigen::Matrix4d quat_left(int unit) {
  // unit: 0 -> 1, 1 -> i, 2 -> j, 3 -> k
  Eigen::Matrix4d L = Eigen::Matrix4d::Zero();
  // multiplication table: e_a * e_b = sign * e_c
  static const int tab_c[4][4] = {{0, 1, 2, 3}, {1, 0, 3, 2}, {2, 3, 0, 1}, {3, 2, 1, 0}};
  static const int tab_s[4][4] = {{1, 1, 1, 1}, {1, -1, 1, -1}, {1, -1, -1, 1}, {1, 1, -1, -1}};
  for (int b = 0; b < 4; ++b) L(tab_c[unit][b], b) = tab_s[unit][b];
  return L;
}

inline Eigen::Matrix4d quat_right(int unit) {
  static const int tab_c[4][4] = {{0, 1, 2, 3}, {1, 0, 3, 2}, {2, 3, 0, 1}, {3, 2, 1, 0}};
  static const int tab_s[4][4] = {{1, 1, 1, 1}, {1, -1, 1, -1}, {1, -1, -1, 1}, {1, 1, -1, -1}};
  Eigen::Matrix4d Rm = Eigen::Matrix4d::Zero();
  // x * e_unit for basis x = e_b
  for (int b = 0; b < 4; ++b) Rm(tab_c[b][unit], b) = tab_s[b][unit];
  return Rm;
}

inline std::string sub(int i) {
  static const char* d[] = {"₀", "₁", "₂", "₃", "₄", "₅", "₆", "₇", "₈", "₉"};
  return d[i];
}

}  // namespace detail

inline CliffordRep build_clifford_rep() {
  using detail::quat_left;
  using detail::quat_right;
  CliffordRep rep;
  const int units[4] = {1, 2, 3, 0};  // i, j, k, 1
  for (int a = 0; a < 4; ++a) {
    Eigen::Matrix4d L = quat_left(units[a]);
    // conj(e) = e for the real unit, -e otherwise
    Eigen::Matrix4d Lbar = units[a] == 0 ? L : Eigen::Matrix4d(-L);
    Mat8 g = Mat8::Zero();
    g.block<4, 4>(0, 4) = L;
    g.block<4, 4>(4, 0) = -Lbar;
    rep.gamma[a] = g;
  }
  for (int k = 0; k < 3; ++k) {
    Eigen::Matrix4d Rm = quat_right(units[k]);
    Mat8 r = Mat8::Zero();
    r.block<4, 4>(0, 0) = Rm;
    r.block<4, 4>(4, 4) = -Rm;
    rep.rho[k] = r;
  }
  rep.Gamma = Mat8::Zero();
  rep.Gamma.diagonal() << 1, 1, 1, 1, -1, -1, -1, -1;
  return rep;
}

// Conjugate every generator by an orthogonal matrix O (O X O^T).
inline CliffordRep conjugate(const CliffordRep& rep, const Mat8& O) {
  CliffordRep r;
  for (int a = 0; a < 4; ++a) r.gamma[a] = O * rep.gamma[a] * O.transpose();
  for (int k = 0; k < 3; ++k) r.rho[k] = O * rep.rho[k] * O.transpose();
  r.Gamma = O * rep.Gamma * O.transpose();
  return r;
}

namespace detail {

inline bool to_integer(const Mat8& m, Mat8i& out) {
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 8; ++j) {
      double v = m(i, j);
      if (v != std::round(v)) return false;
      out(i, j) = static_cast<long long>(std::llround(v));
    }
  return true;
}

}  // namespace detail

// Exhaustive exact check of all pairwise (anti)commutation relations and
// (anti)symmetry; returns the list of violations (empty when valid).
inline std::vector<std::string> verify_relations(const CliffordRep& rep) {
  using detail::sub;
  std::vector<std::string> out;
  std::array<Mat8i, 8> M;
  std::array<std::string, 8> name;
  const Mat8* src[8] = {&rep.gamma[0], &rep.gamma[1], &rep.gamma[2], &rep.gamma[3],
                        &rep.rho[0],   &rep.rho[1],   &rep.rho[2],   &rep.Gamma};
  for (int a = 0; a < 4; ++a) name[a] = "γ" + sub(a + 1);
  for (int k = 0; k < 3; ++k) name[4 + k] = "ρ" + sub(k + 1);
  name[7] = "Γ";
  bool integral = true;
  for (int i = 0; i < 8; ++i) {
    if (!detail::to_integer(*src[i], M[i])) {
      out.push_back(name[i] + " has non-integer entries");
      integral = false;
    }
  }
  if (!integral) return out;
  for (int i = 0; i < 8; ++i)
    for (int r = 0; r < 8; ++r)
      for (int c = 0; c < 8; ++c)
        if (std::llabs(M[i](r, c)) > 1) {
          out.push_back(name[i] + " has entries outside {−1, 0, 1}");
          r = c = 8;
        }
  const Mat8i Id = Mat8i::Identity();
  for (int i = 0; i < 7; ++i)
    if (M[i].transpose() != -M[i]) out.push_back(name[i] + " not anti-symmetric");
  if (M[7].transpose() != M[7]) out.push_back("Γ not symmetric");
  if (M[7].trace() != 0) out.push_back("tr Γ ≠ 0");
  auto kind = [](int i) { return i < 4 ? 0 : (i < 7 ? 1 : 2); };
  for (int i = 0; i < 8; ++i) {
    for (int j = i; j < 8; ++j) {
      Mat8i P = M[i] * M[j], Q = M[j] * M[i];
      int ki = kind(i), kj = kind(j);
      if (i == j) {
        Mat8i want = ki == 2 ? Id : Mat8i(-Id);
        if (P != want) out.push_back(name[i] + "² ≠ " + (ki == 2 ? "𝕀" : "−𝕀"));
        continue;
      }
      if (ki == 2 && kj == 1) {
        if (P != Q) out.push_back(name[i] + name[j] + " ≠ " + name[j] + name[i]);
      } else if (ki == 1 && kj == 2) {
        if (P != Q) out.push_back(name[i] + name[j] + " ≠ " + name[j] + name[i]);
      } else {
        if (P + Q != Mat8i::Zero())
          out.push_back(name[i] + name[j] + " + " + name[j] + name[i] + " ≠ 0");
      }
    }
  }
  return out;
}

// Floating-point variant for conjugated representations: max violation of all relations.
inline double relation_defect(const CliffordRep& rep) {
  const Mat8* src[8] = {&rep.gamma[0], &rep.gamma[1], &rep.gamma[2], &rep.gamma[3],
                        &rep.rho[0],   &rep.rho[1],   &rep.rho[2],   &rep.Gamma};
  auto kind = [](int i) { return i < 4 ? 0 : (i < 7 ? 1 : 2); };
  double d = 0;
  for (int i = 0; i < 8; ++i)
    for (int j = i; j < 8; ++j) {
      Mat8 P = *src[i] * *src[j], Q = *src[j] * *src[i];
      int ki = kind(i), kj = kind(j);
      Mat8 r;
      if (i == j)
        r = P - (ki == 2 ? Mat8(Mat8::Identity()) : Mat8(-Mat8::Identity()));
      else if ((ki == 2) != (kj == 2) && (ki == 1 || kj == 1))
        r = P - Q;
      else
        r = P + Q;
      d = std::max(d, r.cwiseAbs().maxCoeff());
    }
  return d;
}

// Joint eigenspaces of three commuting involutions J_k. Sector index
// idx = sum_k delta_k 2^k with delta_k = (1 + iota_k)/2, so idx 0 is (-,-,-).
inline int iota_of(int idx, int k) { return ((idx >> k) & 1) ? 1 : -1; }

inline std::array<Mat8c, 8> projectors_from(const std::array<Mat8c, 3>& J) {
  std::array<Mat8c, 8> P;
  for (int idx = 0; idx < 8; ++idx) {
    Mat8c p = Mat8c::Identity();
    for (int k = 0; k < 3; ++k) p = p * (Mat8c::Identity() + double(iota_of(idx, k)) * J[k]) * 0.5;
    P[idx] = p;
  }
  return P;
}

// Orthonormal basis e_idx (columns) of the joint eigenlines, phase-fixed so the
// largest-modulus component (lowest index on ties) is real positive.
inline Mat8c eigenbasis_from(const std::array<Mat8c, 3>& J) {
  auto P = projectors_from(J);
  Mat8c E;
  for (int idx = 0; idx < 8; ++idx) {
    int best = 0;
    double bn = -1;
    for (int c = 0; c < 8; ++c) {
      double n = P[idx].col(c).norm();
      if (n > bn + 1e-12) bn = n, best = c;
    }
    if (bn < 1e-6) throw NumericalError("joint eigenspace is empty");
    Eigen::Matrix<cd, 8, 1> v = P[idx].col(best) / bn;
    int arg = 0;
    double am = -1;
    for (int r = 0; r < 8; ++r)
      if (std::abs(v(r)) > am + 1e-12) am = std::abs(v(r)), arg = r;
    v *= std::conj(v(arg)) / std::abs(v(arg));
    E.col(idx) = v;
  }
  return E;
}

inline std::array<Mat8c, 3> involutions(const CliffordRep& rep, int eps) {
  std::array<Mat8c, 3> J;
  for (int k = 0; k < 3; ++k) J[k] = I1 * double(eps) * (rep.gamma_c(k) * rep.rho_c(k));
  return J;
}

// Rank-1 orthogonal projectors onto the joint eigenspaces of {i eps gamma_k rho_k}.
inline std::array<Mat8c, 8> joint_eigenprojectors(const CliffordRep& rep, int eps) {
  require(eps == 1 || eps == -1, "eps must be +1 or -1");
  if (relation_defect(rep) > 1e-12) throw ValidationError("Clifford representation is invalid");
  return projectors_from(involutions(rep, eps));
}

}  // namespace sfl
