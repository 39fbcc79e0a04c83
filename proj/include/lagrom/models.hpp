#pragma once

// Benchmark full-order Lagrangian mechanical systems: a fixed-fixed spring
// chain with spatially isolated cubic springs, and a clamped membrane grid
// with cubic stiffness/damping on every edge.

#include <Eigen/Eigenvalues>
#include <cmath>
#include <functional>
#include <memory>
#include <utility>
#include <vector>

#include "lagrom/common.hpp"

namespace lagrom::models {

// Full-order system M qdd + C qd + dF_nl/dv + K q + dU_nl/dq = 0.
// Immutable after construction; all callables are pure.
struct MechanicalFom {
  int n = 0;
  Mat M, C, K;
  std::function<Vec(const Vec&)> nl_potential_grad;
  std::function<Vec(const Vec&)> nl_dissipation_grad;
  std::function<Mat(const Vec&)> nl_potential_hess;
  std::function<Mat(const Vec&)> nl_dissipation_hess;
  std::function<double(const Vec&)> potential_energy;  // full U(q)
  std::function<double(const Vec&)> dissipation;       // F(v) >= 0

  double kinetic_energy(const Vec& v) const { return 0.5 * v.dot(M * v); }
};

struct RodParams {
  int n = 64;
  double mass = 1.56e-2;
  double kappa = 65.0;
  double rho = 2.62e5;  // cubic spring coefficient
  int nl_lo = 22;       // 1-based edge indices, edge i joins masses i and i+1
  int nl_hi = 28;
};

struct MembraneParams {
  double l_x = std::sqrt(2.0);
  double l_y = 1.0 / std::sqrt(2.0);
  int N_x = 21;
  int N_y = 13;
  double damping_ratio = 1e-4;  // C = damping_ratio * K
  double k_nl = 74.361;
  double c_nl = 74.361;
  // Clamp the full boundary when set. The default clamps only the x = 0 and
  // y = 0 edges, which leaves (N_x - 1)(N_y - 1) free nodes (240 for the
  // reference grid).
  bool clamp_all_edges = false;
};

namespace detail {

// quartic edge energy sum_e (coef/4) (q_b - q_a)^4 over index pairs; index
// -1 denotes a fixed (zero-displacement) end
struct EdgeSet {
  std::vector<std::pair<int, int>> edges;
  std::vector<double> coef;

  double energy(const Vec& q) const {
    double e = 0.0;
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const double d = delta(q, edges[i]);
      e += 0.25 * coef[i] * d * d * d * d;
    }
    return e;
  }
  Vec grad(const Vec& q) const {
    Vec g = Vec::Zero(q.size());
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const double d = delta(q, edges[i]);
      const double f = coef[i] * d * d * d;
      const auto [a, b] = edges[i];
      if (b >= 0) g(b) += f;
      if (a >= 0) g(a) -= f;
    }
    return g;
  }
  Mat hess(const Vec& q) const {
    Mat H = Mat::Zero(q.size(), q.size());
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const double d = delta(q, edges[i]);
      const double h = 3.0 * coef[i] * d * d;
      const auto [a, b] = edges[i];
      if (b >= 0) H(b, b) += h;
      if (a >= 0) H(a, a) += h;
      if (a >= 0 && b >= 0) {
        H(a, b) -= h;
        H(b, a) -= h;
      }
    }
    return H;
  }

 private:
  static double delta(const Vec& q, std::pair<int, int> e) {
    const double qa = e.first >= 0 ? q(e.first) : 0.0;
    const double qb = e.second >= 0 ? q(e.second) : 0.0;
    return qb - qa;
  }
};

}  // namespace detail

inline MechanicalFom build_rod(const RodParams& p) {
  if (p.n < 2) throw std::invalid_argument("build_rod: need at least 2 masses");
  if (p.nl_lo < 1 || p.nl_hi < p.nl_lo || p.nl_hi >= p.n)
    throw std::invalid_argument("build_rod: nonlinear range outside 1..n-1");
  if (p.mass <= 0.0 || p.kappa <= 0.0 || p.rho <= 0.0)
    throw std::invalid_argument("build_rod: coefficients must be positive");

  MechanicalFom fom;
  fom.n = p.n;
  fom.M = p.mass * Mat::Identity(p.n, p.n);
  fom.C = Mat::Zero(p.n, p.n);
  fom.K = Mat::Zero(p.n, p.n);
  for (int i = 0; i < p.n; ++i) {
    fom.K(i, i) = 2.0 * p.kappa;
    if (i + 1 < p.n) {
      fom.K(i, i + 1) = -p.kappa;
      fom.K(i + 1, i) = -p.kappa;
    }
  }

  auto springs = std::make_shared<detail::EdgeSet>();
  for (int i = p.nl_lo; i <= p.nl_hi; ++i) {
    springs->edges.emplace_back(i - 1, i);  // 0-based masses i-1 and i
    springs->coef.push_back(p.rho);
  }
  const Mat K = fom.K;
  fom.nl_potential_grad = [springs](const Vec& q) { return springs->grad(q); };
  fom.nl_potential_hess = [springs](const Vec& q) { return springs->hess(q); };
  fom.nl_dissipation_grad = [n = p.n](const Vec&) { return Vec::Zero(n); };
  fom.nl_dissipation_hess = [n = p.n](const Vec&) { return Mat::Zero(n, n); };
  fom.potential_energy = [springs, K](const Vec& q) {
    return 0.5 * q.dot(K * q) + springs->energy(q);
  };
  fom.dissipation = [](const Vec&) { return 0.0; };
  return fom;
}

inline MechanicalFom build_membrane(const MembraneParams& p) {
  if (p.N_x < 3 || p.N_y < 3)
    throw std::invalid_argument("build_membrane: need at least 3 nodes per side");
  if (p.l_x <= 0.0 || p.l_y <= 0.0 || p.damping_ratio < 0.0 || p.k_nl < 0.0 ||
      p.c_nl < 0.0)
    throw std::invalid_argument("build_membrane: invalid coefficients");

  // node (ix, iy), ix in 0..N_x-1, iy in 0..N_y-1; fixed nodes -> dof -1
  std::vector<int> dof(std::size_t(p.N_x) * std::size_t(p.N_y), -1);
  auto fixed = [&](int ix, int iy) {
    if (p.clamp_all_edges)
      return ix == 0 || iy == 0 || ix == p.N_x - 1 || iy == p.N_y - 1;
    return ix == 0 || iy == 0;
  };
  int n = 0;
  for (int iy = 0; iy < p.N_y; ++iy)
    for (int ix = 0; ix < p.N_x; ++ix)
      if (!fixed(ix, iy)) dof[std::size_t(iy * p.N_x + ix)] = n++;

  const double k_x = double(n) * (p.l_x / p.N_x) * (p.l_x / p.N_x);
  const double k_y = double(n) * (p.l_y / p.N_y) * (p.l_y / p.N_y);

  MechanicalFom fom;
  fom.n = n;
  fom.M = (1.0 / double(n)) * Mat::Identity(n, n);
  fom.K = Mat::Zero(n, n);
  auto nl_stiff = std::make_shared<detail::EdgeSet>();
  auto nl_damp = std::make_shared<detail::EdgeSet>();
  auto add_edge = [&](int a, int b, double k) {
    if (a < 0 && b < 0) return;
    if (a >= 0) fom.K(a, a) += k;
    if (b >= 0) fom.K(b, b) += k;
    if (a >= 0 && b >= 0) {
      fom.K(a, b) -= k;
      fom.K(b, a) -= k;
    }
    nl_stiff->edges.emplace_back(a, b);
    nl_stiff->coef.push_back(p.k_nl);
    nl_damp->edges.emplace_back(a, b);
    nl_damp->coef.push_back(p.c_nl);
  };
  for (int iy = 0; iy < p.N_y; ++iy)
    for (int ix = 0; ix < p.N_x; ++ix) {
      const int d0 = dof[std::size_t(iy * p.N_x + ix)];
      if (ix + 1 < p.N_x) add_edge(d0, dof[std::size_t(iy * p.N_x + ix + 1)], k_x);
      if (iy + 1 < p.N_y) add_edge(d0, dof[std::size_t((iy + 1) * p.N_x + ix)], k_y);
    }
  fom.C = p.damping_ratio * fom.K;

  const Mat K = fom.K;
  fom.nl_potential_grad = [nl_stiff](const Vec& q) { return nl_stiff->grad(q); };
  fom.nl_potential_hess = [nl_stiff](const Vec& q) { return nl_stiff->hess(q); };
  fom.nl_dissipation_grad = [nl_damp](const Vec& v) { return nl_damp->grad(v); };
  fom.nl_dissipation_hess = [nl_damp](const Vec& v) { return nl_damp->hess(v); };
  fom.potential_energy = [nl_stiff, K](const Vec& q) {
    return 0.5 * q.dot(K * q) + nl_stiff->energy(q);
  };
  const Mat C = fom.C;
  fom.dissipation = [nl_damp, C](const Vec& v) {
    return 0.5 * v.dot(C * v) + nl_damp->energy(v);
  };
  return fom;
}

// Mass-normalized modes of (K, M), ascending frequency, each mode sign-fixed
// so its first nonzero entry is positive.
inline Mat modal_matrix(const MechanicalFom& fom) {
  Eigen::GeneralizedSelfAdjointEigenSolver<Mat> eig(fom.K, fom.M);
  if (eig.info() != Eigen::Success)
    throw std::runtime_error("modal_matrix: eigen-solver failed");
  Mat Phi = eig.eigenvectors();  // B-orthonormal, ascending eigenvalues
  for (int j = 0; j < Phi.cols(); ++j) {
    const double nrm = std::sqrt(Phi.col(j).dot(fom.M * Phi.col(j)));
    Phi.col(j) /= nrm;
    for (int i = 0; i < Phi.rows(); ++i) {
      if (std::abs(Phi(i, j)) > 1e-14) {
        if (Phi(i, j) < 0.0) Phi.col(j) = -Phi.col(j);
        break;
      }
    }
  }
  return Phi;
}

// q0 = 0, v0 = Phi * nu (nu zero-padded to n)
inline std::pair<Vec, Vec> modal_initial_condition(const MechanicalFom& fom,
                                                   const Vec& nu) {
  if (nu.size() > fom.n)
    throw DimensionMismatch("modal_initial_condition: too many coefficients");
  Vec full = Vec::Zero(fom.n);
  full.head(nu.size()) = nu;
  Mat Phi = modal_matrix(fom);
  return {Vec::Zero(fom.n), Phi * full};
}

inline Vec fom_residual(const MechanicalFom& fom, const Vec& q, const Vec& v,
                        const Vec& a) {
  if (q.size() != fom.n || v.size() != fom.n || a.size() != fom.n)
    throw DimensionMismatch("fom_residual: state dimension mismatch");
  return fom.M * a + fom.C * v + fom.nl_dissipation_grad(v) + fom.K * q +
         fom.nl_potential_grad(q);
}

inline double total_energy(const MechanicalFom& fom, const Vec& q, const Vec& v) {
  if (q.size() != fom.n || v.size() != fom.n)
    throw DimensionMismatch("total_energy: state dimension mismatch");
  return fom.kinetic_energy(v) + fom.potential_energy(q);
}

}  // namespace lagrom::models

#include "lagrom/integrate.hpp"

namespace lagrom::models {

// Adapter handing the FOM to the Newmark engine. The returned system keeps
// a copy of the (immutable) FOM.
inline integrate::SecondOrderSystem fom_second_order(MechanicalFom fom) {
  auto shared = std::make_shared<MechanicalFom>(std::move(fom));
  integrate::SecondOrderSystem sys;
  sys.dim = shared->n;
  sys.residual = [shared](const Vec& q, const Vec& v, const Vec& a) {
    return fom_residual(*shared, q, v, a);
  };
  sys.jac_q = [shared](const Vec& q, const Vec&, const Vec&) {
    return Mat(shared->K + shared->nl_potential_hess(q));
  };
  sys.jac_v = [shared](const Vec&, const Vec& v, const Vec&) {
    return Mat(shared->C + shared->nl_dissipation_hess(v));
  };
  sys.jac_a = [shared](const Vec&, const Vec&, const Vec&) { return shared->M; };
  sys.energy = [shared](const Vec& q, const Vec& v) {
    return total_energy(*shared, q, v);
  };
  return sys;
}

}  // namespace lagrom::models
