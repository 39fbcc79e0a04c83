#pragma once

// Implicit Newmark time stepping for second-order systems expressed through
// a residual r(q, v, a) and its three Jacobians. Newton iterates on the new
// acceleration, which keeps the iteration matrix SPD-dominant.

#include <functional>
#include <iostream>

#include "lagrom/common.hpp"

namespace lagrom::integrate {

struct SecondOrderSystem {
  int dim = 0;
  std::function<Vec(const Vec&, const Vec&, const Vec&)> residual;
  std::function<Mat(const Vec&, const Vec&, const Vec&)> jac_q;
  std::function<Mat(const Vec&, const Vec&, const Vec&)> jac_v;
  std::function<Mat(const Vec&, const Vec&, const Vec&)> jac_a;
  std::function<double(const Vec&, const Vec&)> energy;  // optional
};

struct NewmarkConfig {
  double beta = 0.25;
  double gamma = 0.5;
  double dt = 1e-3;
  double newton_tol = 1e-10;  // relative: |r| <= tol * (1 + |r0|)
  int newton_max = 25;

  void validate() const {
    if (dt <= 0.0) throw std::invalid_argument("NewmarkConfig: dt must be > 0");
    if (beta < 0.0 || beta > 0.5)
      throw std::invalid_argument("NewmarkConfig: beta outside [0, 1/2]");
    if (gamma != 0.5)
      std::cerr << "warning: Newmark gamma != 1/2 drops to first-order accuracy\n";
  }
};

struct Trajectory {
  Vec times;
  Mat Q, V, A;  // dim x K

  int steps() const { return int(times.size()); }
};

struct State {
  Vec q, v, a;
};

// Solves residual(q0, v0, a) = 0 for the consistent initial acceleration.
inline Vec initial_acceleration(const SecondOrderSystem& sys, const Vec& q0,
                                const Vec& v0, const NewmarkConfig& cfg) {
  Vec a = Vec::Zero(sys.dim);
  Vec r = sys.residual(q0, v0, a);
  const double r0 = r.norm();
  for (int it = 0; it < cfg.newton_max; ++it) {
    if (r.norm() <= cfg.newton_tol * (1.0 + r0)) return a;
    Mat J = sys.jac_a(q0, v0, a);
    a -= J.partialPivLu().solve(r);
    r = sys.residual(q0, v0, a);
  }
  if (r.norm() <= cfg.newton_tol * (1.0 + r0)) return a;
  throw NonConvergence(cfg.newton_max, r.norm());
}

inline State newmark_step(const SecondOrderSystem& sys, const NewmarkConfig& cfg,
                          const Vec& q, const Vec& v, const Vec& a) {
  const double dt = cfg.dt, beta = cfg.beta, gamma = cfg.gamma;
  // q+ and v+ as affine functions of the unknown a+
  const Vec q_pred = q + dt * v + dt * dt * (0.5 - beta) * a;
  const Vec v_pred = v + dt * (1.0 - gamma) * a;

  Vec an = a;  // constant-acceleration initial guess
  Vec qn = q_pred + beta * dt * dt * an;
  Vec vn = v_pred + gamma * dt * an;
  Vec r = sys.residual(qn, vn, an);
  const double r0 = r.norm();
  double rnorm = r0;
  for (int it = 0; it < cfg.newton_max; ++it) {
    if (rnorm <= cfg.newton_tol * (1.0 + r0)) return {qn, vn, an};
    Mat J = sys.jac_a(qn, vn, an) + gamma * dt * sys.jac_v(qn, vn, an) +
            beta * dt * dt * sys.jac_q(qn, vn, an);
    an -= J.partialPivLu().solve(r);
    qn = q_pred + beta * dt * dt * an;
    vn = v_pred + gamma * dt * an;
    r = sys.residual(qn, vn, an);
    rnorm = r.norm();
  }
  if (rnorm <= cfg.newton_tol * (1.0 + r0)) return {qn, vn, an};
  throw NonConvergence(cfg.newton_max, rnorm);
}

inline Trajectory simulate(const SecondOrderSystem& sys, const NewmarkConfig& cfg,
                           const Vec& q0, const Vec& v0, double T) {
  cfg.validate();
  if (T < 0.0) throw std::invalid_argument("simulate: negative horizon");
  const int K = int(std::floor(T / cfg.dt + 1e-12)) + 1;
  Trajectory traj;
  traj.times.resize(K);
  traj.Q.resize(sys.dim, K);
  traj.V.resize(sys.dim, K);
  traj.A.resize(sys.dim, K);

  State s{q0, v0, initial_acceleration(sys, q0, v0, cfg)};
  for (int k = 0; k < K; ++k) {
    traj.times(k) = double(k) * cfg.dt;
    traj.Q.col(k) = s.q;
    traj.V.col(k) = s.v;
    traj.A.col(k) = s.a;
    if (k + 1 < K) {
      try {
        s = newmark_step(sys, cfg, s.q, s.v, s.a);
      } catch (const NonConvergence& e) {
        throw NonConvergence(e.iterations, e.final_norm, k + 1);
      }
    }
  }
  return traj;
}

}  // namespace lagrom::integrate
