#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "lagrom/lopinf.hpp"

using namespace lagrom;
using namespace lagrom::lopinf;

namespace {

// dataset with analytic derivatives, everything in the training partition
reduce::ReducedDataset analytic_dataset(const Mat& Q, const Mat& Qd,
                                        const Mat& Qdd, double dt) {
  reduce::ReducedDataset ds;
  ds.Qhat = Q;
  ds.Qdot = Qd;
  ds.Qddot = Qdd;
  ds.dt = dt;
  ds.valid.assign(std::size_t(Q.cols()), true);
  ds.train = {0, int(Q.cols())};
  ds.val = {int(Q.cols()), int(Q.cols())};
  ds.test = {int(Q.cols()), int(Q.cols())};
  return ds;
}

Mat random_orthogonal(int r, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  Mat A(r, r);
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < r; ++j) A(i, j) = gauss(rng);
  return Eigen::HouseholderQR<Mat>(A).householderQ();
}

}  // namespace

TEST_CASE("nearest_spd symmetrizes and clips eigenvalues") {
  Mat A(2, 2);
  A << -1.0, 0.0, 0.0, 2.0;
  Mat S = nearest_spd(A, 1e-8);
  REQUIRE(S(0, 0) == Catch::Approx(1e-8));
  REQUIRE(S(1, 1) == Catch::Approx(2.0));
  REQUIRE(std::abs(S(0, 1)) < 1e-15);

  // already-SPD input passes through
  Mat B(2, 2);
  B << 2.0, 0.3, 0.3, 1.0;
  REQUIRE((nearest_spd(B) - B).norm() < 1e-12);

  // asymmetric input is symmetrized first
  Mat C(2, 2);
  C << 2.0, 0.4, 0.0, 2.0;
  Mat Sc = nearest_spd(C);
  REQUIRE(Sc(0, 1) == Catch::Approx(0.2));
  REQUIRE(Sc(1, 0) == Catch::Approx(0.2));
}

TEST_CASE("conservative inference recovers diag(1,4,9) from analytic data") {
  // q_i(t) = cos(w_i t + phase_i) solves qdd + K q = 0 with K = diag(w_i^2)
  const int r = 3, cols = 200;
  const double dt = 0.05;
  Vec w(3);
  w << 1.0, 2.0, 3.0;
  Mat Q(r, cols), Qd(r, cols), Qdd(r, cols);
  for (int j = 0; j < cols; ++j) {
    const double t = j * dt;
    for (int i = 0; i < r; ++i) {
      const double ph = 0.3 * i;
      Q(i, j) = std::cos(w(i) * t + ph);
      Qd(i, j) = -w(i) * std::sin(w(i) * t + ph);
      Qdd(i, j) = -w(i) * w(i) * std::cos(w(i) * t + ph);
    }
  }
  auto ds = analytic_dataset(Q, Qd, Qdd, dt);
  auto rom = infer_linear(ds, /*conservative=*/true);
  REQUIRE(rom.r == 3);
  REQUIRE_FALSE(rom.C.has_value());
  Mat K_true = Vec{{1.0, 4.0, 9.0}}.asDiagonal();
  REQUIRE((rom.K - K_true).norm() / K_true.norm() < 1e-6);
  REQUIRE(rom.residual_norm < 1e-6);
}

TEST_CASE("damped inference recovers coupled SPD operators from FD data") {
  // z_i(t) = e^{-zeta_i w_i t} cos(w_di t) decoupled modes, rotated by R:
  // q = R z solves qdd + C qd + K q = 0 with K = R diag(w^2) R' etc.
  const int r = 3;
  const double dt = 1e-3, T = 6.0;
  Vec w(3), zeta(3);
  w << 2.0, 3.5, 5.0;
  zeta << 0.05, 0.02, 0.08;
  Mat R = random_orthogonal(r, 42);
  Mat K_true = R * Vec(w.array().square()).asDiagonal() * R.transpose();
  Mat C_true = R * Vec(2.0 * zeta.array() * w.array()).asDiagonal() * R.transpose();

  const int K_cols = int(std::floor(T / dt)) + 1;
  Mat Z(r, K_cols);
  for (int j = 0; j < K_cols; ++j) {
    const double t = j * dt;
    for (int i = 0; i < r; ++i) {
      const double wd = w(i) * std::sqrt(1.0 - zeta(i) * zeta(i));
      Z(i, j) = std::exp(-zeta(i) * w(i) * t) * std::cos(wd * t + 0.2 * i);
    }
  }
  Mat Q = R * Z;
  auto ds = reduce::split_dataset(Q, dt, 0.6 * T, 0.8 * T);
  auto rom = infer_linear(ds, /*conservative=*/false);
  REQUIRE(rom.C.has_value());
  REQUIRE((rom.K - K_true).norm() / K_true.norm() < 1e-3);
  REQUIRE((*rom.C - C_true).norm() / C_true.norm() < 1e-3);
}

TEST_CASE("inferred operators satisfy the SPD floor on hostile data") {
  // first coordinate grows exponentially, so the unconstrained stiffness
  // fit wants a negative eigenvalue there
  const int r = 2, cols = 120;
  const double dt = 0.02;
  Mat Q(r, cols), Qd(r, cols), Qdd(r, cols);
  for (int j = 0; j < cols; ++j) {
    const double t = j * dt;
    Q(0, j) = std::exp(t);
    Qd(0, j) = std::exp(t);
    Qdd(0, j) = std::exp(t);
    Q(1, j) = std::cos(2.0 * t);
    Qd(1, j) = -2.0 * std::sin(2.0 * t);
    Qdd(1, j) = -4.0 * std::cos(2.0 * t);
  }
  auto ds = analytic_dataset(Q, Qd, Qdd, dt);

  // sanity: the unconstrained symmetric fit is indeed indefinite
  Mat K0, C0;
  detail::symmetric_ls(ds.train_Q(), ds.train_Qdot(), ds.train_Qddot(), false,
                       K0, C0);
  Eigen::SelfAdjointEigenSolver<Mat> e0(K0);
  REQUIRE(e0.eigenvalues().minCoeff() < 0.0);

  const double eps = 1e-8;
  auto rom = infer_linear(ds, /*conservative=*/true, eps);
  Eigen::SelfAdjointEigenSolver<Mat> ek(rom.K);
  REQUIRE(ek.eigenvalues().minCoeff() >= eps - 1e-10);
}

TEST_CASE("constrained solve matches the unconstrained fit when feasible") {
  // same data as the diagonal-recovery case, damped variant with SPD truth
  const int r = 2, cols = 300;
  const double dt = 0.01;
  Mat Q(r, cols), Qd(r, cols), Qdd(r, cols);
  Vec w(2), zeta(2);
  w << 1.5, 3.0;
  zeta << 0.1, 0.05;
  for (int j = 0; j < cols; ++j) {
    const double t = j * dt;
    for (int i = 0; i < r; ++i) {
      const double wd = w(i) * std::sqrt(1.0 - zeta(i) * zeta(i));
      const double env = std::exp(-zeta(i) * w(i) * t);
      const double c = std::cos(wd * t), s = std::sin(wd * t);
      Q(i, j) = env * c;
      Qd(i, j) = env * (-zeta(i) * w(i) * c - wd * s);
      Qdd(i, j) = env * ((zeta(i) * zeta(i) * w(i) * w(i) - wd * wd) * c +
                         2.0 * zeta(i) * w(i) * wd * s);
    }
  }
  auto ds = analytic_dataset(Q, Qd, Qdd, dt);
  Mat K0, C0;
  detail::symmetric_ls(ds.train_Q(), ds.train_Qdot(), ds.train_Qddot(), true,
                       K0, C0);
  Eigen::SelfAdjointEigenSolver<Mat> ek(K0), ec(C0);
  REQUIRE(ek.eigenvalues().minCoeff() > 0.0);
  REQUIRE(ec.eigenvalues().minCoeff() > 0.0);

  auto rom = infer_linear(ds, /*conservative=*/false);
  REQUIRE((rom.K - K0).norm() / K0.norm() < 1e-6);
  REQUIRE((*rom.C - C0).norm() / C0.norm() < 1e-6);
}

TEST_CASE("solver never does worse than its SPD-projected initializer") {
  const int r = 2, cols = 120;
  const double dt = 0.02;
  Mat Q(r, cols), Qd(r, cols), Qdd(r, cols);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> gauss;
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < r; ++i) {
      Q(i, j) = gauss(rng);
      Qd(i, j) = gauss(rng);
      Qdd(i, j) = gauss(rng);  // pure noise: nothing fits well
    }
  auto ds = analytic_dataset(Q, Qd, Qdd, dt);
  Mat K0, C0;
  detail::symmetric_ls(Q, Qd, Qdd, false, K0, C0);
  Mat K_init = nearest_spd(K0);
  const double f_init = (Qdd + K_init * Q).norm();

  auto rom = infer_linear(ds, /*conservative=*/true);
  REQUIRE(rom.residual_norm <= f_init * (1.0 + 1e-12));
  Eigen::SelfAdjointEigenSolver<Mat> ek(rom.K);
  REQUIRE(ek.eigenvalues().minCoeff() >= rom.eps - 1e-10);
}

TEST_CASE("inference requires enough training columns") {
  const int r = 3;
  Mat Q = Mat::Random(r, 10), Qd = Mat::Random(r, 10), Qdd = Mat::Random(r, 10);
  auto ds = analytic_dataset(Q, Qd, Qdd, 0.01);  // 10 < r(r+1) = 12
  REQUIRE_THROWS_AS(infer_linear(ds, true), std::invalid_argument);
}

TEST_CASE("near-collinear regressors are flagged as ill conditioned") {
  const int r = 2, cols = 100;
  Mat Q(r, cols), Qd(r, cols), Qdd(r, cols);
  for (int j = 0; j < cols; ++j) {
    const double t = j * 0.01;
    Q(0, j) = std::cos(t);
    Q(1, j) = std::cos(t) * (1.0 + 1e-14);  // duplicated direction
    Qd(0, j) = Qd(1, j) = -std::sin(t);
    Qdd(0, j) = Qdd(1, j) = -std::cos(t);
  }
  auto ds = analytic_dataset(Q, Qd, Qdd, 0.01);
  auto rom = infer_linear(ds, true);
  REQUIRE(rom.ill_conditioned);
  REQUIRE(rom.regressor_condition > 1e12);
}
