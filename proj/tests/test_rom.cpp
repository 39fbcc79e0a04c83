#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "lagrom/rom.hpp"

using namespace lagrom;
using namespace lagrom::rom;

namespace {

lopinf::LinearLagrangianRom make_lin(const Mat& K, const Mat& C) {
  lopinf::LinearLagrangianRom lin;
  lin.r = int(K.rows());
  lin.K = K;
  if (C.size() > 0) lin.C = C;
  return lin;
}

reduce::PodBasis identity_basis(int n) {
  reduce::PodBasis b;
  b.V_r = Mat::Identity(n, n);
  b.singular_values = Vec::Ones(n);
  b.r = n;
  return b;
}

}  // namespace

TEST_CASE("zero model assembles to the plain linear system") {
  Mat K(2, 2), C(2, 2);
  K << 3.0, -0.4, -0.4, 2.0;
  C << 0.1, 0.0, 0.0, 0.2;
  LagrangianRom rom;
  rom.kind = Kind::lopinf;
  rom.lin = make_lin(K, C);
  auto sys = as_second_order(rom);

  std::mt19937_64 rng(1);
  std::normal_distribution<double> gauss;
  for (int t = 0; t < 20; ++t) {
    Vec q(2), v(2), a(2);
    for (int i = 0; i < 2; ++i) {
      q(i) = gauss(rng);
      v(i) = gauss(rng);
      a(i) = gauss(rng);
    }
    Vec expect = a + C * v + K * q;
    REQUIRE((sys.residual(q, v, a) - expect).norm() < 1e-14);
    REQUIRE((sys.jac_q(q, v, a) - K).norm() == 0.0);
    REQUIRE((sys.jac_v(q, v, a) - C).norm() == 0.0);
    REQUIRE((sys.jac_a(q, v, a) - Mat::Identity(2, 2)).norm() == 0.0);
    REQUIRE(sys.energy(q, v) ==
            Catch::Approx(0.5 * v.squaredNorm() + 0.5 * q.dot(K * q)));
  }
}

TEST_CASE("learned-model Jacobians match finite differences of the residual") {
  Mat K(3, 3);
  K << 2.0, 0.1, 0.0, 0.1, 1.5, -0.2, 0.0, -0.2, 1.0;
  Mat C = 0.1 * K;
  LagrangianRom rom;
  rom.kind = Kind::lopinf_spml;
  rom.lin = make_lin(K, C);
  spml::Architecture arch;
  arch.hidden = {8, 5};
  arch.use_TNN = true;
  rom.model = spml::make_model(3, arch);
  rom.has_model = true;
  {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> uni(-0.2, 0.2);
    Vec theta = rom.model.pack();
    for (int i = 0; i < theta.size(); ++i) theta(i) = uni(rng);
    rom.model.unpack(theta);
  }
  auto sys = as_second_order(rom);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(-0.5, 0.5);
  const double h = 1e-6;
  for (int t = 0; t < 5; ++t) {
    Vec q(3), v(3), a(3);
    for (int i = 0; i < 3; ++i) {
      q(i) = uni(rng);
      v(i) = uni(rng);
      a(i) = uni(rng);
    }
    Mat Jq = sys.jac_q(q, v, a), Jv = sys.jac_v(q, v, a), Ja = sys.jac_a(q, v, a);
    Mat Jq_fd(3, 3), Jv_fd(3, 3), Ja_fd(3, 3);
    for (int j = 0; j < 3; ++j) {
      Vec e = Vec::Zero(3);
      e(j) = h;
      Jq_fd.col(j) = (sys.residual(q + e, v, a) - sys.residual(q - e, v, a)) / (2 * h);
      Jv_fd.col(j) = (sys.residual(q, v + e, a) - sys.residual(q, v - e, a)) / (2 * h);
      Ja_fd.col(j) = (sys.residual(q, v, a + e) - sys.residual(q, v, a - e)) / (2 * h);
    }
    REQUIRE((Jq - Jq_fd).norm() / Jq.norm() < 1e-6);
    REQUIRE((Jv - Jv_fd).norm() / Jv.norm() < 1e-6);
    REQUIRE((Ja - Ja_fd).norm() / Ja.norm() < 1e-6);
  }
}

TEST_CASE("learned residual includes the kinetic-correction mass term") {
  LagrangianRom rom;
  rom.kind = Kind::lopinf_spml;
  rom.lin = make_lin(Mat::Identity(2, 2), Mat());
  spml::Architecture arch;
  arch.n_mlps = 0;
  arch.use_FNN = false;
  arch.use_TNN = true;
  rom.model = spml::make_model(2, arch);
  rom.model.T_coeffs << 0.3, 0.1, 0.2;
  rom.has_model = true;
  auto sys = as_second_order(rom);
  Mat Meff = Mat::Identity(2, 2) + spml::m_nn(rom.model);
  Vec q = Vec::Zero(2), v = Vec::Zero(2), a(2);
  a << 1.0, -2.0;
  REQUIRE((sys.residual(q, v, a) - Meff * a).norm() < 1e-14);
  REQUIRE((sys.jac_a(q, v, a) - Meff).norm() == 0.0);
}

TEST_CASE("indefinite effective mass is rejected") {
  LagrangianRom rom;
  rom.kind = Kind::lopinf_spml;
  rom.lin = make_lin(Mat::Identity(2, 2), Mat());
  spml::Architecture arch;
  arch.n_mlps = 0;
  arch.use_FNN = false;
  arch.use_TNN = true;
  rom.model = spml::make_model(2, arch);
  rom.model.T_coeffs << -1.0, 0.0, -1.0;  // M_NN = -2I
  rom.has_model = true;
  REQUIRE_THROWS_AS(as_second_order(rom), std::runtime_error);
}

TEST_CASE("full-rank intrusive projection reproduces the FOM") {
  models::RodParams p;
  p.n = 8;
  p.nl_lo = 3;
  p.nl_hi = 4;
  auto fom = models::build_rod(p);
  auto rom = intrusive_project(fom, identity_basis(8));
  REQUIRE(rom.kind == Kind::intrusive);
  REQUIRE((rom.lin.K - fom.K).norm() < 1e-14 * fom.K.norm());
  REQUIRE((rom.Mhat - fom.M).norm() == 0.0);

  Vec nu(2);
  nu << 0.1, 0.05;
  auto [q0, v0] = models::modal_initial_condition(fom, nu);
  integrate::NewmarkConfig cfg;
  cfg.dt = 1e-3;
  auto full = integrate::simulate(models::fom_second_order(fom), cfg, q0, v0, 1.0);
  auto red = simulate_rom(rom, q0, v0, cfg, 1.0);
  REQUIRE((full.Q - red.Q).norm() < 1e-10 * full.Q.norm());
}

TEST_CASE("intrusive projection preserves symmetry and definiteness") {
  auto fom = models::build_rod({});
  Mat snapshots = Mat::Random(64, 300);
  auto basis = reduce::pod_basis(snapshots, 6);
  auto rom = intrusive_project(fom, basis);
  REQUIRE((rom.lin.K - rom.lin.K.transpose()).norm() < 1e-12 * rom.lin.K.norm());
  Eigen::SelfAdjointEigenSolver<Mat> em(rom.Mhat), ek(rom.lin.K);
  REQUIRE(em.eigenvalues().minCoeff() > 0.0);
  REQUIRE(ek.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("Galerkin consistency on a quadratic FOM with an invariant basis") {
  // K diagonalized: span of eigenvectors is flow-invariant, so projection
  // commutes with time integration
  const int n = 6, r = 3;
  Mat A = Mat::Random(n, n);
  Mat K = A * A.transpose() + double(n) * Mat::Identity(n, n);
  models::MechanicalFom fom;
  fom.n = n;
  fom.M = Mat::Identity(n, n);
  fom.K = K;
  fom.C = Mat::Zero(n, n);
  fom.nl_potential_grad = [n](const Vec&) { return Vec::Zero(n); };
  fom.nl_potential_hess = [n](const Vec&) { return Mat::Zero(n, n); };
  fom.nl_dissipation_grad = fom.nl_potential_grad;
  fom.nl_dissipation_hess = fom.nl_potential_hess;
  fom.dissipation = [](const Vec&) { return 0.0; };
  fom.potential_energy = [&K = fom.K](const Vec& q) { return 0.5 * q.dot(K * q); };

  Eigen::SelfAdjointEigenSolver<Mat> eig(K);
  reduce::PodBasis basis;
  basis.V_r = eig.eigenvectors().leftCols(r);
  basis.r = r;
  auto rom = intrusive_project(fom, basis);

  Vec q0 = basis.V_r * Vec::Random(r), v0 = basis.V_r * Vec::Random(r);
  integrate::NewmarkConfig cfg;
  cfg.dt = 1e-3;
  auto full = integrate::simulate(models::fom_second_order(fom), cfg, q0, v0, 2.0);
  auto red = simulate_rom(rom, basis.V_r.transpose() * q0,
                          basis.V_r.transpose() * v0, cfg, 2.0);
  Mat lifted = reduce::lift(basis, red.Q);
  REQUIRE((full.Q - lifted).norm() < 1e-8 * full.Q.norm());
}

TEST_CASE("linear learned ROM matches the closed-form modal solution") {
  Mat K(2, 2);
  K << 4.0, 0.0, 0.0, 9.0;
  LagrangianRom rom;
  rom.lin = make_lin(K, Mat());
  Vec q0(2), v0(2);
  q0 << 1.0, -0.5;
  v0 << 0.0, 0.0;
  integrate::NewmarkConfig cfg;
  cfg.dt = 1e-3;
  auto traj = simulate_rom(rom, q0, v0, cfg, 2.0);
  const int last = traj.steps() - 1;
  REQUIRE(traj.Q(0, last) == Catch::Approx(std::cos(2.0 * 2.0)).margin(2e-5));
  REQUIRE(traj.Q(1, last) == Catch::Approx(-0.5 * std::cos(3.0 * 2.0)).margin(2e-5));
}

TEST_CASE("rom energy identities and conservative drift") {
  Mat K(2, 2);
  K << 2.0, 0.2, 0.2, 1.0;
  LagrangianRom rom;
  rom.kind = Kind::lopinf_spml;
  rom.lin = make_lin(K, Mat());
  spml::Architecture arch;
  arch.n_mlps = 0;
  arch.use_FNN = false;
  rom.model = spml::make_model(2, arch);
  // small convex quartic bump: U = 0.05 q1^4 + 0.05 q2^4
  for (std::size_t t = 0; t < rom.model.U.terms.size(); ++t)
    if (rom.model.U.terms[t][0] == 4 || rom.model.U.terms[t][1] == 4)
      rom.model.U.coeffs(long(t)) = 0.05;
  rom.has_model = true;

  REQUIRE(rom_energy(rom, Vec::Zero(2), Vec::Zero(2)) == 0.0);
  Vec q(2), v(2);
  q << 0.5, -0.3;
  v << 0.2, 0.1;
  const double expect = 0.5 * v.squaredNorm() + 0.5 * q.dot(K * q) +
                        0.05 * (std::pow(0.5, 4) + std::pow(-0.3, 4));
  REQUIRE(rom_energy(rom, q, v) == Catch::Approx(expect).epsilon(1e-12));

  auto sys = as_second_order(rom);
  integrate::NewmarkConfig cfg;
  cfg.dt = 1e-3;
  auto traj = integrate::simulate(sys, cfg, q, v, 10.0);
  const double e0 = sys.energy(traj.Q.col(0), traj.V.col(0));
  double drift = 0.0;
  for (int k = 0; k < traj.steps(); ++k)
    drift = std::max(drift,
                     std::abs(sys.energy(traj.Q.col(k), traj.V.col(k)) - e0));
  REQUIRE(drift / e0 < 1e-4);
}

TEST_CASE("pod-spml mode runs with zero linear prior") {
  LagrangianRom rom;
  rom.kind = Kind::pod_spml;
  rom.lin = make_lin(Mat::Zero(2, 2), Mat());
  spml::Architecture arch;
  arch.n_mlps = 0;
  arch.use_FNN = false;
  rom.model = spml::make_model(2, arch);
  // quadratic terms act as the learned stiffness: U = q1^2 + q2^2 -> K_eff = 2I
  for (std::size_t t = 0; t < rom.model.U.terms.size(); ++t)
    if (rom.model.U.terms[t] == spml::MultiIndex{2, 0} ||
        rom.model.U.terms[t] == spml::MultiIndex{0, 2})
      rom.model.U.coeffs(long(t)) = 1.0;
  rom.has_model = true;
  auto sys = as_second_order(rom);
  Vec q(2), v = Vec::Zero(2), a = Vec::Zero(2);
  q << 1.0, 2.0;
  REQUIRE((sys.residual(q, v, a) - 2.0 * q).norm() < 1e-12);
}
