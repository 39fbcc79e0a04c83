#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "lagrom/spml.hpp"

using namespace lagrom;
using namespace lagrom::spml;

namespace {

double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// naive re-evaluations, written independently of the library's paths
double naive_poly(const std::vector<MultiIndex>& terms, const Vec& c, const Vec& x) {
  double acc = 0.0;
  for (std::size_t t = 0; t < terms.size(); ++t) {
    double mono = 1.0;
    for (int i = 0; i < x.size(); ++i)
      mono *= std::pow(x(i), terms[t][std::size_t(i)]);
    acc += c(long(t)) * mono;
  }
  return acc;
}

Vec naive_poly_grad(const std::vector<MultiIndex>& terms, const Vec& c, const Vec& x) {
  Vec g = Vec::Zero(x.size());
  for (std::size_t t = 0; t < terms.size(); ++t)
    for (int i = 0; i < x.size(); ++i) {
      const int p = terms[t][std::size_t(i)];
      if (p == 0) continue;
      double mono = double(p) * std::pow(x(i), p - 1);
      for (int j = 0; j < x.size(); ++j)
        if (j != i) mono *= std::pow(x(j), terms[t][std::size_t(j)]);
      g(i) += c(long(t)) * mono;
    }
  return g;
}

double naive_mlp(const Mlp& m, const Vec& x) {
  Vec h = x;
  for (std::size_t l = 0; l < m.W.size(); ++l) {
    Vec z = m.W[l] * h + m.b[l];
    if (l + 1 < m.W.size())
      for (int i = 0; i < z.size(); ++i) z(i) *= sigmoid(z(i));
    h = z;
  }
  return m.out_scale * h(0);
}

Vec naive_mlp_grad(const Mlp& m, const Vec& x) {
  Vec h = x;
  Mat J = Mat::Identity(x.size(), x.size());
  for (std::size_t l = 0; l < m.W.size(); ++l) {
    Vec z = m.W[l] * h + m.b[l];
    Mat Jz = m.W[l] * J;
    if (l + 1 < m.W.size()) {
      for (int i = 0; i < z.size(); ++i) {
        const double s = sigmoid(z(i));
        const double d = s + z(i) * s * (1.0 - s);  // swish'
        Jz.row(i) *= d;
        z(i) *= s;
      }
    }
    h = z;
    J = Jz;
  }
  return m.out_scale * J.row(0).transpose();
}

double naive_fn(const ScalarFunction& f, const Vec& x) {
  double acc = naive_poly(f.terms, f.coeffs, x);
  for (const auto& m : f.mlps) acc += naive_mlp(m, x);
  return acc;
}

Vec naive_fn_grad(const ScalarFunction& f, const Vec& x) {
  Vec g = naive_poly_grad(f.terms, f.coeffs, x);
  for (const auto& m : f.mlps) g += naive_mlp_grad(m, x);
  return g;
}

void randomize(SpmlModel& model, unsigned seed, double scale = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-scale, scale);
  Vec theta = model.pack();
  for (int i = 0; i < theta.size(); ++i) theta(i) = uni(rng);
  model.unpack(theta);
}

lopinf::LinearLagrangianRom make_lin(const Mat& K, const Mat& C) {
  lopinf::LinearLagrangianRom lin;
  lin.r = int(K.rows());
  lin.K = K;
  if (C.size() > 0) lin.C = C;
  return lin;
}

}  // namespace

TEST_CASE("monomial basis enumeration") {
  auto b1 = monomial_basis(2, {2});
  REQUIRE(b1.size() == 3);
  REQUIRE(b1[0] == MultiIndex{2, 0});
  REQUIRE(b1[1] == MultiIndex{1, 1});
  REQUIRE(b1[2] == MultiIndex{0, 2});
  REQUIRE(monomial_basis(2, {2, 3, 4}).size() == 12);
  REQUIRE(monomial_basis(1, {2}).size() == 1);
  // stars and bars: C(d+r-1, r-1) terms of exact degree d
  REQUIRE(monomial_basis(3, {4}).size() == 15);
}

TEST_CASE("model evaluation matches a direct-summation oracle") {
  Architecture arch;
  arch.hidden = {6, 4};
  arch.use_TNN = true;
  auto model = make_model(3, arch);
  randomize(model, 101);
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  for (int t = 0; t < 20; ++t) {
    Vec x(3);
    for (int i = 0; i < 3; ++i) x(i) = uni(rng);
    REQUIRE(eval_U_NN(model, x) ==
            Catch::Approx(naive_fn(model.U, x)).margin(1e-12));
    REQUIRE(eval_F_NN(model, x) ==
            Catch::Approx(naive_fn(model.F, x)).margin(1e-12));
    REQUIRE(eval_T_NN(model, x) ==
            Catch::Approx(naive_poly(model.T_terms, model.T_coeffs, x)).margin(1e-12));
  }
  // explicit monomial: U = q1^4 at (2, 1) -> 16
  Architecture pure;
  pure.n_mlps = 0;
  pure.degrees = {4};
  pure.use_FNN = false;
  auto m2 = make_model(2, pure);
  m2.U.coeffs(0) = 1.0;  // first degree-4 term is (4,0)
  REQUIRE(m2.U.terms[0] == MultiIndex{4, 0});
  Vec q(2);
  q << 2.0, 1.0;
  REQUIRE(eval_U_NN(m2, q) == Catch::Approx(16.0));
}

TEST_CASE("m_nn is the Hessian of the quadratic kinetic correction") {
  Architecture arch;
  arch.use_TNN = true;
  arch.n_mlps = 0;
  auto model = make_model(2, arch);
  REQUIRE(m_nn(model).norm() == 0.0);

  // T = z20 v1^2 + z11 v1 v2 + z02 v2^2
  model.T_coeffs << 0.7, -0.3, 0.2;
  Mat M = m_nn(model);
  REQUIRE(M(0, 0) == Catch::Approx(1.4));
  REQUIRE(M(0, 1) == Catch::Approx(-0.3));
  REQUIRE(M(1, 0) == Catch::Approx(-0.3));
  REQUIRE(M(1, 1) == Catch::Approx(0.4));

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(-2.0, 2.0);
  for (int t = 0; t < 20; ++t) {
    Vec v(2);
    v << uni(rng), uni(rng);
    REQUIRE(0.5 * v.dot(M * v) == Catch::Approx(eval_T_NN(model, v)).margin(1e-12));
  }
}

TEST_CASE("parameter flattening round-trips losslessly") {
  Architecture arch;
  arch.hidden = {5, 3};
  arch.use_TNN = true;
  auto model = make_model(3, arch);
  randomize(model, 55);
  Vec theta = model.pack();
  auto copy = make_model(3, arch);
  copy.unpack(theta);
  REQUIRE((copy.pack() - theta).norm() == 0.0);
  REQUIRE(copy.param_count() == model.param_count());
}

TEST_CASE("zero model residual equals the linear residual column for column") {
  Mat K(2, 2), C(2, 2);
  K << 3.0, -0.5, -0.5, 2.0;
  C << 0.2, 0.05, 0.05, 0.1;
  auto lin = make_lin(K, C);
  Architecture arch;
  arch.hidden = {8, 4};
  auto model = make_model(2, arch);
  glorot_init(model, 1);  // nonzero hidden weights, zero output scales

  Mat Q = Mat::Random(2, 15), V = Mat::Random(2, 15), A = Mat::Random(2, 15);
  Mat R = residual_batch(model, lin, Q, V, A);
  Mat R_lin = A + C * V + K * Q;
  REQUIRE((R - R_lin).norm() < 1e-12 * R_lin.norm());
}

TEST_CASE("residual vanishes on data generated by a known model") {
  // polynomial-only model so the test can form consistent accelerations
  Mat K(2, 2);
  K << 2.0, 0.3, 0.3, 1.5;
  auto lin = make_lin(K, Mat());
  Architecture arch;
  arch.n_mlps = 0;
  arch.use_FNN = false;
  auto model = make_model(2, arch);
  randomize(model, 9, 0.2);

  const int N = 40;
  Mat Q = 0.5 * Mat::Random(2, N), V = 0.5 * Mat::Random(2, N), A(2, N);
  for (int j = 0; j < N; ++j)
    A.col(j) = -(K * Q.col(j) + naive_poly_grad(model.U.terms, model.U.coeffs,
                                                Q.col(j)));
  Mat R = residual_batch(model, lin, Q, V, A);
  REQUIRE(R.norm() < 1e-10);
}

TEST_CASE("scalar all-linear residual") {
  Mat K(1, 1), C(1, 1);
  K << 4.0;
  C << 0.3;
  auto lin = make_lin(K, C);
  Architecture arch;
  arch.n_mlps = 0;
  auto model = make_model(1, arch);
  Mat Q(1, 1), V(1, 1), A(1, 1);
  Q << 2.0;
  V << -1.0;
  A << 0.5;
  Mat R = residual_batch(model, lin, Q, V, A);
  REQUIRE(R(0, 0) == Catch::Approx(0.5 + 0.3 * -1.0 + 4.0 * 2.0));
}

TEST_CASE("loss matches a brute-force recomputation") {
  Mat K(2, 2), C(2, 2);
  K << 2.0, 0.1, 0.1, 3.0;
  C << 0.15, 0.02, 0.02, 0.2;
  auto lin = make_lin(K, C);
  Architecture arch;
  arch.hidden = {5, 3};
  arch.use_TNN = true;
  auto model = make_model(2, arch);
  randomize(model, 21, 0.4);

  const int N = 25;
  Mat Q = Mat::Random(2, N), V = Mat::Random(2, N), A = Mat::Random(2, N);
  TrainConfig cfg;
  cfg.penalty_weight = 0.7;
  const double l = loss(model, lin, Q, V, A, cfg);

  Mat M = m_nn(model);
  double S = 0.0, P = 0.0;
  for (int j = 0; j < N; ++j) {
    Vec q = Q.col(j), v = V.col(j), a = A.col(j);
    Vec res = a + M * a + C * v + K * q + naive_fn_grad(model.U, q) +
              naive_fn_grad(model.F, v);
    S += res.squaredNorm();
    const double kin = 0.5 * v.dot((Mat::Identity(2, 2) + M) * v);
    const double fhat = 0.5 * v.dot(C * v) + naive_fn(model.F, v);
    P += std::pow(std::max(0.0, -kin), 2) + std::pow(std::max(0.0, -fhat), 2);
  }
  REQUIRE(l == Catch::Approx(std::sqrt(S) + 0.7 * std::sqrt(P)).epsilon(1e-12));
  REQUIRE(P > 0.0);  // the randomized model should actually exercise J+
}

TEST_CASE("penalty is zero exactly when both energies stay nonnegative") {
  Mat K = Mat::Identity(2, 2);
  auto lin = make_lin(K, Mat());
  Architecture arch;
  arch.n_mlps = 0;
  arch.use_TNN = true;
  auto model = make_model(2, arch);
  Mat Q = Mat::Random(2, 10), V = Mat::Random(2, 10), A(2, 10);
  A = -(K * Q);  // zero residual for the zero model

  TrainConfig cfg;
  REQUIRE(loss(model, lin, Q, V, A, cfg) < 1e-12);

  // M_NN = -2I makes the kinetic form negative for any nonzero velocity
  model.T_coeffs.setZero();
  for (std::size_t t = 0; t < model.T_terms.size(); ++t)
    if (model.T_terms[t][0] == 2 || model.T_terms[t][1] == 2)
      model.T_coeffs(long(t)) = -1.0;
  REQUIRE((m_nn(model) + 2.0 * Mat::Identity(2, 2)).norm() < 1e-14);
  REQUIRE(loss(model, lin, Q, V, A, cfg) > 0.0);
}

TEST_CASE("glorot initialization bounds, zero coefficients, determinism") {
  Architecture arch;
  arch.hidden = {64};
  auto a1 = make_model(4, arch);
  glorot_init(a1, 77);
  const double bound = std::sqrt(6.0 / 68.0);
  REQUIRE(bound == Catch::Approx(0.2970).epsilon(1e-3));
  double wmax = 0.0;
  for (const auto& m : a1.U.mlps)
    wmax = std::max(wmax, m.W[0].cwiseAbs().maxCoeff());
  REQUIRE(wmax <= bound);
  REQUIRE(wmax > 0.5 * bound);  // actually filled
  REQUIRE(a1.U.coeffs.norm() == 0.0);
  REQUIRE(a1.U.mlps[0].out_scale == 0.0);
  REQUIRE(a1.U.mlps[0].b[0].norm() == 0.0);

  auto a2 = make_model(4, arch);
  glorot_init(a2, 77);
  REQUIRE((a1.pack() - a2.pack()).norm() == 0.0);
  auto a3 = make_model(4, arch);
  glorot_init(a3, 78);
  REQUIRE((a1.pack() - a3.pack()).norm() > 0.0);
}

TEST_CASE("adam step identities") {
  TrainConfig cfg;
  cfg.eta = 1e-3;
  Vec theta = Vec::Constant(3, 1.0);
  AdamState st;
  adam_step(theta, Vec::Zero(3), st, cfg);
  REQUIRE((theta - Vec::Constant(3, 1.0)).norm() == 0.0);

  // first real step: bias correction gives update eta * g / (|g| + eps)
  Vec g(3);
  g << 0.5, -2.0, 0.5;
  Vec before = theta;
  AdamState st2;
  adam_step(theta, g, st2, cfg);
  for (int i = 0; i < 3; ++i)
    REQUIRE(before(i) - theta(i) ==
            Catch::Approx(cfg.eta * g(i) / (std::abs(g(i)) + cfg.eps)).epsilon(1e-9));
  // identical gradients -> identical updates
  REQUIRE(theta(0) == theta(2));
}

TEST_CASE("parameter gradient of the full loss matches finite differences") {
  Mat K(2, 2), C(2, 2);
  K << 2.5, -0.2, -0.2, 1.8;
  C << 0.1, 0.01, 0.01, 0.12;
  Architecture arch;
  arch.hidden = {5, 4};
  arch.use_TNN = true;
  auto model = make_model(2, arch);
  CompiledLoss cl(model, K, C);

  const int N = 7;
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> uni(-0.8, 0.8);
  Mat Q(2, N), V(2, N), A(2, N);
  for (int j = 0; j < N; ++j)
    for (int i = 0; i < 2; ++i) {
      Q(i, j) = uni(rng);
      V(i, j) = uni(rng);
      A(i, j) = uni(rng);
    }

  // relative error measured vector-wise: componentwise ratios are dominated
  // by FD roundoff on near-zero entries
  const double w = 1.0, h = 1e-5;
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Vec theta(cl.n_theta());
    for (int i = 0; i < theta.size(); ++i) theta(i) = 0.3 * uni(rng);
    Vec grad;
    cl.loss_grad(theta, Q, V, A, w, grad);
    Vec fd(theta.size());
    for (int i = 0; i < theta.size(); ++i) {
      Vec tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      fd(i) = (cl.loss(tp, Q, V, A, w) - cl.loss(tm, Q, V, A, w)) / (2.0 * h);
    }
    worst = std::max(worst, (fd - grad).norm() / std::max(1.0, grad.norm()));
  }
  REQUIRE(worst <= 1e-5);
}

TEST_CASE("zero-initialized model reproduces the linear objective exactly") {
  Mat K(3, 3);
  K << 2.0, 0.1, 0.0, 0.1, 1.5, -0.2, 0.0, -0.2, 1.0;
  Mat C = 0.05 * K;
  auto lin = make_lin(K, C);
  Architecture arch;
  arch.hidden = {16, 8};
  auto model = make_model(3, arch);
  glorot_init(model, 4);

  Mat Q = Mat::Random(3, 60), V = Mat::Random(3, 60), A = Mat::Random(3, 60);
  TrainConfig cfg;
  const double l = loss(model, lin, Q, V, A, cfg);
  const double lin_obj = (A + C * V + K * Q).norm();
  REQUIRE(l == Catch::Approx(lin_obj).epsilon(1e-12));
}

namespace {

reduce::ReducedDataset synthetic_quartic_dataset(const Mat& K, unsigned seed,
                                                 int n_train, int n_val,
                                                 const std::vector<MultiIndex>& terms,
                                                 const Vec& coeffs) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-0.6, 0.6);
  const int N = n_train + n_val;
  const int r = int(K.rows());
  reduce::ReducedDataset ds;
  ds.Qhat.resize(r, N);
  ds.Qdot.resize(r, N);
  ds.Qddot.resize(r, N);
  for (int j = 0; j < N; ++j) {
    Vec q(r), v(r);
    for (int i = 0; i < r; ++i) {
      q(i) = uni(rng);
      v(i) = uni(rng);
    }
    ds.Qhat.col(j) = q;
    ds.Qdot.col(j) = v;
    ds.Qddot.col(j) = -(K * q + naive_poly_grad(terms, coeffs, q));
  }
  ds.dt = 1e-3;
  ds.valid.assign(std::size_t(N), true);
  ds.train = {0, n_train};
  ds.val = {n_train, N};
  ds.test = {N, N};
  return ds;
}

}  // namespace

TEST_CASE("training recovers a synthetic quartic potential") {
  Mat K(2, 2);
  K << 1.5, 0.2, 0.2, 2.0;
  auto lin = make_lin(K, Mat());
  auto terms = monomial_basis(2, {3, 4});
  Vec coeffs = Vec::Zero(long(terms.size()));
  coeffs(0) = 0.4;               // q1^3 family leader
  coeffs(long(terms.size()) - 1) = 0.3;  // q2^4
  auto ds = synthetic_quartic_dataset(K, 2024, 400, 100, terms, coeffs);

  Architecture arch;
  arch.n_mlps = 0;  // quartic truth is inside the polynomial span
  arch.use_FNN = false;
  TrainConfig cfg;
  cfg.eta = 2e-4;
  cfg.batch = 400;  // full batch: deterministic gradient, low noise floor
  cfg.epochs = 5000;
  cfg.seed = 5;
  auto result = train(ds, lin, arch, cfg);
  REQUIRE(result.best_val < 1e-4);
  REQUIRE(int(result.val_history.size()) == cfg.epochs);
  REQUIRE(result.best_epoch >= 0);
}

TEST_CASE("zero training epochs returns the linear prior") {
  Mat K = Mat::Identity(2, 2);
  auto lin = make_lin(K, Mat());
  auto terms = monomial_basis(2, {4});
  auto ds = synthetic_quartic_dataset(K, 3, 50, 10, terms,
                                      Vec::Zero(long(terms.size())));
  Architecture arch;
  arch.hidden = {8};
  arch.use_FNN = false;
  TrainConfig cfg;
  cfg.epochs = 0;
  auto result = train(ds, lin, arch, cfg);
  REQUIRE(result.model.U.coeffs.norm() == 0.0);
  REQUIRE(result.model.U.mlps[0].out_scale == 0.0);
  REQUIRE(result.train_history.empty());
}

TEST_CASE("fixed seed gives a bit-identical loss history") {
  Mat K(2, 2);
  K << 1.2, 0.1, 0.1, 0.9;
  auto lin = make_lin(K, Mat());
  auto terms = monomial_basis(2, {3});
  Vec coeffs = Vec::Zero(long(terms.size()));
  coeffs(1) = 0.25;
  auto ds = synthetic_quartic_dataset(K, 8, 120, 40, terms, coeffs);

  Architecture arch;
  arch.hidden = {6};
  arch.use_FNN = false;
  TrainConfig cfg;
  cfg.epochs = 12;
  cfg.batch = 40;
  cfg.seed = 99;
  auto r1 = train(ds, lin, arch, cfg);
  auto r2 = train(ds, lin, arch, cfg);
  REQUIRE(r1.train_history == r2.train_history);
  REQUIRE(r1.val_history == r2.val_history);
  REQUIRE((r1.model.pack() - r2.model.pack()).norm() == 0.0);
}
