#pragma once

// Inference of SPD linear reduced operators from reduced trajectory data.
// The SPD-constrained Frobenius fit is solved by parametrizing
// K = L_K L_K' + eps I (and likewise C) with triangular factors and running
// L-BFGS on the smooth objective, starting from the SPD projection of the
// unconstrained symmetric least-squares solution.

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <deque>
#include <optional>

#include "lagrom/common.hpp"
#include "lagrom/reduce.hpp"

namespace lagrom::lopinf {

struct LinearLagrangianRom {
  int r = 0;
  Mat K;
  std::optional<Mat> C;  // absent for conservative systems
  double eps = 1e-8;
  double residual_norm = 0.0;  // achieved Frobenius objective
  double regressor_condition = 0.0;
  bool ill_conditioned = false;

  Mat damping_or_zero() const { return C ? *C : Mat::Zero(r, r); }
};

struct OptimizerStall : std::runtime_error {
  double gradient_norm;
  explicit OptimizerStall(double g)
      : std::runtime_error("lopinf: constrained solve stalled with |g| = " +
                           std::to_string(g)),
        gradient_norm(g) {}
};

// Symmetrize, then clip eigenvalues from below at eps.
inline Mat nearest_spd(const Mat& A, double eps = 1e-8) {
  Mat S = 0.5 * (A + A.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(S);
  Vec lam = eig.eigenvalues().cwiseMax(eps);
  return eig.eigenvectors() * lam.asDiagonal() * eig.eigenvectors().transpose();
}

namespace detail {

// unconstrained least squares over symmetric K (and C): normal equations in
// the vech parametrization
inline void symmetric_ls(const Mat& Q, const Mat& Qd, const Mat& Qdd,
                         bool with_damping, Mat& K_out, Mat& C_out) {
  const int r = int(Q.rows());
  const int m1 = r * (r + 1) / 2;
  const int m = with_damping ? 2 * m1 : m1;
  // basis index -> (p, q) with p <= q
  std::vector<std::pair<int, int>> idx;
  idx.reserve(std::size_t(m1));
  for (int p = 0; p < r; ++p)
    for (int q = p; q < r; ++q) idx.emplace_back(p, q);

  Mat AtA = Mat::Zero(m, m);
  Vec Atb = Vec::Zero(m);
  Mat rows(m, r);  // per column: contribution of each unknown to the residual
  for (int j = 0; j < Q.cols(); ++j) {
    rows.setZero();
    for (int t = 0; t < m1; ++t) {
      const auto [p, q] = idx[std::size_t(t)];
      rows(t, p) += Q(q, j);
      rows(t, q) += (p == q) ? 0.0 : Q(p, j);
      if (with_damping) {
        rows(m1 + t, p) += Qd(q, j);
        rows(m1 + t, q) += (p == q) ? 0.0 : Qd(p, j);
      }
    }
    AtA.selfadjointView<Eigen::Lower>().rankUpdate(rows);
    Atb -= rows * Qdd.col(j);
  }
  Vec x = Mat(AtA.selfadjointView<Eigen::Lower>()).ldlt().solve(Atb);
  K_out = Mat::Zero(r, r);
  C_out = Mat::Zero(r, r);
  for (int t = 0; t < m1; ++t) {
    const auto [p, q] = idx[std::size_t(t)];
    K_out(p, q) = K_out(q, p) = x(t);
    if (with_damping) C_out(p, q) = C_out(q, p) = x(m1 + t);
  }
}

// Objective ||Qdd + C Qd + K Q||_F^2 with K = L_K L_K' + eps I etc.
// Parameters are the stacked lower-triangular entries of the factors.
class CholeskyObjective {
 public:
  CholeskyObjective(const Mat& Q, const Mat& Qd, const Mat& Qdd,
                    bool with_damping, double eps)
      : Q_(Q), Qd_(Qd), Qdd_(Qdd), with_damping_(with_damping), eps_(eps),
        r_(int(Q.rows())), m1_(r_ * (r_ + 1) / 2) {}

  int dim() const { return with_damping_ ? 2 * m1_ : m1_; }

  Mat unpack(const Vec& x, int offset) const {
    Mat L = Mat::Zero(r_, r_);
    int t = offset;
    for (int cc = 0; cc < r_; ++cc)
      for (int rr = cc; rr < r_; ++rr) L(rr, cc) = x(t++);
    return L;
  }
  Vec pack(const Mat& LK, const Mat* LC) const {
    Vec x(dim());
    int t = 0;
    for (int cc = 0; cc < r_; ++cc)
      for (int rr = cc; rr < r_; ++rr) x(t++) = LK(rr, cc);
    if (LC)
      for (int cc = 0; cc < r_; ++cc)
        for (int rr = cc; rr < r_; ++rr) x(t++) = (*LC)(rr, cc);
    return x;
  }

  double value_grad(const Vec& x, Vec& grad) const {
    Mat LK = unpack(x, 0);
    Mat K = LK * LK.transpose() + eps_ * Mat::Identity(r_, r_);
    Mat R = Qdd_ + K * Q_;
    Mat LC;
    if (with_damping_) {
      LC = unpack(x, m1_);
      R += (LC * LC.transpose() + eps_ * Mat::Identity(r_, r_)) * Qd_;
    }
    const double f = R.squaredNorm();
    Mat GK = 2.0 * R * Q_.transpose();      // dF/dK before symmetrization
    Mat dLK = (GK + GK.transpose()) * LK;   // chain rule through L L'
    grad.resize(dim());
    int t = 0;
    for (int cc = 0; cc < r_; ++cc)
      for (int rr = cc; rr < r_; ++rr) grad(t++) = dLK(rr, cc);
    if (with_damping_) {
      Mat GC = 2.0 * R * Qd_.transpose();
      Mat dLC = (GC + GC.transpose()) * LC;
      for (int cc = 0; cc < r_; ++cc)
        for (int rr = cc; rr < r_; ++rr) grad(t++) = dLC(rr, cc);
    }
    return f;
  }

 private:
  const Mat &Q_, &Qd_, &Qdd_;
  bool with_damping_;
  double eps_;
  int r_, m1_;
};

// plain two-loop L-BFGS with Armijo backtracking
inline Vec lbfgs(const CholeskyObjective& obj, Vec x, int max_iters = 2000) {
  const int mem = 10;
  std::deque<Vec> s_hist, y_hist;
  Vec g, g_new;
  double f = obj.value_grad(x, g);
  double f_prev_window = f;
  int window_start = 0;
  for (int it = 0; it < max_iters; ++it) {
    if (g.norm() < 1e-10) break;
    if (it - window_start >= 50) {
      if (f_prev_window - f < 1e-12 * std::max(1.0, std::abs(f))) break;
      f_prev_window = f;
      window_start = it;
    }
    // two-loop recursion
    Vec q = g;
    std::vector<double> alpha(s_hist.size());
    for (int i = int(s_hist.size()) - 1; i >= 0; --i) {
      const double rho =
          1.0 / y_hist[std::size_t(i)].dot(s_hist[std::size_t(i)]);
      alpha[std::size_t(i)] = rho * s_hist[std::size_t(i)].dot(q);
      q -= alpha[std::size_t(i)] * y_hist[std::size_t(i)];
    }
    if (!s_hist.empty()) {
      const Vec& s = s_hist.back();
      const Vec& y = y_hist.back();
      q *= s.dot(y) / y.squaredNorm();
    }
    for (std::size_t i = 0; i < s_hist.size(); ++i) {
      const double rho = 1.0 / y_hist[i].dot(s_hist[i]);
      const double beta = rho * y_hist[i].dot(q);
      q += (alpha[i] - beta) * s_hist[i];
    }
    Vec d = -q;
    if (d.dot(g) >= 0.0) d = -g;  // fall back to steepest descent

    double step = 1.0;
    const double slope = g.dot(d);
    double f_new = 0.0;
    bool ok = false;
    for (int ls = 0; ls < 40; ++ls) {
      Vec x_new = x + step * d;
      f_new = obj.value_grad(x_new, g_new);
      if (std::isfinite(f_new) && f_new <= f + 1e-4 * step * slope) {
        if (s_hist.size() == std::size_t(mem)) {
          s_hist.pop_front();
          y_hist.pop_front();
        }
        Vec s = step * d;
        Vec y = g_new - g;
        if (s.dot(y) > 1e-14 * s.norm() * y.norm()) {
          s_hist.push_back(s);
          y_hist.push_back(y);
        }
        x = std::move(x_new);
        f = f_new;
        g = g_new;
        ok = true;
        break;
      }
      step *= 0.5;
    }
    if (!ok) break;  // no descent found at machine precision
  }
  return x;
}

}  // namespace detail

// Fits qdd + C qd + K q = 0 over the training columns with K, C symmetric
// and K - eps I, C - eps I PSD. The conservative flag drops C entirely.
inline LinearLagrangianRom infer_linear(const reduce::ReducedDataset& data,
                                        bool conservative, double eps = 1e-8) {
  const Mat Q = data.train_Q();
  const Mat Qd = data.train_Qdot();
  const Mat Qdd = data.train_Qddot();
  const int r = int(Q.rows());
  if (int(Q.cols()) < r * (r + 1))
    throw std::invalid_argument("infer_linear: not enough training columns");

  LinearLagrangianRom rom;
  rom.r = r;
  rom.eps = eps;

  // regressor conditioning (reported, not fatal)
  Mat regressor = conservative ? Q : Mat(2 * r, Q.cols());
  if (!conservative) {
    regressor.topRows(r) = Q;
    regressor.bottomRows(r) = Qd;
  }
  Eigen::JacobiSVD<Mat> svd(regressor.transpose());
  const auto& sv = svd.singularValues();
  rom.regressor_condition = sv(0) / std::max(sv(sv.size() - 1), 1e-300);
  rom.ill_conditioned = rom.regressor_condition > 1e12;

  Mat K0, C0;
  detail::symmetric_ls(Q, Qd, Qdd, !conservative, K0, C0);
  Mat K_init = nearest_spd(K0, eps);
  Mat C_init = conservative ? Mat() : nearest_spd(C0, eps);

  detail::CholeskyObjective obj(Q, Qd, Qdd, !conservative, eps);
  auto factor = [eps, r](const Mat& S) {
    // S - eps I is PSD by construction; jitter for a strict factorization
    Mat body = S - eps * Mat::Identity(r, r) + 1e-12 * Mat::Identity(r, r);
    Eigen::LLT<Mat> llt(body);
    if (llt.info() == Eigen::Success) return Mat(llt.matrixL());
    Eigen::SelfAdjointEigenSolver<Mat> eig(body);
    Mat root = eig.eigenvectors() *
               eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal();
    Eigen::HouseholderQR<Mat> qr(root.transpose());
    Mat L = Mat(qr.matrixQR().triangularView<Eigen::Upper>()).transpose();
    return L;
  };
  Mat LK = factor(K_init);
  Vec x0 = conservative ? obj.pack(LK, nullptr)
                        : [&] {
                            Mat LC = factor(C_init);
                            return obj.pack(LK, &LC);
                          }();
  Vec x = detail::lbfgs(obj, x0);

  Vec g;
  const double f_final = obj.value_grad(x, g);
  Vec g0;
  const double f_init = obj.value_grad(x0, g0);
  if (!(f_final <= f_init * (1.0 + 1e-12) + 1e-300)) throw OptimizerStall(g.norm());

  Mat LK_fin = obj.unpack(x, 0);
  rom.K = LK_fin * LK_fin.transpose() + eps * Mat::Identity(r, r);
  if (!conservative) {
    Mat LC_fin = obj.unpack(x, r * (r + 1) / 2);
    rom.C = LC_fin * LC_fin.transpose() + eps * Mat::Identity(r, r);
  }
  rom.residual_norm = std::sqrt(f_final);
  return rom;
}

}  // namespace lagrom::lopinf
