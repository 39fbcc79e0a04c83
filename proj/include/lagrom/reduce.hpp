#pragma once

// POD basis construction, snapshot projection, eighth-order central finite
// differences for reduced velocities/accelerations, and the time-based
// train/validation/test split.

#include <Eigen/SVD>
#include <array>
#include <vector>

#include "lagrom/common.hpp"

namespace lagrom::reduce {

struct PodBasis {
  Mat V_r;                // n x r, orthonormal columns
  Vec singular_values;    // full descending spectrum
  int r = 0;
};

// Thin SVD of the position snapshots; column signs normalized so the
// largest-magnitude entry of each mode is positive.
inline PodBasis pod_basis(const Mat& Q, int r) {
  const int n = int(Q.rows());
  const int K = int(Q.cols());
  if (r < 1 || r > std::min(n, K))
    throw std::invalid_argument("pod_basis: r out of range");
  Eigen::BDCSVD<Mat> svd(Q, Eigen::ComputeThinU);
  PodBasis basis;
  basis.singular_values = svd.singularValues();
  basis.V_r = svd.matrixU().leftCols(r);
  basis.r = r;
  for (int j = 0; j < r; ++j) {
    int imax = 0;
    basis.V_r.col(j).cwiseAbs().maxCoeff(&imax);
    if (basis.V_r(imax, j) < 0.0) basis.V_r.col(j) = -basis.V_r.col(j);
  }
  return basis;
}

inline Mat project(const PodBasis& basis, const Mat& Q) {
  if (Q.rows() != basis.V_r.rows())
    throw DimensionMismatch("project: snapshot rows != basis rows");
  return basis.V_r.transpose() * Q;
}

inline Mat lift(const PodBasis& basis, const Mat& Qhat) {
  if (Qhat.rows() != basis.r)
    throw DimensionMismatch("lift: reduced rows != basis rank");
  return basis.V_r * Qhat;
}

// Eighth-order central stencils. The four columns on each boundary have no
// full stencil and are flagged invalid.
struct FdDerivatives {
  Mat Qdot;
  Mat Qddot;
  std::vector<bool> valid;
};

inline FdDerivatives fd_derivatives(const Mat& Qhat, double dt) {
  const int K = int(Qhat.cols());
  if (K < 9) throw std::invalid_argument("fd_derivatives: need at least 9 columns");
  if (dt <= 0.0) throw std::invalid_argument("fd_derivatives: dt must be positive");
  FdDerivatives out;
  out.Qdot = Mat::Zero(Qhat.rows(), K);
  out.Qddot = Mat::Zero(Qhat.rows(), K);
  out.valid.assign(std::size_t(K), false);
  constexpr std::array<double, 4> c1{4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0,
                                     -1.0 / 280.0};
  // the center weight -205/72 equals -2 * sum(c2), so the symmetric
  // difference form below is algebraically identical and exact on constants
  constexpr std::array<double, 4> c2{8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0,
                                     -1.0 / 560.0};
  for (int k = 4; k < K - 4; ++k) {
    Vec d1 = Vec::Zero(Qhat.rows());
    Vec d2 = Vec::Zero(Qhat.rows());
    for (int s = 1; s <= 4; ++s) {
      d1 += c1[std::size_t(s - 1)] * (Qhat.col(k + s) - Qhat.col(k - s));
      d2 += c2[std::size_t(s - 1)] * ((Qhat.col(k + s) - Qhat.col(k)) +
                                      (Qhat.col(k - s) - Qhat.col(k)));
    }
    out.Qdot.col(k) = d1 / dt;
    out.Qddot.col(k) = d2 / (dt * dt);
    out.valid[std::size_t(k)] = true;
  }
  return out;
}

struct ColumnRange {
  int begin = 0;  // inclusive
  int end = 0;    // exclusive
  int count() const { return end - begin; }
};

// Aligned reduced snapshots with derivatives and the time-based partition.
// Partition ranges index columns of the stored matrices; FD-invalid boundary
// columns are excluded from every partition.
struct ReducedDataset {
  Mat Qhat;
  Mat Qdot;
  Mat Qddot;
  double dt = 0.0;
  std::vector<bool> valid;
  ColumnRange train, val, test;

  Mat cols(const ColumnRange& range, const Mat& M) const {
    return M.middleCols(range.begin, range.count());
  }
  Mat train_Q() const { return cols(train, Qhat); }
  Mat train_Qdot() const { return cols(train, Qdot); }
  Mat train_Qddot() const { return cols(train, Qddot); }
  Mat val_Q() const { return cols(val, Qhat); }
  Mat val_Qdot() const { return cols(val, Qdot); }
  Mat val_Qddot() const { return cols(val, Qddot); }
};

// Labels columns train/val/test by time: train = [0, b0], val = (b0, b1],
// test = (b1, T]. Columns without a valid FD stencil are dropped.
inline ReducedDataset split_dataset(const Mat& Qhat, double dt,
                                    double train_end, double val_end) {
  if (!(train_end < val_end))
    throw std::invalid_argument("split_dataset: boundaries must be ordered");
  auto fd = fd_derivatives(Qhat, dt);
  const int K = int(Qhat.cols());
  std::vector<int> keep;
  keep.reserve(std::size_t(K));
  for (int k = 0; k < K; ++k)
    if (fd.valid[std::size_t(k)]) keep.push_back(k);

  ReducedDataset ds;
  ds.dt = dt;
  ds.Qhat.resize(Qhat.rows(), long(keep.size()));
  ds.Qdot.resize(Qhat.rows(), long(keep.size()));
  ds.Qddot.resize(Qhat.rows(), long(keep.size()));
  ds.valid.assign(keep.size(), true);
  int n_train = 0, n_val = 0;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const int k = keep[j];
    const double t = double(k) * dt;
    ds.Qhat.col(long(j)) = Qhat.col(k);
    ds.Qdot.col(long(j)) = fd.Qdot.col(k);
    ds.Qddot.col(long(j)) = fd.Qddot.col(k);
    if (t <= train_end)
      ++n_train;
    else if (t <= val_end)
      ++n_val;
  }
  ds.train = {0, n_train};
  ds.val = {n_train, n_train + n_val};
  ds.test = {n_train + n_val, int(keep.size())};
  if (ds.train.count() == 0 || ds.val.count() == 0 || ds.test.count() == 0)
    throw std::invalid_argument("split_dataset: empty partition");
  return ds;
}

}  // namespace lagrom::reduce
