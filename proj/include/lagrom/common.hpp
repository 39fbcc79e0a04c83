#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace lagrom {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct NonConvergence : std::runtime_error {
  int iterations;
  double final_norm;
  long step_index;  // -1 when not stepping a trajectory
  NonConvergence(int iters, double norm, long step = -1)
      : std::runtime_error("Newton iteration failed to converge after " +
                           std::to_string(iters) + " iterations (|r| = " +
                           std::to_string(norm) +
                           (step >= 0 ? ", step " + std::to_string(step) : "") +
                           ")"),
        iterations(iters),
        final_norm(norm),
        step_index(step) {}
};

}  // namespace lagrom
