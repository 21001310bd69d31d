#pragma once

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "takin/common.hpp"

// Central finite-difference verification of analytic gradients. This is the
// oracle side of every gradient in the project: training always uses the
// reverse-mode path, and these checks only validate it.

namespace takin::gradcheck {

using LossFn = std::function<double(const Eigen::VectorXd&)>;

struct Report {
  double max_rel_error = 0.0;
  Eigen::Index worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

// Relative error per coordinate: |a - fd| / max(|a|, |fd|, floor).
inline constexpr double kRelErrorFloor = 1e-3;

Report grad_check(const LossFn& loss, const Eigen::VectorXd& params,
                  const Eigen::VectorXd& analytic_grad, double eps = 1e-5);

// Checks only the listed coordinates; used when the parameter vector is
// large and the full sweep would dominate runtime.
Report grad_check_subset(const LossFn& loss, const Eigen::VectorXd& params,
                         const Eigen::VectorXd& analytic_grad,
                         const std::vector<Eigen::Index>& coords, double eps = 1e-5);

}  // namespace takin::gradcheck
