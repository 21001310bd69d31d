#include "takin/gradcheck.hpp"

#include <cmath>

namespace takin::gradcheck {

Report grad_check_subset(const LossFn& loss, const Eigen::VectorXd& params,
                         const Eigen::VectorXd& analytic_grad,
                         const std::vector<Eigen::Index>& coords, double eps) {
  require(params.size() == analytic_grad.size(), ErrorKind::dimension_mismatch,
          "analytic gradient size does not match parameters");
  require(eps >= 1e-7 && eps <= 1e-3, ErrorKind::invalid_argument,
          "finite-difference step must lie in [1e-7, 1e-3]");

  Report report;
  Eigen::VectorXd probe = params;
  for (const Eigen::Index i : coords) {
    require(i >= 0 && i < params.size(), ErrorKind::invalid_argument,
            "finite-difference coordinate out of range");
    probe[i] = params[i] + eps;
    const double plus = loss(probe);
    probe[i] = params[i] - eps;
    const double minus = loss(probe);
    probe[i] = params[i];
    require(std::isfinite(plus) && std::isfinite(minus), ErrorKind::numeric,
            "loss is non-finite at a perturbed point");
    const double numeric = (plus - minus) / (2.0 * eps);
    const double analytic = analytic_grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), kRelErrorFloor});
    const double rel = std::abs(analytic - numeric) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
      report.analytic_at_worst = analytic;
      report.numeric_at_worst = numeric;
    }
  }
  return report;
}

Report grad_check(const LossFn& loss, const Eigen::VectorXd& params,
                  const Eigen::VectorXd& analytic_grad, double eps) {
  std::vector<Eigen::Index> coords(static_cast<std::size_t>(params.size()));
  for (Eigen::Index i = 0; i < params.size(); ++i) coords[static_cast<std::size_t>(i)] = i;
  return grad_check_subset(loss, params, analytic_grad, coords, eps);
}

}  // namespace takin::gradcheck
