#include "takin/losses.hpp"

#include <cmath>

#include "takin/prng.hpp"

namespace takin::losses {

void LandmarkSet::validate() const {
  require(count() >= 1, ErrorKind::invalid_argument, "landmark set is empty");
  require(points.allFinite(), ErrorKind::numeric, "landmark set contains non-finite entries");
}

double huber_scalar(double e, double delta) {
  const double ae = std::abs(e);
  return ae <= delta ? 0.5 * e * e : delta * (ae - 0.5 * delta);
}

double huber_scalar_grad(double e, double delta) {
  return std::clamp(e, -delta, delta);
}

double huber(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double delta) {
  require(a.size() == b.size(), ErrorKind::dimension_mismatch, "huber inputs differ in length");
  require(a.size() > 0, ErrorKind::invalid_argument, "huber inputs are empty");
  require(delta > 0.0, ErrorKind::invalid_argument, "huber delta must be positive");
  return huber_sum(a, b, delta) / static_cast<double>(a.size());
}

double huber_sum(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double delta) {
  require(a.size() == b.size(), ErrorKind::dimension_mismatch, "huber inputs differ in length");
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) total += huber_scalar(a[i] - b[i], delta);
  return total;
}

double canonical_loss(const kp::KeypointSet& canon_i, const kp::KeypointSet& canon_j,
                      double delta) {
  require(canon_i.count() == canon_j.count(), ErrorKind::dimension_mismatch,
          "canonical sets differ in keypoint count");
  const int k = canon_i.count();
  double total = 0.0;
  for (int r = 0; r < k; ++r)
    total += huber_sum(canon_i.points.row(r).transpose(), canon_j.points.row(r).transpose(),
                       delta);
  return total / static_cast<double>(k);
}

double landmark_loss(const LandmarkSet& landmarks_s, const LandmarkSet& landmarks_d,
                     const kp::KeypointSet& x_s, const kp::KeypointSet& x_d,
                     const std::vector<int>& indices, double delta, LandmarkPairing pairing) {
  const int n = static_cast<int>(indices.size());
  require(n >= 1, ErrorKind::invalid_argument, "landmark index map is empty");
  require(landmarks_s.count() == n && landmarks_d.count() == n, ErrorKind::dimension_mismatch,
          "landmark count does not match the index map");
  require(x_s.count() == x_d.count(), ErrorKind::dimension_mismatch,
          "source and driving keypoint counts differ");
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const int idx = indices[static_cast<std::size_t>(i)];
    require(idx >= 0 && idx < x_s.count(), ErrorKind::invalid_argument,
            "landmark index out of keypoint range");
    const Eigen::Vector2d ls = landmarks_s.points.row(i).transpose();
    const Eigen::Vector2d ld = pairing == LandmarkPairing::per_frame
                                   ? Eigen::Vector2d(landmarks_d.points.row(i).transpose())
                                   : ls;
    const Eigen::Vector2d ks = x_s.points.row(idx).head<2>().transpose();
    const Eigen::Vector2d kd = x_d.points.row(idx).head<2>().transpose();
    total += huber_sum(ls, ks, delta) + huber_sum(ld, kd, delta);
  }
  return total / (2.0 * n);
}

double recon_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(),
          ErrorKind::dimension_mismatch, "reconstruction shapes differ");
  require(pred.size() > 0, ErrorKind::invalid_argument, "reconstruction inputs are empty");
  return (pred - target).squaredNorm() / static_cast<double>(pred.size());
}

Eigen::MatrixXd percep_projection(int input_dim, std::uint64_t seed) {
  require(input_dim >= 1, ErrorKind::invalid_argument, "projection input dim must be >= 1");
  Xoshiro256 rng(seed);
  Eigen::MatrixXd p(kPercepDims, input_dim);
  const double scale = 1.0 / std::sqrt(static_cast<double>(input_dim));
  for (int r = 0; r < kPercepDims; ++r)
    for (int c = 0; c < input_dim; ++c) p(r, c) = rng.gaussian() * scale;
  return p;
}

namespace {

// Row-major flatten; matches the training graph's flatten convention.
Eigen::VectorXd flatten_rows(const Eigen::MatrixXd& m) {
  Eigen::VectorXd out(m.size());
  Eigen::Index at = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) out[at++] = m(r, c);
  return out;
}

}  // namespace

double percep_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                   std::uint64_t seed) {
  require(pred.rows() == target.rows() && pred.cols() == target.cols(),
          ErrorKind::dimension_mismatch, "perceptual input shapes differ");
  const int n = static_cast<int>(pred.size());
  const Eigen::MatrixXd p = percep_projection(n, seed);
  return (p * flatten_rows(pred) - p * flatten_rows(target)).squaredNorm() /
         static_cast<double>(kPercepDims);
}

Eigen::Matrix2d Similarity2D::matrix() const {
  Eigen::Matrix2d m;
  m << std::cos(angle), -std::sin(angle), std::sin(angle), std::cos(angle);
  return scale * m;
}

Eigen::VectorXd apply_similarity(const Similarity2D& tf, const Eigen::VectorXd& flat) {
  require(flat.size() % 3 == 0, ErrorKind::dimension_mismatch,
          "observation is not a flattened K x 3 keypoint set");
  const Eigen::Matrix2d m = tf.matrix();
  Eigen::VectorXd out = flat;
  for (Eigen::Index i = 0; i + 2 < flat.size(); i += 3)
    out.segment<2>(i) = m * flat.segment<2>(i);
  return out;
}

double equivariance_loss(const KeypointFn& keypoints, const Eigen::VectorXd& frame,
                         const Similarity2D& tf, double delta) {
  const kp::KeypointSet direct = keypoints(frame);
  const kp::KeypointSet transformed_first = keypoints(apply_similarity(tf, frame));
  require(direct.count() == transformed_first.count(), ErrorKind::dimension_mismatch,
          "encoder returned inconsistent keypoint counts");
  const Eigen::Matrix2d m = tf.matrix();
  double total = 0.0;
  for (int r = 0; r < direct.count(); ++r) {
    const Eigen::Vector2d expected = m * direct.points.row(r).head<2>().transpose();
    const Eigen::Vector2d actual = transformed_first.points.row(r).head<2>().transpose();
    total += huber_sum(expected, actual, delta);
  }
  return total / static_cast<double>(direct.count());
}

double keypoint_prior_penalty(const kp::KeypointSet& keypoints, double floor_dist) {
  const int k = keypoints.count();
  require(k >= 2, ErrorKind::invalid_argument, "keypoint prior needs at least two points");
  double total = 0.0;
  int pairs = 0;
  for (int i = 0; i < k; ++i)
    for (int j = i + 1; j < k; ++j) {
      const double d = (keypoints.points.row(i) - keypoints.points.row(j)).norm();
      total += std::max(0.0, floor_dist - d);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

double deformation_prior(const Eigen::MatrixX3d& expression) {
  require(expression.size() > 0, ErrorKind::invalid_argument, "expression is empty");
  return expression.cwiseAbs().mean();
}

double total_loss(const LossParts& parts, const LossWeights& weights) {
  const auto check = [](double value, const char* name) {
    if (!std::isfinite(value))
      fail(ErrorKind::numeric, std::string("total_loss: non-finite term ") + name);
    return value;
  };
  double total = weights.recon * check(parts.recon, "loss.recon") +
                 weights.percep * check(parts.percep, "loss.percep") +
                 weights.canonical * check(parts.canonical, "loss.canonical") +
                 weights.landmark * check(parts.landmark, "loss.landmark");
  if (parts.equivariance)
    total += weights.equivariance * check(*parts.equivariance, "loss.equivariance");
  if (parts.keypoint_prior)
    total += weights.keypoint_prior * check(*parts.keypoint_prior, "loss.keypoint_prior");
  if (parts.deformation)
    total += weights.deformation * check(*parts.deformation, "loss.deformation");
  return total;
}

}  // namespace takin::losses
