#include "takin/kpspace.hpp"

#include <cmath>

namespace takin::kp {

namespace {

Eigen::Matrix3d rot_y(double a) {
  Eigen::Matrix3d r;
  r << std::cos(a), 0.0, std::sin(a), 0.0, 1.0, 0.0, -std::sin(a), 0.0, std::cos(a);
  return r;
}

Eigen::Matrix3d rot_x(double a) {
  Eigen::Matrix3d r;
  r << 1.0, 0.0, 0.0, 0.0, std::cos(a), -std::sin(a), 0.0, std::sin(a), std::cos(a);
  return r;
}

Eigen::Matrix3d rot_z(double a) {
  Eigen::Matrix3d r;
  r << std::cos(a), -std::sin(a), 0.0, std::sin(a), std::cos(a), 0.0, 0.0, 0.0, 1.0;
  return r;
}

Eigen::Matrix3d drot_y(double a) {
  Eigen::Matrix3d r;
  r << -std::sin(a), 0.0, std::cos(a), 0.0, 0.0, 0.0, -std::cos(a), 0.0, -std::sin(a);
  return r;
}

Eigen::Matrix3d drot_x(double a) {
  Eigen::Matrix3d r;
  r << 0.0, 0.0, 0.0, 0.0, -std::sin(a), -std::cos(a), 0.0, std::cos(a), -std::sin(a);
  return r;
}

Eigen::Matrix3d drot_z(double a) {
  Eigen::Matrix3d r;
  r << -std::sin(a), -std::cos(a), 0.0, std::cos(a), -std::sin(a), 0.0, 0.0, 0.0, 0.0;
  return r;
}

}  // namespace

Eigen::VectorXd KeypointSet::flatten() const {
  const int k = count();
  Eigen::VectorXd out(3 * k);
  for (int i = 0; i < k; ++i) out.segment<3>(3 * i) = points.row(i).transpose();
  return out;
}

KeypointSet KeypointSet::from_flat(const Eigen::VectorXd& values) {
  require(values.size() % 3 == 0, ErrorKind::dimension_mismatch,
          "flattened keypoints must have length divisible by 3");
  const int k = static_cast<int>(values.size()) / 3;
  KeypointSet set{Eigen::MatrixX3d(k, 3)};
  for (int i = 0; i < k; ++i) set.points.row(i) = values.segment<3>(3 * i).transpose();
  return set;
}

void KeypointSet::validate() const {
  require(count() >= kMinKeypointCount, ErrorKind::invalid_argument,
          "keypoint set needs at least 4 points");
  require(points.allFinite(), ErrorKind::numeric, "keypoint set contains non-finite entries");
}

Rotation Rotation::from_euler(double yaw, double pitch, double roll) {
  // Active rotation for row vectors: x * M == (Ry Rx Rz) x^T transposed back.
  const Eigen::Matrix3d column_form = rot_y(yaw) * rot_x(pitch) * rot_z(roll);
  return Rotation(column_form.transpose());
}

Rotation Rotation::from_matrix(const Eigen::Matrix3d& m) {
  require(m.allFinite(), ErrorKind::numeric, "rotation matrix contains non-finite entries");
  const double ortho = (m.transpose() * m - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  require(ortho <= 1e-9, ErrorKind::invalid_argument, "matrix is not orthonormal to 1e-9");
  require(std::abs(m.determinant() - 1.0) <= 1e-9, ErrorKind::invalid_argument,
          "matrix determinant is not +1 to 1e-9");
  return Rotation(m);
}

Eigen::Vector3d Rotation::to_euler() const {
  // Column form is m_^T = Ry Rx Rz, so (m^T)(1,2) = -sin(pitch).
  const double sin_pitch = -m_(2, 1);
  const double cos_pitch = std::sqrt(m_(0, 1) * m_(0, 1) + m_(1, 1) * m_(1, 1));
  require(cos_pitch > 1e-6, ErrorKind::numeric,
          "rotation is gimbal-adjacent (|pitch| ~ pi/2); yaw/roll are not recoverable");
  const double pitch = std::asin(std::clamp(sin_pitch, -1.0, 1.0));
  const double yaw = std::atan2(m_(2, 0), m_(2, 2));
  const double roll = std::atan2(m_(0, 1), m_(1, 1));
  return {yaw, pitch, roll};
}

void Rotation::euler_jacobian(double yaw, double pitch, double roll, Eigen::Matrix3d jac[3]) {
  jac[0] = (drot_y(yaw) * rot_x(pitch) * rot_z(roll)).transpose();
  jac[1] = (rot_y(yaw) * drot_x(pitch) * rot_z(roll)).transpose();
  jac[2] = (rot_y(yaw) * rot_x(pitch) * drot_z(roll)).transpose();
}

void MotionFactors::validate(double expression_limit) const {
  canonical.validate();
  require(expression.rows() == canonical.points.rows(), ErrorKind::dimension_mismatch,
          "expression and canonical keypoint counts differ");
  require(expression.allFinite(), ErrorKind::numeric, "expression contains non-finite entries");
  require(translation.allFinite(), ErrorKind::numeric, "translation contains non-finite entries");
  require(expression.cwiseAbs().maxCoeff() <= expression_limit, ErrorKind::invalid_argument,
          "expression deformation exceeds the configured limit");
}

KeypointSet compose(const MotionFactors& factors) {
  require(factors.expression.rows() == factors.canonical.points.rows(),
          ErrorKind::dimension_mismatch, "expression and canonical keypoint counts differ");
  KeypointSet out{factors.canonical.points * factors.rotation.matrix() + factors.expression};
  out.points.rowwise() += factors.translation.transpose();
  return out;
}

KeypointSet retarget(const MotionFactors& source, const MotionFactors& driving) {
  require(source.count() == driving.count(), ErrorKind::dimension_mismatch,
          "source and driving keypoint counts differ");
  return compose({source.canonical, driving.rotation, driving.expression, driving.translation});
}

MotionLatent latent_pack(const MotionFactors& factors) {
  const Eigen::Vector3d euler = factors.rotation.to_euler();
  require(std::abs(euler[1]) < M_PI / 2.0 - 1e-6, ErrorKind::numeric,
          "pitch outside the principal Euler branch; latent packing is ambiguous here");
  const int k = factors.count();
  MotionLatent latent{Eigen::VectorXd(MotionLatent::dimension(k))};
  latent.values.segment<3>(0) = euler;
  for (int i = 0; i < k; ++i)
    latent.values.segment<3>(3 + 3 * i) = factors.expression.row(i).transpose();
  latent.values.segment<3>(3 + 3 * k) = factors.translation;
  return latent;
}

MotionFactors latent_unpack(const MotionLatent& latent, const KeypointSet& canonical) {
  const int k = latent.keypoint_count();
  require(static_cast<int>(latent.values.size()) == MotionLatent::dimension(k) && k >= 1,
          ErrorKind::dimension_mismatch, "motion latent has invalid dimension");
  require(canonical.count() == k, ErrorKind::dimension_mismatch,
          "canonical keypoint count does not match latent dimension");
  MotionFactors factors;
  factors.canonical = canonical;
  factors.rotation =
      Rotation::from_euler(latent.values[0], latent.values[1], latent.values[2]);
  factors.expression.resize(k, 3);
  for (int i = 0; i < k; ++i)
    factors.expression.row(i) = latent.values.segment<3>(3 + 3 * i).transpose();
  factors.translation = latent.values.segment<3>(3 + 3 * k);
  return factors;
}

MotionFactors latent_unpack(const MotionLatent& latent, int k) {
  return latent_unpack(latent, KeypointSet::zero(k));
}

}  // namespace takin::kp
