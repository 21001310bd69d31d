#pragma once

#include <Eigen/Dense>

#include "takin/common.hpp"

// 3D implicit keypoint representation and its composition/retargeting algebra.
//
// Conventions:
//  - Keypoints are rows of a K x 3 matrix in a canonical [-1, 1]^3 cube.
//  - Rotations act on row vectors: composed = canonical * R + delta + t.
//    R is built from yaw (about +y), pitch (about +x), roll (about +z) so that
//    a row vector multiplied on the right undergoes the usual active rotation.
//  - Motion latents flatten (yaw, pitch, roll, delta row-major, t) into a
//    3K + 6 vector; the canonical set travels separately.

namespace takin::kp {

inline constexpr int kDefaultKeypointCount = 21;
inline constexpr int kMinKeypointCount = 4;
inline constexpr int kMaxKeypointCount = 64;
inline constexpr double kDefaultExpressionLimit = 0.5;

// Indices of the designated lip keypoints (upper, lower); the distance
// between them is the lip-aperture scalar used for sync evaluation.
inline int lip_upper_index(int k) { return k - 2; }
inline int lip_lower_index(int k) { return k - 1; }

struct KeypointSet {
  Eigen::MatrixX3d points;

  int count() const { return static_cast<int>(points.rows()); }

  static KeypointSet zero(int k) { return {Eigen::MatrixX3d::Zero(k, 3)}; }

  // Flattened row-major view (k0x k0y k0z k1x ...).
  Eigen::VectorXd flatten() const;
  static KeypointSet from_flat(const Eigen::VectorXd& values);

  void validate() const;  // finite entries, K >= 4
};

class Rotation {
 public:
  Rotation() : m_(Eigen::Matrix3d::Identity()) {}

  static Rotation identity() { return Rotation(); }
  static Rotation from_euler(double yaw, double pitch, double roll);
  // Validates orthonormality and det = +1 to 1e-9.
  static Rotation from_matrix(const Eigen::Matrix3d& m);

  // (yaw, pitch, roll) on the principal branch; throws when |cos(pitch)|
  // is too small to recover yaw/roll.
  Eigen::Vector3d to_euler() const;

  const Eigen::Matrix3d& matrix() const { return m_; }

  // Derivatives of the matrix with respect to yaw/pitch/roll at the given
  // angles, in the same row-vector convention.
  static void euler_jacobian(double yaw, double pitch, double roll, Eigen::Matrix3d jac[3]);

 private:
  explicit Rotation(const Eigen::Matrix3d& m) : m_(m) {}
  Eigen::Matrix3d m_;
};

struct MotionFactors {
  KeypointSet canonical;
  Rotation rotation;
  Eigen::MatrixX3d expression;  // per-keypoint deformation, applied after rotation
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  int count() const { return canonical.count(); }

  // Checks shape agreement, finiteness and the expression bound.
  void validate(double expression_limit = kDefaultExpressionLimit) const;
};

struct MotionLatent {
  Eigen::VectorXd values;  // yaw, pitch, roll, delta (row-major), t

  int keypoint_count() const { return (static_cast<int>(values.size()) - 6) / 3; }

  static int dimension(int k) { return 3 * k + 6; }
};

KeypointSet compose(const MotionFactors& factors);

// Applies the driving motion (pose, expression, translation) to the source
// canonical geometry.
KeypointSet retarget(const MotionFactors& source, const MotionFactors& driving);

MotionLatent latent_pack(const MotionFactors& factors);

// Reattaches the given canonical set; pass KeypointSet::zero(k) when only the
// motion part matters.
MotionFactors latent_unpack(const MotionLatent& latent, const KeypointSet& canonical);
MotionFactors latent_unpack(const MotionLatent& latent, int k);

}  // namespace takin::kp
