#pragma once

#include <Eigen/Dense>
#include <functional>
#include <optional>
#include <vector>

#include "takin/common.hpp"
#include "takin/kpspace.hpp"

// Stage-1 training objectives.
//
// Huber conventions: huber() averages the elementwise kernel over all
// components. The keypoint losses follow the per-point form: each keypoint
// (or landmark) contributes the kernel summed over its coordinate dims, and
// the loss averages those contributions (1/K resp. 1/2N). A uniform offset
// of 0.1 on every coordinate therefore gives a canonical loss of
// 3 * 0.5 * 0.01 = 0.015 regardless of K.

namespace takin::losses {

inline constexpr double kDefaultHuberDelta = 1.0;
inline constexpr std::uint64_t kDefaultPercepSeed = 0x7A51CABF00D5EEDULL;
inline constexpr int kPercepDims = 16;
inline constexpr double kKeypointPriorFloor = 0.05;

struct LossWeights {
  double recon = 0.1;
  double percep = 1.0;
  double canonical = 0.2;
  double landmark = 0.2;
  double equivariance = 0.01;
  double keypoint_prior = 0.01;
  double deformation = 0.01;
};

struct LandmarkSet {
  Eigen::MatrixX2d points;

  int count() const { return static_cast<int>(points.rows()); }
  void validate() const;
};

// Elementwise kernel: 0.5 e^2 inside |e| <= delta, delta (|e| - 0.5 delta) outside.
double huber_scalar(double e, double delta = kDefaultHuberDelta);
double huber_scalar_grad(double e, double delta = kDefaultHuberDelta);

// Mean of the kernel over components.
double huber(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
             double delta = kDefaultHuberDelta);

// Sum of the kernel over components (per-keypoint contribution).
double huber_sum(const Eigen::VectorXd& a, const Eigen::VectorXd& b,
                 double delta = kDefaultHuberDelta);

double canonical_loss(const kp::KeypointSet& canon_i, const kp::KeypointSet& canon_j,
                      double delta = kDefaultHuberDelta);

// Eq-as-printed pairs both frames' keypoints with one landmark set; the
// per-frame reading (the default) pairs each frame with its own landmarks.
enum class LandmarkPairing { per_frame, shared_source };

double landmark_loss(const LandmarkSet& landmarks_s, const LandmarkSet& landmarks_d,
                     const kp::KeypointSet& x_s, const kp::KeypointSet& x_d,
                     const std::vector<int>& indices, double delta = kDefaultHuberDelta,
                     LandmarkPairing pairing = LandmarkPairing::per_frame);

// Mean squared error over all entries; shapes must agree.
double recon_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target);

// Frozen random projection standing in for a pretrained feature extractor:
// MSE over kPercepDims after projecting the flattened inputs with a seeded
// Gaussian matrix (entries N(0, 1/sqrt(n))). Not equivalent to a perceptual
// network; it preserves the objective's structure and weighting only.
Eigen::MatrixXd percep_projection(int input_dim, std::uint64_t seed = kDefaultPercepSeed);
double percep_loss(const Eigen::MatrixXd& pred, const Eigen::MatrixXd& target,
                   std::uint64_t seed = kDefaultPercepSeed);

struct Similarity2D {
  double angle = 0.0;  // radians, |angle| <= pi/6 in training
  double scale = 1.0;  // [0.8, 1.25] in training

  Eigen::Matrix2d matrix() const;
};

// Applies the similarity to the xy dims of a flattened keypoint observation.
Eigen::VectorXd apply_similarity(const Similarity2D& tf, const Eigen::VectorXd& flat_keypoints);

using KeypointFn = std::function<kp::KeypointSet(const Eigen::VectorXd&)>;

// huber between tf(keypoints(frame)).xy and keypoints(tf(frame)).xy,
// averaged per keypoint like canonical_loss.
double equivariance_loss(const KeypointFn& keypoints, const Eigen::VectorXd& frame,
                         const Similarity2D& tf, double delta = kDefaultHuberDelta);

// Mean over pairs of max(0, floor - ||x_i - x_j||).
double keypoint_prior_penalty(const kp::KeypointSet& keypoints,
                              double floor_dist = kKeypointPriorFloor);

// Mean absolute deformation.
double deformation_prior(const Eigen::MatrixX3d& expression);

struct LossParts {
  double recon = 0.0;
  double percep = 0.0;
  double canonical = 0.0;
  double landmark = 0.0;
  std::optional<double> equivariance;
  std::optional<double> keypoint_prior;
  std::optional<double> deformation;
};

// Weighted sum of the parts; throws naming the offending term on NaN/Inf.
double total_loss(const LossParts& parts, const LossWeights& weights = {});

}  // namespace takin::losses
