#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "takin/autodiff.hpp"
#include "takin/kpspace.hpp"
#include "takin/losses.hpp"
#include "takin/synthrig.hpp"

// Stage 1: a small per-head encoder that factorizes flattened keypoint
// observations into (canonical, pose, expression, translation), trained
// self-supervised by reconstructing the target frame from the source
// canonical plus the target motion. Heads are fully separate two-layer MLPs
// so that leakage between factors is attributable.

namespace takin::stage1 {

struct EncoderConfig {
  int k = kp::kDefaultKeypointCount;
  int hidden = 128;
  double expression_limit = kp::kDefaultExpressionLimit;
  // tanh output bounds for yaw/pitch/roll; pitch stays inside the principal
  // Euler branch by construction.
  Eigen::RowVector3d pose_limits{1.5, 1.5, 1.5};
};

struct EncoderModel {
  EncoderConfig cfg;
  ad::ParamStore params;
  // Handle layout per head: w1, b1, w2, b2.
  int canonical[4], pose[4], expression[4], translation[4];

  int obs_dim() const { return 3 * cfg.k; }
  std::size_t param_count() const { return params.scalar_count(); }

  static EncoderModel init(const EncoderConfig& cfg, std::uint64_t seed);
};

kp::MotionFactors encode(const EncoderModel& model, const Eigen::VectorXd& observation);

// Composed keypoints of the encoded factors; the encoder's keypoint view
// used by the equivariance loss and the metrics.
kp::KeypointSet encode_keypoints(const EncoderModel& model, const Eigen::VectorXd& observation);

struct TrainConfig {
  int steps = 5000;
  int batch = 32;
  double learning_rate = 1e-3;
  losses::LossWeights weights;
  bool use_canonical = true;
  bool use_landmark = true;
  bool use_equivariance = true;
  losses::LandmarkPairing pairing = losses::LandmarkPairing::per_frame;
  std::uint64_t seed = 0;

  EncoderConfig encoder;

  // Synthetic data pool.
  int identities = 6;
  int episodes_per_identity = 3;
  int episode_frames = 120;
  double noise_sigma = 0.005;
};

struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;
  double percep = 0.0;
  double canonical = 0.0;
  double landmark = 0.0;
  double equivariance = 0.0;
  double keypoint_prior = 0.0;
  double deformation = 0.0;

  std::map<std::string, double> as_map() const;
};

struct BatchElement {
  Eigen::VectorXd obs_source;
  Eigen::VectorXd obs_target;
  Eigen::VectorXd obs_second;  // same identity, different episode
  losses::LandmarkSet lm_source;
  losses::LandmarkSet lm_target;
  std::vector<int> landmark_indices;
  losses::Similarity2D tf;
};

// Forward + reverse pass over one batch; gradients (per ParamStore entry)
// are returned when grads is non-null. Shared by training and the
// finite-difference suite.
LossBreakdown batch_loss(const EncoderModel& model, const std::vector<BatchElement>& batch,
                         const TrainConfig& cfg, std::vector<Eigen::MatrixXd>* grads);

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  LossBreakdown step();  // one SGD+momentum update
  std::vector<BatchElement> sample_batch();

  const EncoderModel& model() const { return model_; }
  EncoderModel& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  const std::vector<std::vector<rig::RigEpisode>>& pool() const { return pool_; }

 private:
  TrainConfig cfg_;
  EncoderModel model_;
  ad::SgdMomentum optimizer_;
  Xoshiro256 rng_;
  std::vector<std::vector<rig::RigEpisode>> pool_;  // [identity][episode]
};

struct TrainResult {
  EncoderModel model;
  std::vector<LossBreakdown> history;
};

TrainResult train(const TrainConfig& cfg,
                  const std::function<void(int, const LossBreakdown&)>& on_step = {});

// Metrics. The encoder abstraction receives the episode and frame index so
// oracle decomposers (rig lookups) fit the same interface as real models.
using FrameEncoder = std::function<kp::MotionFactors(const rig::RigEpisode&, int frame)>;

FrameEncoder model_encoder(const EncoderModel& model);
FrameEncoder oracle_encoder();
FrameEncoder observation_as_canonical_encoder();

struct MetricOptions {
  int identities = 6;
  int episodes_per_identity = 2;
  int episode_frames = 120;
  double noise_sigma = 0.005;
  double subtle_expression_scale = 0.18;  // keeps |delta| under ~0.05
  std::uint64_t seed = 0x5EED;
};

// Mean canonical-estimate distance across same-identity frames with
// maximally different expressions, normalized by the mean cross-identity
// canonical distance. 0 = no leakage.
double leakage_metric(const FrameEncoder& encoder, const MetricOptions& options, int n_pairs);

// Mean xy error at landmark indices between retargeted keypoints and the rig
// ground truth, on low-amplitude-expression episodes.
double subtle_expression_error(const FrameEncoder& encoder, const MetricOptions& options);

}  // namespace takin::stage1
