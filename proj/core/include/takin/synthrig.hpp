#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "takin/kpspace.hpp"
#include "takin/losses.hpp"
#include "takin/prng.hpp"

// Procedural ground-truth face rig. Identities are canonical keypoint sets
// sampled around a fixed template; episodes are smooth pose/expression
// trajectories with noisy flattened-keypoint observations and exact 2D
// landmark projections. Because every factor is known, disentanglement and
// sync claims are directly measurable against this rig.
//
// The two lip keypoints share one canonical position, so the composed lip
// aperture equals the expression-driven gap exactly; with an audio track the
// gap is an affine function of the clip's envelope (lag 0 by construction).

namespace takin::rig {

struct RigIdentity {
  kp::KeypointSet canonical;
  std::uint64_t identity_id = 0;
  std::uint64_t shape_seed = 0;
};

struct RigEpisode {
  RigIdentity identity;
  std::vector<kp::MotionFactors> frames;
  std::vector<Eigen::VectorXd> observations;  // flattened noisy composed keypoints
  std::vector<losses::LandmarkSet> landmarks;
  std::vector<int> landmark_indices;
  std::vector<double> audio_track;   // envelope at 25 Hz; empty without audio
  std::vector<std::int16_t> pcm;     // 16 kHz source samples; empty without audio
  std::uint64_t motion_seed = 0;
  double noise_sigma = 0.0;

  int frame_count() const { return static_cast<int>(frames.size()); }
};

struct EpisodeOptions {
  int frames = 150;
  double noise_sigma = 0.005;
  double pose_scale = 1.0;        // scales pose/translation amplitudes
  double expression_scale = 1.0;  // scales non-lip expression amplitudes
  bool with_audio = false;
};

struct CrossPair {
  kp::MotionFactors source;
  kp::MotionFactors driving;
  kp::KeypointSet ground_truth;
};

// Trajectory band limits at the 25 fps sampling rate: expressions move
// slower than pose.
inline constexpr double kPoseBandHz = 4.0;
inline constexpr double kExpressionBandHz = 1.0;
inline constexpr double kLipRestGap = 0.06;
inline constexpr double kLipGapRange = 0.12;

// Fixed template for a given keypoint count; the last two points (the lips)
// coincide.
kp::KeypointSet base_template(int k);

std::vector<int> default_landmark_indices(int k);

RigIdentity make_identity(std::uint64_t seed, int k = kp::kDefaultKeypointCount);

RigEpisode make_episode(const RigIdentity& identity, int frames, std::uint64_t motion_seed,
                        const EpisodeOptions& options = {});

CrossPair cross_pair(const RigIdentity& a, const RigIdentity& b, std::uint64_t seed);

// Speech-like test signal: noise carrier amplitude-modulated below 2 Hz with
// occasional pauses, 16 kHz mono.
std::vector<std::int16_t> synth_audio(std::uint64_t seed, double seconds);

void save_episode(const std::string& directory, const RigEpisode& episode);
RigEpisode load_episode(const std::string& directory);

}  // namespace takin::rig
