#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "takin/common.hpp"

// Deterministic audio frontend standing in for a pretrained speech encoder.
// Layer 0 is a log-mel-style filterbank at 50 Hz (hop 320, window 640 at
// 16 kHz); layers 1..L-1 are causal moving averages of layer 0 with widths
// 3, 9, 27 — a fixed multi-scale hierarchy. The trainable part the pipeline
// keeps from the original design is the softmax-weighted summation over
// layers and the 50 -> 25 Hz alignment with the video clock.

namespace takin::audio {

inline constexpr int kSampleRate = 16000;
inline constexpr int kHopSamples = 320;     // 50 Hz
inline constexpr int kWindowSamples = 640;
inline constexpr int kFftSize = 1024;
inline constexpr int kDefaultLayers = 4;
inline constexpr int kDefaultDims = 32;
inline constexpr double kLogFloor = 1e-10;

struct AudioFeatureStack {
  std::vector<Eigen::MatrixXd> layers;  // each T50 x D

  int layer_count() const { return static_cast<int>(layers.size()); }
  int frame_count() const { return layers.empty() ? 0 : static_cast<int>(layers[0].rows()); }
  int dims() const { return layers.empty() ? 0 : static_cast<int>(layers[0].cols()); }
};

struct LayerWeights {
  Eigen::VectorXd logits;

  // softmax(logits); sums to 1, all entries >= 0.
  Eigen::VectorXd normalized() const;
  static LayerWeights uniform(int layers);
};

// Triangular mel filterbank geometry; exposed so tests can locate the filter
// bracketing a given frequency.
struct FilterbankGeometry {
  Eigen::VectorXd edges_hz;  // D + 2 points
  double center_hz(int filter) const { return edges_hz[filter + 1]; }
};
FilterbankGeometry filterbank_geometry(int dims);

// Streaming extractor; push() accepts any chunk sizes and interior frames
// match batch extraction exactly (the clip start is zero-padded by half a
// window, finish() flushes the tail the same way).
class FeatureExtractor {
 public:
  explicit FeatureExtractor(int dims = kDefaultDims, int layers = kDefaultLayers);

  void push(const std::int16_t* samples, std::size_t count);
  void finish();

  // Frames are final once emitted; ready_frames() only grows.
  int ready_frames() const { return static_cast<int>(frames_.size()); }
  const std::vector<Eigen::VectorXd>& layer0_frames() const { return frames_; }

  // All layers at one ready frame (layers x D); the moving averages are
  // causal, so this is final as soon as the frame is ready. Batch and
  // streaming use this same path, which keeps them bit-identical.
  Eigen::MatrixXd layer_frame(int t) const;

  AudioFeatureStack stack() const;

  int dims() const { return dims_; }
  int layer_count() const { return layers_; }

 private:
  void emit_ready(bool flushing);

  int dims_;
  int layers_;
  Eigen::MatrixXd filters_;          // D x (kFftSize/2 + 1)
  Eigen::VectorXd window_;           // Hann, kWindowSamples
  std::vector<double> buffer_;       // zero-padded sample stream
  std::size_t total_samples_ = 0;
  bool finished_ = false;
  std::vector<Eigen::VectorXd> frames_;
};

AudioFeatureStack extract(const std::vector<std::int16_t>& pcm, int dims = kDefaultDims,
                          int layers = kDefaultLayers);

Eigen::MatrixXd weighted_sum(const AudioFeatureStack& stack, const LayerWeights& weights);

// One 50 Hz frame of the weighted summation; layer_frame is layers x D.
Eigen::VectorXd combine_frame(const Eigen::MatrixXd& layer_frame,
                              const Eigen::VectorXd& normalized_weights);

// Pair-averaging 50 -> 25 Hz; an odd tail frame is averaged with itself.
Eigen::MatrixXd downsample_to_video(const Eigen::MatrixXd& features_50hz);

// RMS per 25 Hz frame normalized to [0, 1] by the clip maximum; silence maps
// to all zeros. Frame count matches ceil(T50 / 2) for the same clip.
std::vector<double> envelope(const std::vector<std::int16_t>& pcm);

int frame_count_50hz(std::size_t samples);

}  // namespace takin::audio
