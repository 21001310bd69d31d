#include "takin/audiofeat.hpp"

#include <algorithm>
#include <cmath>

#include "takin/fft.hpp"

namespace takin::audio {

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

constexpr int kMaWidths[] = {3, 9, 27};

// Permutation-stable accumulation: terms are sorted by value before summing
// so that reordering inputs cannot change the floating-point result.
double stable_sum(double* begin, double* end) {
  std::sort(begin, end);
  double total = 0.0;
  for (double* p = begin; p != end; ++p) total += *p;
  return total;
}

}  // namespace

Eigen::VectorXd LayerWeights::normalized() const {
  require(logits.size() >= 1, ErrorKind::invalid_argument, "layer weights are empty");
  const double m = logits.maxCoeff();
  Eigen::ArrayXd e = (logits.array() - m).exp();
  std::vector<double> terms(e.data(), e.data() + e.size());
  const double denom = stable_sum(terms.data(), terms.data() + terms.size());
  return (e / denom).matrix();
}

LayerWeights LayerWeights::uniform(int layers) {
  return LayerWeights{Eigen::VectorXd::Zero(layers)};
}

FilterbankGeometry filterbank_geometry(int dims) {
  require(dims >= 1, ErrorKind::invalid_argument, "filterbank needs at least one filter");
  const double mel_max = hz_to_mel(kSampleRate / 2.0);
  FilterbankGeometry geometry;
  geometry.edges_hz.resize(dims + 2);
  for (int i = 0; i < dims + 2; ++i)
    geometry.edges_hz[i] = mel_to_hz(mel_max * i / (dims + 1));
  return geometry;
}

FeatureExtractor::FeatureExtractor(int dims, int layers) : dims_(dims), layers_(layers) {
  require(dims >= 1 && layers >= 1 && layers <= 4, ErrorKind::invalid_argument,
          "feature extractor supports 1..4 layers");
  const FilterbankGeometry geometry = filterbank_geometry(dims);
  const int bins = kFftSize / 2 + 1;
  filters_ = Eigen::MatrixXd::Zero(dims, bins);
  for (int d = 0; d < dims; ++d) {
    const double lo = geometry.edges_hz[d];
    const double mid = geometry.edges_hz[d + 1];
    const double hi = geometry.edges_hz[d + 2];
    for (int k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * kSampleRate / kFftSize;
      if (f <= lo || f >= hi) continue;
      filters_(d, k) = f <= mid ? (f - lo) / (mid - lo) : (hi - f) / (hi - mid);
    }
  }
  window_.resize(kWindowSamples);
  for (int i = 0; i < kWindowSamples; ++i)
    window_[i] = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / (kWindowSamples - 1));
  // Zero-pad (window - hop) / 2 samples so frame t is centered at
  // sample t * hop + hop / 2 and floor(len / hop) frames cover the clip.
  buffer_.assign((kWindowSamples - kHopSamples) / 2, 0.0);
}

void FeatureExtractor::push(const std::int16_t* samples, std::size_t count) {
  require(!finished_, ErrorKind::invalid_argument, "extractor already finished");
  for (std::size_t i = 0; i < count; ++i) {
    const double v = static_cast<double>(samples[i]) / 32768.0;
    require(std::isfinite(v), ErrorKind::numeric, "non-finite audio sample");
    buffer_.push_back(v);
  }
  total_samples_ += count;
  emit_ready(false);
}

void FeatureExtractor::finish() {
  if (finished_) return;
  finished_ = true;
  buffer_.insert(buffer_.end(), kWindowSamples, 0.0);
  emit_ready(true);
}

void FeatureExtractor::emit_ready(bool flushing) {
  const int target = flushing ? frame_count_50hz(total_samples_)
                              : static_cast<int>(frames_.size()) + 1000000;
  std::vector<double> windowed(kWindowSamples);
  while (static_cast<int>(frames_.size()) < target) {
    const int t = static_cast<int>(frames_.size());
    const std::size_t start = static_cast<std::size_t>(t) * kHopSamples;
    if (start + kWindowSamples > buffer_.size()) break;
    for (int i = 0; i < kWindowSamples; ++i)
      windowed[static_cast<std::size_t>(i)] = buffer_[start + i] * window_[i];
    const std::vector<double> power = power_spectrum(windowed, kFftSize);
    Eigen::Map<const Eigen::VectorXd> p(power.data(), static_cast<Eigen::Index>(power.size()));
    Eigen::VectorXd frame = (filters_ * p).cwiseMax(kLogFloor).array().log().matrix();
    frames_.push_back(std::move(frame));
  }
}

Eigen::MatrixXd FeatureExtractor::layer_frame(int t) const {
  require(t >= 0 && t < ready_frames(), ErrorKind::invalid_argument,
          "layer_frame: frame not ready");
  Eigen::MatrixXd out(layers_, dims_);
  out.row(0) = frames_[static_cast<std::size_t>(t)].transpose();
  for (int l = 1; l < layers_; ++l) {
    const int width = kMaWidths[l - 1];
    const int first = std::max(0, t - width + 1);
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dims_);
    for (int s = first; s <= t; ++s) acc += frames_[static_cast<std::size_t>(s)].transpose();
    out.row(l) = acc / static_cast<double>(t - first + 1);
  }
  return out;
}

AudioFeatureStack FeatureExtractor::stack() const {
  require(finished_, ErrorKind::invalid_argument, "call finish() before reading the stack");
  require(!frames_.empty(), ErrorKind::invalid_argument,
          "input too short: need at least one 50 Hz hop (320 samples)");
  const int t50 = static_cast<int>(frames_.size());
  AudioFeatureStack out;
  for (int l = 0; l < layers_; ++l)
    out.layers.emplace_back(t50, dims_);
  for (int t = 0; t < t50; ++t) {
    const Eigen::MatrixXd lf = layer_frame(t);
    for (int l = 0; l < layers_; ++l) out.layers[static_cast<std::size_t>(l)].row(t) = lf.row(l);
  }
  return out;
}

AudioFeatureStack extract(const std::vector<std::int16_t>& pcm, int dims, int layers) {
  require(pcm.size() >= kWindowSamples, ErrorKind::invalid_argument,
          "audio shorter than one analysis window (640 samples)");
  FeatureExtractor extractor(dims, layers);
  extractor.push(pcm.data(), pcm.size());
  extractor.finish();
  return extractor.stack();
}

Eigen::VectorXd combine_frame(const Eigen::MatrixXd& layer_frame,
                              const Eigen::VectorXd& normalized_weights) {
  const int layers = static_cast<int>(layer_frame.rows());
  require(normalized_weights.size() == layers, ErrorKind::dimension_mismatch,
          "layer weight count does not match stack layers");
  Eigen::VectorXd out(layer_frame.cols());
  std::vector<double> terms(static_cast<std::size_t>(layers));
  for (Eigen::Index c = 0; c < layer_frame.cols(); ++c) {
    for (int l = 0; l < layers; ++l)
      terms[static_cast<std::size_t>(l)] = normalized_weights[l] * layer_frame(l, c);
    out[c] = stable_sum(terms.data(), terms.data() + terms.size());
  }
  return out;
}

Eigen::MatrixXd weighted_sum(const AudioFeatureStack& stack, const LayerWeights& weights) {
  require(stack.layer_count() >= 1, ErrorKind::invalid_argument, "feature stack is empty");
  require(weights.logits.size() == stack.layer_count(), ErrorKind::dimension_mismatch,
          "layer weight count does not match stack layers");
  const Eigen::VectorXd w = weights.normalized();
  const int rows = stack.frame_count(), layers = stack.layer_count();
  Eigen::MatrixXd out(rows, stack.dims());
  Eigen::MatrixXd lf(layers, stack.dims());
  for (int r = 0; r < rows; ++r) {
    for (int l = 0; l < layers; ++l) lf.row(l) = stack.layers[static_cast<std::size_t>(l)].row(r);
    out.row(r) = combine_frame(lf, w).transpose();
  }
  return out;
}

Eigen::MatrixXd downsample_to_video(const Eigen::MatrixXd& features_50hz) {
  const Eigen::Index t50 = features_50hz.rows();
  require(t50 >= 1, ErrorKind::invalid_argument, "empty feature input");
  const Eigen::Index t25 = (t50 + 1) / 2;
  Eigen::MatrixXd out(t25, features_50hz.cols());
  for (Eigen::Index t = 0; t < t25; ++t) {
    const Eigen::Index a = 2 * t;
    const Eigen::Index b = std::min(2 * t + 1, t50 - 1);
    out.row(t) = 0.5 * (features_50hz.row(a) + features_50hz.row(b));
  }
  return out;
}

std::vector<double> envelope(const std::vector<std::int16_t>& pcm) {
  require(!pcm.empty(), ErrorKind::invalid_argument, "empty audio clip");
  const int t50 = frame_count_50hz(pcm.size());
  require(t50 >= 1, ErrorKind::invalid_argument,
          "audio shorter than one 50 Hz hop (320 samples)");
  const int t25 = (t50 + 1) / 2;
  const std::size_t block = 2 * kHopSamples;  // 640 samples per 25 Hz frame
  std::vector<double> rms(static_cast<std::size_t>(t25), 0.0);
  for (int t = 0; t < t25; ++t) {
    const std::size_t start = static_cast<std::size_t>(t) * block;
    const std::size_t end = std::min(start + block, pcm.size());
    double acc = 0.0;
    for (std::size_t i = start; i < end; ++i) {
      const double v = static_cast<double>(pcm[i]) / 32768.0;
      acc += v * v;
    }
    const std::size_t n = end > start ? end - start : 1;
    rms[static_cast<std::size_t>(t)] = std::sqrt(acc / static_cast<double>(n));
  }
  const double peak = *std::max_element(rms.begin(), rms.end());
  if (peak <= 0.0) return std::vector<double>(static_cast<std::size_t>(t25), 0.0);
  for (double& v : rms) v /= peak;
  return rms;
}

int frame_count_50hz(std::size_t samples) {
  return static_cast<int>(samples / kHopSamples);
}

}  // namespace takin::audio
