#include "takin/synthrig.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "takin/audiofeat.hpp"
#include "takin/kpio.hpp"
#include "takin/wav.hpp"

namespace takin::rig {

namespace {

namespace fs = std::filesystem;

constexpr double kIdentityOffsetBound = 0.25;
constexpr double kMoodBound = 0.12;
constexpr int kOscPatterns = 3;
constexpr double kOscAmplitude = 0.05;
constexpr int kPoseHarmonics = 4;
constexpr double kPoseAmplitude = 0.22;   // radians, split across harmonics
constexpr double kTranslationAmplitude = 0.08;

// Sum of seeded sinusoids below the cutoff; amplitude is the total budget.
struct BandLimitedTrack {
  std::vector<double> freq, amp, phase;

  static BandLimitedTrack sample(Xoshiro256& rng, int harmonics, double min_hz, double max_hz,
                                 double amplitude) {
    BandLimitedTrack track;
    for (int m = 0; m < harmonics; ++m) {
      track.freq.push_back(rng.uniform(min_hz, max_hz));
      track.amp.push_back(rng.uniform(0.2, 1.0) * amplitude / harmonics);
      track.phase.push_back(rng.uniform(0.0, 2.0 * M_PI));
    }
    return track;
  }

  double at(double seconds) const {
    double v = 0.0;
    for (std::size_t m = 0; m < freq.size(); ++m)
      v += amp[m] * std::sin(2.0 * M_PI * freq[m] * seconds + phase[m]);
    return v;
  }
};

}  // namespace

kp::KeypointSet base_template(int k) {
  require(k >= kp::kMinKeypointCount && k <= kp::kMaxKeypointCount, ErrorKind::invalid_argument,
          "keypoint count must lie in [4, 64]");
  kp::KeypointSet set{Eigen::MatrixX3d(k, 3)};
  const int face_points = k - 2;
  const double golden = M_PI * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < face_points; ++i) {
    const double u = (i + 0.5) / face_points;
    const double r = std::sqrt(u);
    const double theta = golden * i;
    set.points(i, 0) = 0.8 * r * std::cos(theta);
    set.points(i, 1) = 0.8 * r * std::sin(theta);
    set.points(i, 2) = 0.45 * (1.0 - u);
  }
  // Coincident lip pair: the composed aperture then equals the expression gap
  // exactly, independent of pose.
  set.points.row(kp::lip_upper_index(k)) << 0.0, -0.42, 0.38;
  set.points.row(kp::lip_lower_index(k)) << 0.0, -0.42, 0.38;
  return set;
}

std::vector<int> default_landmark_indices(int k) {
  std::vector<int> indices;
  for (int i = 0; i < k - 2; i += 2) indices.push_back(i);
  indices.push_back(kp::lip_upper_index(k));
  indices.push_back(kp::lip_lower_index(k));
  return indices;
}

RigIdentity make_identity(std::uint64_t seed, int k) {
  RigIdentity identity;
  identity.identity_id = seed;
  identity.shape_seed = seed;
  identity.canonical = base_template(k);
  Xoshiro256 rng = Xoshiro256(seed).derive(0x1D5EED);
  for (int i = 0; i < k - 2; ++i)
    for (int c = 0; c < 3; ++c)
      identity.canonical.points(i, c) += rng.uniform(-kIdentityOffsetBound, kIdentityOffsetBound);
  // The lip pair shares one offset so it stays coincident.
  Eigen::RowVector3d lip_offset;
  for (int c = 0; c < 3; ++c) lip_offset[c] = rng.uniform(-kIdentityOffsetBound, kIdentityOffsetBound);
  identity.canonical.points.row(kp::lip_upper_index(k)) += lip_offset;
  identity.canonical.points.row(kp::lip_lower_index(k)) += lip_offset;
  return identity;
}

RigEpisode make_episode(const RigIdentity& identity, int frames, std::uint64_t motion_seed,
                        const EpisodeOptions& options) {
  require(frames >= 2, ErrorKind::invalid_argument, "episode needs at least two frames");
  const int k = identity.canonical.count();

  RigEpisode episode;
  episode.identity = identity;
  episode.motion_seed = motion_seed;
  episode.noise_sigma = options.noise_sigma;
  episode.landmark_indices = default_landmark_indices(k);

  Xoshiro256 rng(motion_seed);
  Xoshiro256 noise_rng = rng.derive(0xA011);

  // Pose and translation tracks, band-limited at 4 Hz.
  BandLimitedTrack pose_tracks[3];
  BandLimitedTrack translation_tracks[3];
  for (auto& t : pose_tracks)
    t = BandLimitedTrack::sample(rng, kPoseHarmonics, 0.2, kPoseBandHz,
                                 kPoseAmplitude * options.pose_scale);
  for (auto& t : translation_tracks)
    t = BandLimitedTrack::sample(rng, kPoseHarmonics, 0.2, kPoseBandHz,
                                 kTranslationAmplitude * options.pose_scale);

  // Expression: a per-episode mood offset plus slow oscillating patterns on
  // the non-lip points, band-limited at 1 Hz.
  Eigen::MatrixX3d mood = Eigen::MatrixX3d::Zero(k, 3);
  for (int i = 0; i < k - 2; ++i)
    for (int c = 0; c < 3; ++c)
      mood(i, c) = rng.uniform(-kMoodBound, kMoodBound) * options.expression_scale;

  std::vector<Eigen::MatrixX3d> patterns;
  std::vector<BandLimitedTrack> pattern_tracks;
  for (int p = 0; p < kOscPatterns; ++p) {
    Eigen::MatrixX3d pattern = Eigen::MatrixX3d::Zero(k, 3);
    for (int i = 0; i < k - 2; ++i)
      for (int c = 0; c < 3; ++c) pattern(i, c) = rng.uniform(-1.0, 1.0);
    patterns.push_back(pattern);
    pattern_tracks.push_back(BandLimitedTrack::sample(
        rng, 2, 0.1, kExpressionBandHz, kOscAmplitude * options.expression_scale));
  }

  // Lip gap: affine in the audio envelope, or a slow oscillation without it.
  BandLimitedTrack lip_track = BandLimitedTrack::sample(rng, 2, 0.1, kExpressionBandHz, 1.0);
  if (options.with_audio) {
    const double seconds = frames / kFrameRate;
    episode.pcm = synth_audio(rng.derive(0x0A0D).next(), seconds);
    episode.audio_track = audio::envelope(episode.pcm);
    episode.audio_track.resize(static_cast<std::size_t>(frames), 0.0);
  }

  episode.frames.reserve(static_cast<std::size_t>(frames));
  episode.observations.reserve(static_cast<std::size_t>(frames));
  episode.landmarks.reserve(static_cast<std::size_t>(frames));

  for (int t = 0; t < frames; ++t) {
    const double seconds = t / kFrameRate;
    kp::MotionFactors factors;
    factors.canonical = identity.canonical;
    factors.rotation = kp::Rotation::from_euler(pose_tracks[0].at(seconds),
                                                pose_tracks[1].at(seconds),
                                                pose_tracks[2].at(seconds));
    factors.translation = Eigen::Vector3d(translation_tracks[0].at(seconds),
                                          translation_tracks[1].at(seconds),
                                          translation_tracks[2].at(seconds));
    factors.expression = mood;
    for (int p = 0; p < kOscPatterns; ++p)
      factors.expression += pattern_tracks[static_cast<std::size_t>(p)].at(seconds) *
                            patterns[static_cast<std::size_t>(p)];

    double gap;
    if (options.with_audio) {
      gap = kLipRestGap + kLipGapRange * episode.audio_track[static_cast<std::size_t>(t)];
    } else {
      gap = kLipRestGap +
            0.04 * options.expression_scale * (1.0 + lip_track.at(seconds));
    }
    factors.expression.row(kp::lip_upper_index(k)) = Eigen::RowVector3d(0.0, gap / 2.0, 0.0);
    factors.expression.row(kp::lip_lower_index(k)) = Eigen::RowVector3d(0.0, -gap / 2.0, 0.0);

    const kp::KeypointSet composed = kp::compose(factors);
    Eigen::VectorXd obs = composed.flatten();
    for (Eigen::Index i = 0; i < obs.size(); ++i)
      obs[i] += options.noise_sigma * noise_rng.gaussian();

    losses::LandmarkSet lm{Eigen::MatrixX2d(
        static_cast<Eigen::Index>(episode.landmark_indices.size()), 2)};
    for (std::size_t i = 0; i < episode.landmark_indices.size(); ++i)
      lm.points.row(static_cast<Eigen::Index>(i)) =
          composed.points.row(episode.landmark_indices[i]).head<2>();

    episode.frames.push_back(std::move(factors));
    episode.observations.push_back(std::move(obs));
    episode.landmarks.push_back(std::move(lm));
  }
  return episode;
}

CrossPair cross_pair(const RigIdentity& a, const RigIdentity& b, std::uint64_t seed) {
  require(a.identity_id != b.identity_id, ErrorKind::invalid_argument,
          "cross_pair needs distinct identities");
  require(a.canonical.count() == b.canonical.count(), ErrorKind::dimension_mismatch,
          "identities have different keypoint counts");
  Xoshiro256 rng(seed);
  EpisodeOptions options;
  options.frames = 8;
  options.noise_sigma = 0.0;
  RigEpisode ep_a = make_episode(a, options.frames, rng.derive(1).next(), options);
  RigEpisode ep_b = make_episode(b, options.frames, rng.derive(2).next(), options);
  const int ia = static_cast<int>(rng.next() % static_cast<std::uint64_t>(options.frames));
  const int ib = static_cast<int>(rng.next() % static_cast<std::uint64_t>(options.frames));
  CrossPair pair;
  pair.source = ep_a.frames[static_cast<std::size_t>(ia)];
  pair.driving = ep_b.frames[static_cast<std::size_t>(ib)];
  pair.ground_truth = kp::retarget(pair.source, pair.driving);
  return pair;
}

std::vector<std::int16_t> synth_audio(std::uint64_t seed, double seconds) {
  require(seconds > 0.0, ErrorKind::invalid_argument, "audio duration must be positive");
  Xoshiro256 rng(seed);
  const auto n = static_cast<std::size_t>(seconds * audio::kSampleRate);

  // Modulator: positive, band-limited below 2 Hz, with hard pauses so the
  // envelope carries real structure.
  BandLimitedTrack mod = BandLimitedTrack::sample(rng, 4, 0.3, 2.0, 1.0);
  const double pause_hz = rng.uniform(0.2, 0.5);
  const double pause_phase = rng.uniform(0.0, 2.0 * M_PI);
  const double pause_duty = rng.uniform(0.15, 0.3);

  std::vector<std::int16_t> pcm(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / audio::kSampleRate;
    double level = 0.55 + 0.45 * mod.at(t);
    level = std::clamp(level, 0.0, 1.0);
    const double pause_wave = 0.5 * (1.0 + std::sin(2.0 * M_PI * pause_hz * t + pause_phase));
    if (pause_wave < pause_duty) level = 0.0;
    const double sample = level * rng.uniform(-0.9, 0.9);
    pcm[i] = static_cast<std::int16_t>(std::lround(sample * 32767.0));
  }
  return pcm;
}

void save_episode(const std::string& directory, const RigEpisode& episode) {
  fs::create_directories(directory);
  const int k = episode.identity.canonical.count();
  const int t = episode.frame_count();

  {
    std::ofstream meta(fs::path(directory) / "episode.meta");
    require(meta.good(), ErrorKind::io, "cannot write episode.meta in " + directory);
    meta << "version=" << kVersion << '\n';
    meta << "k=" << k << '\n';
    meta << "frames=" << t << '\n';
    meta << "identity_id=" << episode.identity.identity_id << '\n';
    meta << "shape_seed=" << episode.identity.shape_seed << '\n';
    meta << "motion_seed=" << episode.motion_seed << '\n';
    meta << "sigma=" << kpio::format_value(episode.noise_sigma) << '\n';
    meta << "has_audio=" << (episode.audio_track.empty() ? 0 : 1) << '\n';
    meta << "landmark_indices=";
    for (std::size_t i = 0; i < episode.landmark_indices.size(); ++i)
      meta << (i ? " " : "") << episode.landmark_indices[i];
    meta << '\n';
    meta << "canonical=";
    const Eigen::VectorXd flat = episode.identity.canonical.flatten();
    for (Eigen::Index i = 0; i < flat.size(); ++i)
      meta << (i ? " " : "") << kpio::format_value(flat[i]);
    meta << '\n';
  }

  std::vector<Eigen::VectorXd> latent_frames;
  for (const auto& factors : episode.frames)
    latent_frames.push_back(kp::latent_pack(factors).values);
  kpio::write((fs::path(directory) / "factors.kp").string(), k, "latents", latent_frames);
  kpio::write((fs::path(directory) / "obs.kp").string(), k, "keypoints", episode.observations);

  std::vector<Eigen::VectorXd> lm_frames;
  for (const auto& lm : episode.landmarks) {
    Eigen::VectorXd flat(2 * lm.count());
    for (int i = 0; i < lm.count(); ++i) flat.segment<2>(2 * i) = lm.points.row(i).transpose();
    lm_frames.push_back(std::move(flat));
  }
  kpio::write((fs::path(directory) / "landmarks.kp").string(),
              static_cast<int>(episode.landmark_indices.size()), "landmarks", lm_frames);

  if (!episode.audio_track.empty()) {
    std::ofstream f32(fs::path(directory) / "audio.f32", std::ios::binary);
    require(f32.good(), ErrorKind::io, "cannot write audio.f32 in " + directory);
    for (const double v : episode.audio_track) {
      const float fv = static_cast<float>(v);
      f32.write(reinterpret_cast<const char*>(&fv), sizeof(fv));
    }
    if (!episode.pcm.empty())
      audio::write_wav((fs::path(directory) / "audio.wav").string(), episode.pcm);
  }
}

RigEpisode load_episode(const std::string& directory) {
  std::ifstream meta(fs::path(directory) / "episode.meta");
  require(meta.good(), ErrorKind::io, "cannot open episode.meta in " + directory);

  RigEpisode episode;
  int k = 0, frames = 0, has_audio = 0;
  std::string canonical_values;
  std::string landmark_values;
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    if (key == "k") k = std::stoi(value);
    else if (key == "frames") frames = std::stoi(value);
    else if (key == "identity_id") episode.identity.identity_id = std::stoull(value);
    else if (key == "shape_seed") episode.identity.shape_seed = std::stoull(value);
    else if (key == "motion_seed") episode.motion_seed = std::stoull(value);
    else if (key == "sigma") episode.noise_sigma = std::stod(value);
    else if (key == "has_audio") has_audio = std::stoi(value);
    else if (key == "canonical") canonical_values = value;
    else if (key == "landmark_indices") landmark_values = value;
  }
  require(k > 0 && frames >= 2, ErrorKind::io, directory + ": episode.meta is incomplete");

  {
    std::istringstream is(canonical_values);
    Eigen::VectorXd flat(3 * k);
    for (Eigen::Index i = 0; i < flat.size(); ++i)
      require(static_cast<bool>(is >> flat[i]), ErrorKind::io,
              directory + ": canonical entry count mismatch");
    episode.identity.canonical = kp::KeypointSet::from_flat(flat);
  }
  {
    std::istringstream is(landmark_values);
    int idx;
    while (is >> idx) episode.landmark_indices.push_back(idx);
  }

  const kpio::KpFile factors = kpio::read((fs::path(directory) / "factors.kp").string());
  for (const auto& frame : factors.frames)
    episode.frames.push_back(
        kp::latent_unpack(kp::MotionLatent{frame}, episode.identity.canonical));

  const kpio::KpFile obs = kpio::read((fs::path(directory) / "obs.kp").string());
  episode.observations = obs.frames;

  const kpio::KpFile lms = kpio::read((fs::path(directory) / "landmarks.kp").string());
  for (const auto& frame : lms.frames) {
    losses::LandmarkSet lm{Eigen::MatrixX2d(frame.size() / 2, 2)};
    for (Eigen::Index i = 0; i * 2 < frame.size(); ++i)
      lm.points.row(i) = frame.segment<2>(2 * i).transpose();
    episode.landmarks.push_back(std::move(lm));
  }

  if (has_audio) {
    std::ifstream f32(fs::path(directory) / "audio.f32", std::ios::binary);
    require(f32.good(), ErrorKind::io, "cannot open audio.f32 in " + directory);
    float fv;
    while (f32.read(reinterpret_cast<char*>(&fv), sizeof(fv)))
      episode.audio_track.push_back(static_cast<double>(fv));
    const auto wav_path = fs::path(directory) / "audio.wav";
    if (fs::exists(wav_path)) episode.pcm = audio::read_wav(wav_path.string());
  }
  return episode;
}

}  // namespace takin::rig
