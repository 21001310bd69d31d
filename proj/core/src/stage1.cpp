#include "takin/stage1.hpp"

#include <cmath>

namespace takin::stage1 {

namespace {

Eigen::MatrixXd xavier(Xoshiro256& rng, int rows, int cols) {
  const double bound = std::sqrt(6.0 / (rows + cols));
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-bound, bound);
  return m;
}

void init_head(EncoderModel& model, Xoshiro256& rng, const char* name, int out_dim,
               int handles[4]) {
  const int in = model.obs_dim();
  const int hidden = model.cfg.hidden;
  const std::string base(name);
  handles[0] = model.params.add(base + ".w1", xavier(rng, in, hidden));
  handles[1] = model.params.add(base + ".b1", Eigen::MatrixXd::Zero(1, hidden));
  handles[2] = model.params.add(base + ".w2", xavier(rng, hidden, out_dim));
  handles[3] = model.params.add(base + ".b2", Eigen::MatrixXd::Zero(1, out_dim));
}

Eigen::RowVectorXd head_forward(const ad::ParamStore& params, const int handles[4],
                                const Eigen::RowVectorXd& obs) {
  const Eigen::RowVectorXd hidden =
      ((obs * params.at(handles[0])).rowwise() + params.at(handles[1]).row(0))
          .array()
          .tanh()
          .matrix();
  return (hidden * params.at(handles[2])).rowwise() + params.at(handles[3]).row(0);
}

// Tape mirror of head_forward; raw (pre-bound) head output as a 1 x out row.
ad::Var head_forward_taped(ad::Tape& tape, const std::vector<ad::Var>& param_vars,
                           const int handles[4], ad::Var obs_row) {
  ad::Var hidden = tape.tanh_of(tape.add_rowvec(
      tape.matmul(obs_row, param_vars[static_cast<std::size_t>(handles[0])]),
      param_vars[static_cast<std::size_t>(handles[1])]));
  return tape.add_rowvec(tape.matmul(hidden, param_vars[static_cast<std::size_t>(handles[2])]),
                         param_vars[static_cast<std::size_t>(handles[3])]);
}

struct TapedFactors {
  ad::Var canonical;   // K x 3
  ad::Var euler;       // 1 x 3
  ad::Var expression;  // K x 3
  ad::Var translation; // 1 x 3
};

TapedFactors encode_taped(ad::Tape& tape, const EncoderModel& model,
                          const std::vector<ad::Var>& param_vars, ad::Var obs_row,
                          bool canonical_only) {
  const int k = model.cfg.k;
  TapedFactors out;
  out.canonical = tape.reshape_row(
      head_forward_taped(tape, param_vars, model.canonical, obs_row), k, 3);
  if (canonical_only) return out;
  out.euler = tape.tanh_scaled(head_forward_taped(tape, param_vars, model.pose, obs_row),
                               model.cfg.pose_limits);
  const Eigen::RowVectorXd expr_limits =
      Eigen::RowVectorXd::Constant(3 * k, model.cfg.expression_limit);
  out.expression = tape.reshape_row(
      tape.tanh_scaled(head_forward_taped(tape, param_vars, model.expression, obs_row),
                       expr_limits),
      k, 3);
  out.translation = head_forward_taped(tape, param_vars, model.translation, obs_row);
  return out;
}

Eigen::MatrixXd to_matrix(const Eigen::VectorXd& flat) {
  return kp::KeypointSet::from_flat(flat).points;
}

}  // namespace

EncoderModel EncoderModel::init(const EncoderConfig& cfg, std::uint64_t seed) {
  require(cfg.k >= kp::kMinKeypointCount && cfg.k <= kp::kMaxKeypointCount,
          ErrorKind::invalid_argument, "keypoint count must lie in [4, 64]");
  require(cfg.hidden >= 1, ErrorKind::invalid_argument, "hidden width must be >= 1");
  EncoderModel model;
  model.cfg = cfg;
  Xoshiro256 rng = Xoshiro256(seed).derive(0xE4C0DE);
  init_head(model, rng, "canonical", 3 * cfg.k, model.canonical);
  init_head(model, rng, "pose", 3, model.pose);
  init_head(model, rng, "expression", 3 * cfg.k, model.expression);
  init_head(model, rng, "translation", 3, model.translation);
  return model;
}

kp::MotionFactors encode(const EncoderModel& model, const Eigen::VectorXd& observation) {
  require(observation.size() == model.obs_dim(), ErrorKind::dimension_mismatch,
          "observation dimension does not match the model");
  const Eigen::RowVectorXd obs = observation.transpose();

  kp::MotionFactors factors;
  factors.canonical =
      kp::KeypointSet::from_flat(head_forward(model.params, model.canonical, obs).transpose());

  Eigen::RowVectorXd pose_raw = head_forward(model.params, model.pose, obs);
  const Eigen::RowVector3d euler =
      pose_raw.array().tanh().matrix().cwiseProduct(model.cfg.pose_limits);
  factors.rotation = kp::Rotation::from_euler(euler[0], euler[1], euler[2]);

  Eigen::RowVectorXd expr_raw = head_forward(model.params, model.expression, obs);
  const Eigen::VectorXd expr_flat =
      (expr_raw.array().tanh() * model.cfg.expression_limit).matrix().transpose();
  factors.expression = kp::KeypointSet::from_flat(expr_flat).points;
  (void)k;

  factors.translation =
      head_forward(model.params, model.translation, obs).transpose().head<3>();
  return factors;
}

kp::KeypointSet encode_keypoints(const EncoderModel& model, const Eigen::VectorXd& observation) {
  return kp::compose(encode(model, observation));
}

std::map<std::string, double> LossBreakdown::as_map() const {
  return {{"loss.total", total},           {"loss.recon", recon},
          {"loss.percep", percep},         {"loss.canonical", canonical},
          {"loss.landmark", landmark},     {"loss.equivariance", equivariance},
          {"loss.keypoint_prior", keypoint_prior}, {"loss.deformation", deformation}};
}

LossBreakdown batch_loss(const EncoderModel& model, const std::vector<BatchElement>& batch,
                         const TrainConfig& cfg, std::vector<Eigen::MatrixXd>* grads) {
  require(!batch.empty(), ErrorKind::invalid_argument, "empty batch");
  const int k = model.cfg.k;
  const auto kf = static_cast<double>(k);

  ad::Tape tape;
  std::vector<ad::Var> param_vars;
  param_vars.reserve(static_cast<std::size_t>(model.params.size()));
  for (int i = 0; i < model.params.size(); ++i)
    param_vars.push_back(grads ? tape.param(model.params.at(i))
                               : tape.constant(model.params.at(i)));

  const Eigen::MatrixXd projection = losses::percep_projection(3 * k);

  ad::Var total{};
  LossBreakdown sums;
  for (const BatchElement& element : batch) {
    require(element.obs_source.size() == model.obs_dim() &&
                element.obs_target.size() == model.obs_dim() &&
                element.obs_second.size() == model.obs_dim(),
            ErrorKind::dimension_mismatch, "observation dimension does not match the model");

    const ad::Var obs_s = tape.constant(element.obs_source.transpose());
    const ad::Var obs_t = tape.constant(element.obs_target.transpose());

    const TapedFactors fs = encode_taped(tape, model, param_vars, obs_s, false);
    const TapedFactors ft = encode_taped(tape, model, param_vars, obs_t, false);

    const ad::Var comp_s = tape.compose_euler(fs.canonical, fs.euler, fs.expression,
                                              fs.translation);
    const ad::Var pred_t = tape.compose_euler(fs.canonical, ft.euler, ft.expression,
                                              ft.translation);

    const Eigen::MatrixXd target_mat = to_matrix(element.obs_target);
    const ad::Var recon = tape.mse(pred_t, tape.constant(target_mat));

    const ad::Var proj_pred =
        tape.matmul(tape.constant(projection), tape.flatten_rows(pred_t));
    Eigen::VectorXd target_flat(3 * k);
    for (int r = 0; r < k; ++r) target_flat.segment<3>(3 * r) = target_mat.row(r).transpose();
    const Eigen::MatrixXd proj_target = projection * target_flat;
    const ad::Var percep = tape.mse(proj_pred, tape.constant(proj_target));

    ad::Var element_total = tape.add(tape.scale(recon, cfg.weights.recon),
                                     tape.scale(percep, cfg.weights.percep));
    sums.recon += tape.value(recon)(0, 0);
    sums.percep += tape.value(percep)(0, 0);

    if (cfg.use_canonical) {
      const ad::Var obs_v = tape.constant(element.obs_second.transpose());
      const TapedFactors fv = encode_taped(tape, model, param_vars, obs_v, true);
      const ad::Var canonical =
          tape.scale(tape.huber_sum_all(fs.canonical, fv.canonical, losses::kDefaultHuberDelta),
                     1.0 / kf);
      sums.canonical += tape.value(canonical)(0, 0);
      element_total = tape.add(element_total, tape.scale(canonical, cfg.weights.canonical));
    }

    if (cfg.use_landmark) {
      const int n = static_cast<int>(element.landmark_indices.size());
      require(n >= 1, ErrorKind::invalid_argument, "landmark index map is empty");
      const ad::Var sel_s =
          tape.slice_cols(tape.gather_rows(comp_s, element.landmark_indices), 0, 2);
      const ad::Var sel_d =
          tape.slice_cols(tape.gather_rows(pred_t, element.landmark_indices), 0, 2);
      const Eigen::MatrixXd lm_s = element.lm_source.points;
      const Eigen::MatrixXd lm_d = cfg.pairing == losses::LandmarkPairing::per_frame
                                       ? Eigen::MatrixXd(element.lm_target.points)
                                       : lm_s;
      const ad::Var landmark = tape.scale(
          tape.add(tape.huber_sum_all(sel_s, tape.constant(lm_s), losses::kDefaultHuberDelta),
                   tape.huber_sum_all(sel_d, tape.constant(lm_d), losses::kDefaultHuberDelta)),
          1.0 / (2.0 * n));
      sums.landmark += tape.value(landmark)(0, 0);
      element_total = tape.add(element_total, tape.scale(landmark, cfg.weights.landmark));
    }

    if (cfg.use_equivariance && cfg.weights.equivariance > 0.0) {
      const Eigen::VectorXd obs_tf = losses::apply_similarity(element.tf, element.obs_source);
      const TapedFactors ftf =
          encode_taped(tape, model, param_vars, tape.constant(obs_tf.transpose()), false);
      const ad::Var comp_tf =
          tape.compose_euler(ftf.canonical, ftf.euler, ftf.expression, ftf.translation);
      const ad::Var expected =
          tape.slice_cols(tape.similarity_xy(comp_s, element.tf.matrix()), 0, 2);
      const ad::Var actual = tape.slice_cols(comp_tf, 0, 2);
      const ad::Var equivariance = tape.scale(
          tape.huber_sum_all(expected, actual, losses::kDefaultHuberDelta), 1.0 / kf);
      sums.equivariance += tape.value(equivariance)(0, 0);
      element_total =
          tape.add(element_total, tape.scale(equivariance, cfg.weights.equivariance));
    }

    const ad::Var kp_prior =
        tape.scale(tape.add(tape.pairwise_floor_hinge(comp_s, losses::kKeypointPriorFloor),
                            tape.pairwise_floor_hinge(pred_t, losses::kKeypointPriorFloor)),
                   0.5);
    const ad::Var deformation =
        tape.scale(tape.add(tape.abs_mean(fs.expression), tape.abs_mean(ft.expression)), 0.5);
    sums.keypoint_prior += tape.value(kp_prior)(0, 0);
    sums.deformation += tape.value(deformation)(0, 0);
    element_total = tape.add(element_total, tape.scale(kp_prior, cfg.weights.keypoint_prior));
    element_total = tape.add(element_total, tape.scale(deformation, cfg.weights.deformation));

    total = total.valid() ? tape.add(total, element_total) : element_total;
  }

  const auto batch_size = static_cast<double>(batch.size());
  total = tape.scale(total, 1.0 / batch_size);

  LossBreakdown breakdown;
  breakdown.recon = sums.recon / batch_size;
  breakdown.percep = sums.percep / batch_size;
  breakdown.canonical = sums.canonical / batch_size;
  breakdown.landmark = sums.landmark / batch_size;
  breakdown.equivariance = sums.equivariance / batch_size;
  breakdown.keypoint_prior = sums.keypoint_prior / batch_size;
  breakdown.deformation = sums.deformation / batch_size;

  // total_loss re-derives the weighted sum and aborts naming the first
  // non-finite term.
  losses::LossParts parts;
  parts.recon = breakdown.recon;
  parts.percep = breakdown.percep;
  parts.canonical = breakdown.canonical;
  parts.landmark = breakdown.landmark;
  if (cfg.use_equivariance && cfg.weights.equivariance > 0.0)
    parts.equivariance = breakdown.equivariance;
  parts.keypoint_prior = breakdown.keypoint_prior;
  parts.deformation = breakdown.deformation;
  breakdown.total = losses::total_loss(parts, cfg.weights);

  if (grads) {
    tape.backward(total);
    grads->clear();
    grads->reserve(param_vars.size());
    for (const ad::Var v : param_vars) grads->push_back(tape.gradient(v));
  }
  return breakdown;
}

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg),
      model_(EncoderModel::init(cfg.encoder, cfg.seed)),
      optimizer_(cfg.learning_rate),
      rng_(Xoshiro256(cfg.seed).derive(0x7121A1)) {
  require(cfg.steps >= 1, ErrorKind::invalid_argument, "steps must be >= 1");
  require(cfg.batch >= 1, ErrorKind::invalid_argument, "batch must be >= 1");
  require(cfg.learning_rate > 0.0, ErrorKind::invalid_argument, "learning rate must be > 0");
  require(cfg.identities >= 1 && cfg.episodes_per_identity >= 2, ErrorKind::invalid_argument,
          "pool needs >= 1 identity with >= 2 episodes each");

  Xoshiro256 pool_rng = Xoshiro256(cfg.seed).derive(0xDA7A);
  rig::EpisodeOptions options;
  options.frames = cfg.episode_frames;
  options.noise_sigma = cfg.noise_sigma;
  for (int i = 0; i < cfg.identities; ++i) {
    const rig::RigIdentity identity = rig::make_identity(pool_rng.derive(100 + i).next(),
                                                         cfg.encoder.k);
    std::vector<rig::RigEpisode> episodes;
    for (int e = 0; e < cfg.episodes_per_identity; ++e)
      episodes.push_back(rig::make_episode(identity, cfg.episode_frames,
                                           pool_rng.derive(1000 + i * 64 + e).next(), options));
    pool_.push_back(std::move(episodes));
  }
}

std::vector<BatchElement> Trainer::sample_batch() {
  std::vector<BatchElement> batch;
  batch.reserve(static_cast<std::size_t>(cfg_.batch));
  const auto identities = static_cast<std::uint64_t>(pool_.size());
  const auto episodes = static_cast<std::uint64_t>(cfg_.episodes_per_identity);
  const auto frames = static_cast<std::uint64_t>(cfg_.episode_frames);
  for (int b = 0; b < cfg_.batch; ++b) {
    const auto id = static_cast<std::size_t>(rng_.next() % identities);
    const std::uint64_t e1 = rng_.next() % episodes;
    const std::uint64_t e2 = (e1 + 1 + rng_.next() % (episodes - 1)) % episodes;
    const std::uint64_t s = rng_.next() % frames;
    const std::uint64_t t = (s + 1 + rng_.next() % (frames - 1)) % frames;
    const std::uint64_t v = rng_.next() % frames;

    const rig::RigEpisode& ep1 = pool_[id][static_cast<std::size_t>(e1)];
    const rig::RigEpisode& ep2 = pool_[id][static_cast<std::size_t>(e2)];
    BatchElement element;
    element.obs_source = ep1.observations[static_cast<std::size_t>(s)];
    element.obs_target = ep1.observations[static_cast<std::size_t>(t)];
    element.obs_second = ep2.observations[static_cast<std::size_t>(v)];
    element.lm_source = ep1.landmarks[static_cast<std::size_t>(s)];
    element.lm_target = ep1.landmarks[static_cast<std::size_t>(t)];
    element.landmark_indices = ep1.landmark_indices;
    element.tf.angle = rng_.uniform(-M_PI / 6.0, M_PI / 6.0);
    element.tf.scale = rng_.uniform(0.8, 1.25);
    batch.push_back(std::move(element));
  }
  return batch;
}

LossBreakdown Trainer::step() {
  const std::vector<BatchElement> batch = sample_batch();
  std::vector<Eigen::MatrixXd> grads;
  const LossBreakdown breakdown = batch_loss(model_, batch, cfg_, &grads);
  optimizer_.step(model_.params, grads);
  return breakdown;
}

TrainResult train(const TrainConfig& cfg,
                  const std::function<void(int, const LossBreakdown&)>& on_step) {
  Trainer trainer(cfg);
  TrainResult result{trainer.model(), {}};
  result.history.reserve(static_cast<std::size_t>(cfg.steps));
  for (int s = 0; s < cfg.steps; ++s) {
    const LossBreakdown breakdown = trainer.step();
    if (on_step) on_step(s, breakdown);
    result.history.push_back(breakdown);
  }
  result.model = trainer.model();
  return result;
}

FrameEncoder model_encoder(const EncoderModel& model) {
  return [model](const rig::RigEpisode& episode, int frame) {
    return encode(model, episode.observations[static_cast<std::size_t>(frame)]);
  };
}

FrameEncoder oracle_encoder() {
  return [](const rig::RigEpisode& episode, int frame) {
    return episode.frames[static_cast<std::size_t>(frame)];
  };
}

FrameEncoder observation_as_canonical_encoder() {
  return [](const rig::RigEpisode& episode, int frame) {
    const Eigen::VectorXd& obs = episode.observations[static_cast<std::size_t>(frame)];
    kp::MotionFactors factors;
    factors.canonical = kp::KeypointSet::from_flat(obs);
    factors.expression = Eigen::MatrixX3d::Zero(factors.canonical.count(), 3);
    return factors;
  };
}

namespace {

double mean_row_distance(const kp::KeypointSet& a, const kp::KeypointSet& b) {
  double total = 0.0;
  for (int r = 0; r < a.count(); ++r) total += (a.points.row(r) - b.points.row(r)).norm();
  return total / a.count();
}

}  // namespace

double leakage_metric(const FrameEncoder& encoder, const MetricOptions& options, int n_pairs) {
  require(n_pairs >= 30, ErrorKind::invalid_argument, "leakage metric needs >= 30 pairs");
  require(options.identities >= 2, ErrorKind::invalid_argument,
          "leakage metric needs >= 2 identities (degenerate rig)");

  Xoshiro256 rng = Xoshiro256(options.seed).derive(0x1EAC);
  std::vector<rig::RigIdentity> identities;
  for (int i = 0; i < options.identities; ++i)
    identities.push_back(rig::make_identity(rng.derive(100 + i).next()));

  rig::EpisodeOptions ep_options;
  ep_options.frames = options.episode_frames;
  ep_options.noise_sigma = options.noise_sigma;

  // Same-identity numerator: frames with maximally different expressions.
  double same_sum = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    const auto id = static_cast<std::size_t>(p % options.identities);
    const rig::RigEpisode episode = rig::make_episode(
        identities[id], options.episode_frames, rng.derive(5000 + p).next(), ep_options);
    int best_a = 0, best_b = 1;
    double best = -1.0;
    for (int a = 0; a < episode.frame_count(); ++a)
      for (int b = a + 1; b < episode.frame_count(); ++b) {
        const double d = (episode.frames[static_cast<std::size_t>(a)].expression -
                          episode.frames[static_cast<std::size_t>(b)].expression)
                             .norm();
        if (d > best) {
          best = d;
          best_a = a;
          best_b = b;
        }
      }
    const kp::KeypointSet ca = encoder(episode, best_a).canonical;
    const kp::KeypointSet cb = encoder(episode, best_b).canonical;
    same_sum += mean_row_distance(ca, cb);
  }

  // Cross-identity normalizer.
  double cross_sum = 0.0;
  for (int p = 0; p < n_pairs; ++p) {
    const auto i = static_cast<std::size_t>(rng.next() % identities.size());
    auto j = static_cast<std::size_t>(rng.next() % (identities.size() - 1));
    if (j >= i) ++j;
    const rig::RigEpisode ep_i = rig::make_episode(identities[i], options.episode_frames,
                                                   rng.derive(9000 + p * 2).next(), ep_options);
    const rig::RigEpisode ep_j = rig::make_episode(identities[j], options.episode_frames,
                                                   rng.derive(9001 + p * 2).next(), ep_options);
    const int fi = static_cast<int>(rng.next() % static_cast<std::uint64_t>(ep_i.frame_count()));
    const int fj = static_cast<int>(rng.next() % static_cast<std::uint64_t>(ep_j.frame_count()));
    cross_sum += mean_row_distance(encoder(ep_i, fi).canonical, encoder(ep_j, fj).canonical);
  }

  const double denom = std::max(cross_sum / n_pairs, 1e-12);
  return (same_sum / n_pairs) / denom;
}

double subtle_expression_error(const FrameEncoder& encoder, const MetricOptions& options) {
  require(options.identities >= 2, ErrorKind::invalid_argument,
          "subtle metric needs >= 2 identities");
  Xoshiro256 rng = Xoshiro256(options.seed).derive(0x5B71E);

  rig::EpisodeOptions ep_options;
  ep_options.frames = options.episode_frames;
  ep_options.noise_sigma = options.noise_sigma;
  ep_options.expression_scale = options.subtle_expression_scale;

  double total = 0.0;
  int count = 0;
  for (int i = 0; i < options.identities; ++i) {
    const rig::RigIdentity source_id = rig::make_identity(rng.derive(100 + i).next());
    const rig::RigIdentity driving_id = rig::make_identity(
        rng.derive(100 + (i + 1) % options.identities).next());
    const rig::RigEpisode source_ep = rig::make_episode(source_id, options.episode_frames,
                                                        rng.derive(700 + i).next(), ep_options);
    const rig::RigEpisode driving_ep = rig::make_episode(driving_id, options.episode_frames,
                                                         rng.derive(800 + i).next(), ep_options);
    const int source_frame =
        static_cast<int>(rng.next() % static_cast<std::uint64_t>(source_ep.frame_count()));
    const kp::MotionFactors source_est = encoder(source_ep, source_frame);
    const kp::MotionFactors source_true = source_ep.frames[static_cast<std::size_t>(source_frame)];

    for (int t = 0; t < driving_ep.frame_count(); t += 4) {
      const kp::MotionFactors driving_est = encoder(driving_ep, t);
      const kp::KeypointSet predicted = kp::retarget(source_est, driving_est);
      const kp::KeypointSet truth =
          kp::retarget(source_true, driving_ep.frames[static_cast<std::size_t>(t)]);
      double err = 0.0;
      for (const int idx : driving_ep.landmark_indices)
        err += (predicted.points.row(idx).head<2>() - truth.points.row(idx).head<2>()).norm();
      total += err / static_cast<double>(driving_ep.landmark_indices.size());
      ++count;
    }
  }
  return total / count;
}

}  // namespace takin::stage1
