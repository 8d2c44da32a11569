#include "impose/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <ostream>

#include "impose/errors.hpp"
#include "impose/stats.hpp"
#include "sampling_detail.hpp"

namespace impose {

namespace {

constexpr uint64_t kShuffleStream = 0x736866;
constexpr uint64_t kStepStream = 0x737470;
constexpr uint64_t kQueryStream = 0x717279;
constexpr uint64_t kEvalPickStream = 0x65706b;
constexpr uint64_t kEvalLocStream = 0x656c63;

void require_normalized(const Pose& p, const char* who) {
  if (p.frame != Frame::Normalized) {
    throw FrameError(std::string(who) + ": pose must be Normalized");
  }
}

}  // namespace

void validate_config(const TrainingConfig& cfg) {
  if (cfg.lambda_t < 0.0 || cfg.lambda_r < 0.0) {
    throw std::invalid_argument("training config: lambda_t and lambda_r must be >= 0");
  }
  if (cfg.proposer_mix < 0.0 || cfg.proposer_mix > 1.0) {
    throw std::invalid_argument("training config: proposer_mix must be in [0, 1]");
  }
  if (cfg.epochs < 0 || cfg.batch_size < 1 || !(cfg.lr > 0.0)) {
    throw std::invalid_argument("training config: need epochs >= 0, batch_size >= 1, lr > 0");
  }
  if (cfg.checkpoint_every < 0 || (cfg.checkpoint_every > 0 && cfg.checkpoint_dir.empty())) {
    throw std::invalid_argument("training config: checkpoint_every > 0 requires checkpoint_dir");
  }
  if (cfg.eval_subsample < 1) {
    throw std::invalid_argument("training config: eval_subsample must be >= 1");
  }
  validate_config(cfg.loc);
}

double target_score(const Pose& query_pose, const Pose& candidate, double lambda_t, double lambda_r) {
  require_normalized(query_pose, "target_score");
  require_normalized(candidate, "target_score");
  const double dt = (query_pose.t - candidate.t).norm();
  const double g = geodesic_distance(query_pose.q, candidate.q);
  return std::max(0.0, 1.0 - lambda_t * dt - lambda_r * g);
}

Eigen::VectorXd target_scores(const Pose& query_pose, std::span<const Pose> candidates, double lambda_t,
                              double lambda_r) {
  require_normalized(query_pose, "target_scores");
  Eigen::VectorXd out(Eigen::Index(candidates.size()));
  const Eigen::Vector4d qc = query_pose.q.coeffs();
  for (size_t i = 0; i < candidates.size(); ++i) {
    const Pose& c = candidates[i];
    require_normalized(c, "target_scores");
    const double dt = (query_pose.t - c.t).norm();
    const double dot = std::min(1.0, std::abs(qc.dot(c.q.coeffs())));
    const double g = 2.0 * std::acos(dot);
    out[Eigen::Index(i)] = std::max(0.0, 1.0 - lambda_t * dt - lambda_r * g);
  }
  return out;
}

double score_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& targets) {
  if (predicted.rows() != targets.rows() || predicted.cols() != targets.cols()) {
    throw DimensionError("score_loss: shape mismatch");
  }
  if (predicted.cols() == 0) {
    throw DimensionError("score_loss: no candidates");
  }
  return (predicted - targets).cwiseAbs().sum() / double(predicted.cols());
}

CandidateSet training_proposer(const CandidateSet& cs, const Eigen::VectorXd& targets,
                               const LocalizerConfig& cfg, double proposer_mix, const SceneFrame& frame,
                               Rng& rng) {
  if (!cs.scored()) {
    throw std::invalid_argument("training_proposer: candidate set is not scored");
  }
  if (targets.size() != Eigen::Index(cs.poses.size())) {
    throw DimensionError("training_proposer: target count does not match candidates");
  }
  const int n_target = int(std::ceil(proposer_mix * double(cfg.B)));

  // Union: top-ceil(mix*B) by target score, backfilled to B by predicted
  // score (skipping duplicates). With mix = 0 this reduces to the inference
  // selection; with mix = 1 everything is target-driven.
  std::vector<int> comps = detail::top_indices(targets, n_target);
  const size_t n_tgt = comps.size();
  std::vector<char> taken(cs.poses.size(), 0);
  for (int i : comps) taken[size_t(i)] = 1;
  const std::vector<int> by_pred = detail::top_indices(cs.scores, int(cs.poses.size()));
  for (int i : by_pred) {
    if (int(comps.size()) >= cfg.B) break;
    if (taken[size_t(i)]) continue;
    taken[size_t(i)] = 1;
    comps.push_back(i);
  }

  // Mixture weights from predicted scores. Only target-selected components
  // with zero predicted score borrow the smallest positive predicted weight
  // in the union (so mix = 0 matches the inference proposer exactly); uniform
  // when no predicted score is positive.
  Eigen::VectorXd pi(Eigen::Index(comps.size()));
  double min_pos = 0.0;
  for (int i : comps) {
    if (cs.scores[i] > 0.0 && (min_pos == 0.0 || cs.scores[i] < min_pos)) min_pos = cs.scores[i];
  }
  if (min_pos == 0.0) {
    pi.setConstant(1.0 / double(comps.size()));
  } else {
    double total = 0.0;
    for (size_t j = 0; j < comps.size(); ++j) {
      double w = cs.scores[comps[j]];
      if (w == 0.0 && j < n_tgt) w = min_pos;
      pi[Eigen::Index(j)] = w;
      total += w;
    }
    pi /= total;
  }
  return detail::sample_gmm(cs, comps, pi, cfg.N, cs.k + 1, detail::noise_at(cfg.v0, cs.k + 1, frame), rng);
}

void write_loss_history(std::ostream& out, std::span<const EpochStats> history) {
  out << "epoch,mean_loss,median_train_error_m,median_train_error_deg\n";
  char buf[160];
  for (const auto& row : history) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g\n", row.epoch, row.mean_loss, row.median_train_error_m,
                  row.median_train_error_deg);
    out << buf;
  }
}

Trainer::Trainer(MultiSceneModel& model, const TrainingConfig& cfg) : model_(model), cfg_(cfg) {
  validate_config(cfg_);
  validate_model(model_);
  cfg_.loc.score_fn = model_.score_fn;  // training always optimizes the model's own score
  AdamConfig adam;
  adam.lr = cfg_.lr;
  trunk_state_ = AdamState::init(model_.trunk, adam);
  trunk_grads_ = MlpGradients::zeros_like(model_.trunk);
  if (model_.score_head) {
    head_state_ = AdamState::init(*model_.score_head, adam);
    head_grads_ = MlpGradients::zeros_like(*model_.score_head);
  }
  for (auto& [id, scene] : model_.scenes) {
    SceneOpt opt;
    opt.pose = AdamState::init(scene.pose_encoder.mlp, adam);
    opt.projection = AdamState::init(scene.projection, adam);
    opt.pose_grads = MlpGradients::zeros_like(scene.pose_encoder.mlp);
    opt.proj_grads = MlpGradients::zeros_like(scene.projection);
    scene_opt_.emplace(id, std::move(opt));
  }
}

double Trainer::query_loss_and_grads(const std::string& scene_id, const SceneModel& scene,
                                     const Sample& sample, Rng& rng) {
  const Pose gt = normalize_pose(sample.pose, scene.frame);
  SceneOpt& opt = scene_opt_.at(scene_id);

  ForwardCache trunk_cache, proj_cache;
  const Eigen::VectorXd image_latent =
      encode_image(model_.trunk, scene, sample.features, &trunk_cache, &proj_cache);
  const Mlp* head = model_.score_head ? &*model_.score_head : nullptr;

  // Initial candidates plus componentwise uniform noise in [-v, v].
  CandidateSet current = initial_candidates(scene, cfg_.loc, rng);
  {
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const Eigen::Vector3d t_half = cfg_.init_noise.translation / scene.frame.scale;
    const Eigen::Vector3d r_half{deg2rad(cfg_.init_noise.rotation_deg[0]),
                                 deg2rad(cfg_.init_noise.rotation_deg[1]),
                                 deg2rad(cfg_.init_noise.rotation_deg[2])};
    for (auto& pose : current.poses) {
      Eigen::Vector3d dt, euler;
      for (int a = 0; a < 3; ++a) dt[a] = t_half[a] * unit(rng);
      for (int a = 0; a < 3; ++a) euler[a] = r_half[a] * unit(rng);
      pose = perturb_pose(pose, dt, euler);
    }
  }

  const double inv_n = 1.0 / double(cfg_.loc.N);
  double loss = 0.0;
  Eigen::VectorXd dimage = Eigen::VectorXd::Zero(image_latent.size());
  for (int k = 0; k <= cfg_.loc.K; ++k) {
    ForwardCache pose_cache;
    const Eigen::MatrixXd latents = encode_poses(scene.pose_encoder, current.poses, &pose_cache);
    ScoreBatch sb = score_latents(model_.score_fn, head, image_latent, latents);
    const Eigen::VectorXd targets = target_scores(gt, current.poses, cfg_.lambda_t, cfg_.lambda_r);
    loss += (sb.scores - targets).cwiseAbs().sum() * inv_n;

    // d|s - t|/ds, with the candidate count as the only normalizer.
    Eigen::VectorXd dscores(sb.scores.size());
    for (Eigen::Index i = 0; i < dscores.size(); ++i) {
      const double diff = sb.scores[i] - targets[i];
      dscores[i] = diff > 0.0 ? inv_n : (diff < 0.0 ? -inv_n : 0.0);
    }
    const Eigen::MatrixXd dlatents = score_latents_backward(model_.score_fn, head, image_latent, latents,
                                                            dscores, dimage, head ? &head_grads_ : nullptr);
    mlp_backward(scene.pose_encoder.mlp, pose_cache, dlatents, opt.pose_grads, /*want_input_grad=*/false);

    if (k < cfg_.loc.K) {
      current.scores = std::move(sb.scores);
      current.raw = std::move(sb.raw);
      current = training_proposer(current, targets, cfg_.loc, cfg_.proposer_mix, scene.frame, rng);
    }
  }

  const Eigen::MatrixXd dmid =
      mlp_backward(scene.projection, proj_cache, dimage.transpose(), opt.proj_grads);
  mlp_backward(model_.trunk, trunk_cache, dmid, trunk_grads_, /*want_input_grad=*/false);

  if (!std::isfinite(loss)) {
    throw NumericError("train_step: non-finite loss for query '" + sample.image_id + "'");
  }
  return loss;
}

void Trainer::apply_adam(const std::string& scene_id, double inv_batch) {
  SceneOpt& opt = scene_opt_.at(scene_id);
  SceneModel& scene = scene_at(model_, scene_id);
  trunk_grads_.scale(inv_batch);
  opt.pose_grads.scale(inv_batch);
  opt.proj_grads.scale(inv_batch);
  adam_step(model_.trunk, trunk_grads_, trunk_state_);
  adam_step(scene.pose_encoder.mlp, opt.pose_grads, opt.pose);
  adam_step(scene.projection, opt.proj_grads, opt.projection);
  if (model_.score_head) {
    head_grads_.scale(inv_batch);
    adam_step(*model_.score_head, head_grads_, head_state_);
  }
}

double Trainer::train_step(const std::string& scene_id, std::span<const Sample* const> batch,
                           uint64_t step_seed) {
  if (batch.empty()) {
    throw std::invalid_argument("train_step: empty minibatch");
  }
  const SceneModel& scene = scene_at(model_, scene_id);
  trunk_grads_.setZero();
  if (model_.score_head) head_grads_.setZero();
  SceneOpt& opt = scene_opt_.at(scene_id);
  opt.pose_grads.setZero();
  opt.proj_grads.setZero();

  double loss = 0.0;
  for (size_t i = 0; i < batch.size(); ++i) {
    Rng rng = make_rng(derive_seed(step_seed, kQueryStream, i));
    loss += query_loss_and_grads(scene_id, scene, *batch[i], rng);
  }
  const double inv = 1.0 / double(batch.size());
  apply_adam(scene_id, inv);
  return loss * inv;
}

TrainResult Trainer::train(const SceneDataset& dataset) {
  const SceneDataset* one[] = {&dataset};
  return train_impl(one);
}

TrainResult Trainer::train_multiscene(std::span<const SceneDataset> datasets) {
  std::vector<const SceneDataset*> ptrs;
  for (const auto& ds : datasets) ptrs.push_back(&ds);
  return train_impl(ptrs);
}

TrainResult Trainer::train_impl(std::span<const SceneDataset* const> datasets) {
  if (datasets.empty()) {
    throw std::invalid_argument("train: no datasets");
  }
  struct SceneData {
    const SceneDataset* ds;
    std::vector<int> train_idx;
  };
  std::vector<SceneData> scenes;
  for (const SceneDataset* ds : datasets) {
    auto it = model_.scenes.find(ds->scene_id);
    if (it == model_.scenes.end()) {
      throw std::invalid_argument("train: dataset scene '" + ds->scene_id + "' is not in the model");
    }
    const SceneModel& scene = it->second;
    if (scene.frame.scale != ds->frame.scale || (scene.frame.center.array() != ds->frame.center.array()).any()) {
      throw FrameError("train: scene '" + ds->scene_id + "' frame differs between model and dataset");
    }
    for (const auto& s : ds->samples) {
      if (s.features.size() != model_.trunk.input_dim()) {
        throw DimensionError("train: descriptor dim of '" + s.image_id + "' does not match the trunk");
      }
    }
    SceneData sd;
    sd.ds = ds;
    sd.train_idx = ds->split_indices(Split::Train);
    if (sd.train_idx.empty()) {
      throw std::invalid_argument("train: scene '" + ds->scene_id + "' has no train samples");
    }
    scenes.push_back(std::move(sd));
  }
  std::sort(scenes.begin(), scenes.end(),
            [](const SceneData& a, const SceneData& b) { return a.ds->scene_id < b.ds->scene_id; });

  TrainResult result;
  uint64_t global_step = 0;
  for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
    // Per-scene shuffled minibatches, interleaved round-robin.
    std::vector<std::vector<std::vector<const Sample*>>> batches(scenes.size());
    size_t max_batches = 0;
    size_t total_queries = 0;
    for (size_t s = 0; s < scenes.size(); ++s) {
      std::vector<int> order = scenes[s].train_idx;
      Rng shuffle_rng = make_rng(derive_seed(cfg_.seed, kShuffleStream + s, uint64_t(epoch)));
      std::shuffle(order.begin(), order.end(), shuffle_rng);
      for (size_t start = 0; start < order.size(); start += size_t(cfg_.batch_size)) {
        std::vector<const Sample*> batch;
        for (size_t i = start; i < std::min(order.size(), start + size_t(cfg_.batch_size)); ++i) {
          batch.push_back(&scenes[s].ds->samples[size_t(order[i])]);
        }
        batches[s].push_back(std::move(batch));
      }
      max_batches = std::max(max_batches, batches[s].size());
      total_queries += order.size();
    }

    double loss_sum = 0.0;
    for (size_t b = 0; b < max_batches; ++b) {
      for (size_t s = 0; s < scenes.size(); ++s) {
        if (b >= batches[s].size()) continue;
        const auto& batch = batches[s][b];
        const double mean_loss =
            train_step(scenes[s].ds->scene_id, batch, derive_seed(cfg_.seed, kStepStream, global_step++));
        loss_sum += mean_loss * double(batch.size());
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.mean_loss = loss_sum / double(total_queries);

    // Train-error estimate over a seeded subsample; its RNG streams are
    // disjoint from the optimization streams.
    std::vector<std::pair<size_t, int>> pool;
    for (size_t s = 0; s < scenes.size(); ++s) {
      for (int idx : scenes[s].train_idx) pool.emplace_back(s, idx);
    }
    Rng pick_rng = make_rng(derive_seed(cfg_.seed, kEvalPickStream, uint64_t(epoch)));
    std::shuffle(pool.begin(), pool.end(), pick_rng);
    pool.resize(std::min(pool.size(), size_t(cfg_.eval_subsample)));
    std::vector<double> errs_m, errs_deg;
    for (size_t i = 0; i < pool.size(); ++i) {
      const SceneData& sd = scenes[pool[i].first];
      const Sample& sample = sd.ds->samples[size_t(pool[i].second)];
      LocalizerConfig loc = cfg_.loc;
      loc.seed = derive_seed(cfg_.seed, kEvalLocStream, (uint64_t(epoch) << 24) | i);
      const LocalizeResult lr = localize(model_, sd.ds->scene_id, sample.features, loc);
      errs_m.push_back((lr.pose.t - sample.pose.t).norm());
      errs_deg.push_back(rad2deg(geodesic_distance(lr.pose.q, sample.pose.q)));
    }
    stats.median_train_error_m = median(errs_m);
    stats.median_train_error_deg = median(errs_deg);
    result.history.push_back(stats);

    if (cfg_.checkpoint_every > 0 && epoch % cfg_.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "epoch_%04d.impc", epoch);
      namespace fs = std::filesystem;
      fs::create_directories(cfg_.checkpoint_dir);
      checkpoint_save_file(model_, (fs::path(cfg_.checkpoint_dir) / name).string());
    }
  }
  return result;
}

TrainGradCheckReport training_gradient_check(ScoreFunction fn, int pose_depth, uint64_t seed,
                                             double tolerance) {
  // Frozen miniature instance: the candidate sets are generated once with the
  // unperturbed parameters and then treated as constants, mirroring the
  // gradient-stops-at-the-proposer rule.
  ModelConfig mc;
  mc.descriptor_dim = 6;
  mc.latent_dim = 8;
  mc.trunk_width = 8;
  mc.pose_width = 8;
  mc.pose_depth = pose_depth;
  mc.fourier.num_frequencies = 2;
  mc.score_fn = fn;
  mc.score_head_width = 8;

  Rng rng = make_rng(mix_seed(seed ^ 0x7467636bULL));
  std::uniform_real_distribution<double> unit(-0.5, 0.5);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto random_pose = [&]() {
    const Eigen::Vector3d t{unit(rng), unit(rng), unit(rng)};
    Eigen::Vector4d qc{gauss(rng), gauss(rng), gauss(rng), gauss(rng)};
    return Pose(t, Eigen::Quaterniond(qc[3], qc[0], qc[1], qc[2]), Frame::Normalized);
  };

  std::vector<Pose> refs;
  for (int i = 0; i < 8; ++i) refs.push_back(random_pose());
  const SceneFrame frame({0, 0, 0}, 100.0);
  const std::string scene_ids[] = {std::string("g")};
  const SceneFrame frames[] = {frame};
  const std::vector<Pose> initial[] = {refs};
  MultiSceneModel model = make_model(mc, scene_ids, frames, initial, seed);
  {
    // Pull the two latents inside unit distance so L2 starts in its active
    // region; cosine is scale-invariant, so this costs nothing there.
    auto shrink = [](Mlp& net) {
      net.layers.back().weights *= 0.05;
      net.layers.back().bias *= 0.05;
    };
    shrink(scene_at(model, "g").pose_encoder.mlp);
    shrink(scene_at(model, "g").projection);
  }
  const SceneModel& scene = scene_at(model, "g");

  TrainingConfig tc;
  tc.loc.N = 16;
  tc.loc.K = 2;
  tc.loc.B = 4;
  tc.loc.score_fn = fn;
  tc.seed = seed;

  Eigen::VectorXd features(6);
  for (int i = 0; i < 6; ++i) features[i] = gauss(rng);
  const Pose gt = random_pose();

  // Fixed candidate sets via one pass of the real pipeline.
  std::vector<std::vector<Pose>> sets;
  {
    const Eigen::VectorXd latent = encode_image(model.trunk, scene, features);
    const Mlp* head = model.score_head ? &*model.score_head : nullptr;
    CandidateSet cs = initial_candidates(scene, tc.loc, rng);
    for (int k = 0; k <= tc.loc.K; ++k) {
      sets.push_back(cs.poses);
      if (k == tc.loc.K) break;
      const Eigen::MatrixXd latents = encode_poses(scene.pose_encoder, cs.poses);
      ScoreBatch sb = score_latents(fn, head, latent, latents);
      cs.scores = std::move(sb.scores);
      cs.raw = std::move(sb.raw);
      const Eigen::VectorXd targets = target_scores(gt, cs.poses, tc.lambda_t, tc.lambda_r);
      cs = training_proposer(cs, targets, tc.loc, tc.proposer_mix, frame, rng);
    }
  }
  std::vector<Eigen::VectorXd> targets;
  for (const auto& poses : sets) {
    targets.push_back(target_scores(gt, poses, tc.lambda_t, tc.lambda_r));
  }

  const double inv_n = 1.0 / double(tc.loc.N);
  auto loss_of = [&](const MultiSceneModel& m) {
    const SceneModel& sc = scene_at(m, "g");
    const Eigen::VectorXd latent = encode_image(m.trunk, sc, features);
    const Mlp* head = m.score_head ? &*m.score_head : nullptr;
    double loss = 0.0;
    for (size_t k = 0; k < sets.size(); ++k) {
      const Eigen::MatrixXd latents = encode_poses(sc.pose_encoder, sets[k]);
      const ScoreBatch sb = score_latents(fn, head, latent, latents);
      loss += (sb.scores - targets[k]).cwiseAbs().sum() * inv_n;
    }
    return loss;
  };

  // Analytic gradients over the frozen sets.
  MlpGradients trunk_g = MlpGradients::zeros_like(model.trunk);
  MlpGradients proj_g = MlpGradients::zeros_like(scene.projection);
  MlpGradients pose_g = MlpGradients::zeros_like(scene.pose_encoder.mlp);
  MlpGradients head_g;
  if (model.score_head) head_g = MlpGradients::zeros_like(*model.score_head);
  {
    ForwardCache trunk_cache, proj_cache;
    const Eigen::VectorXd latent = encode_image(model.trunk, scene, features, &trunk_cache, &proj_cache);
    const Mlp* head = model.score_head ? &*model.score_head : nullptr;
    Eigen::VectorXd dimage = Eigen::VectorXd::Zero(latent.size());
    for (size_t k = 0; k < sets.size(); ++k) {
      ForwardCache pose_cache;
      const Eigen::MatrixXd latents = encode_poses(scene.pose_encoder, sets[k], &pose_cache);
      const ScoreBatch sb = score_latents(fn, head, latent, latents);
      Eigen::VectorXd dscores(sb.scores.size());
      for (Eigen::Index i = 0; i < dscores.size(); ++i) {
        const double diff = sb.scores[i] - targets[k][i];
        dscores[i] = diff > 0.0 ? inv_n : (diff < 0.0 ? -inv_n : 0.0);
      }
      const Eigen::MatrixXd dlatents =
          score_latents_backward(fn, head, latent, latents, dscores, dimage, head ? &head_g : nullptr);
      mlp_backward(scene.pose_encoder.mlp, pose_cache, dlatents, pose_g, /*want_input_grad=*/false);
    }
    const Eigen::MatrixXd dmid = mlp_backward(scene.projection, proj_cache, dimage.transpose(), proj_g);
    mlp_backward(model.trunk, trunk_cache, dmid, trunk_g, /*want_input_grad=*/false);
  }

  TrainGradCheckReport report;
  const double h = 1e-5;
  MultiSceneModel probe = model;
  auto check_param = [&](double* value, double analytic, const std::string& path) {
    const double saved = *value;
    *value = saved + h;
    const double up = loss_of(probe);
    *value = saved - h;
    const double down = loss_of(probe);
    *value = saved;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::abs(analytic - fd) / std::max(std::abs(analytic) + std::abs(fd), 1e-2);
    ++report.checked_params;
    if (analytic != 0.0) ++report.active_params;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_param = path;
    }
  };
  auto check_mlp = [&](Mlp& net, const MlpGradients& grads, const std::string& name) {
    for (size_t l = 0; l < net.layers.size(); ++l) {
      auto& layer = net.layers[l];
      for (Eigen::Index i = 0; i < layer.weights.size(); ++i) {
        check_param(layer.weights.data() + i, grads.dweights[l].data()[i],
                    name + " layer " + std::to_string(l) + " W[" + std::to_string(i) + "]");
      }
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) {
        check_param(layer.bias.data() + i, grads.dbias[l].data()[i],
                    name + " layer " + std::to_string(l) + " b[" + std::to_string(i) + "]");
      }
    }
  };
  SceneModel& probe_scene = scene_at(probe, "g");
  check_mlp(probe.trunk, trunk_g, "trunk");
  check_mlp(probe_scene.projection, proj_g, "projection");
  check_mlp(probe_scene.pose_encoder.mlp, pose_g, "pose_encoder");
  if (probe.score_head) check_mlp(*probe.score_head, head_g, "score_head");

  report.passed = report.max_rel_error < tolerance;
  return report;
}

}  // namespace impose
