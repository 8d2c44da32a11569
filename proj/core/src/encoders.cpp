#include "impose/encoders.hpp"

#include "impose/rng.hpp"

namespace impose {

namespace {

// Scalars fed to the Fourier map per pose: tx, ty, tz, qx, qy, qz, qw.
constexpr int kPoseScalars = 7;

// Stable stream ids for seeding the different parameter groups.
constexpr uint64_t kTrunkStream = 0x74726b;
constexpr uint64_t kHeadStream = 0x686431;
constexpr uint64_t kPoseStream = 0x706f73;
constexpr uint64_t kProjStream = 0x70726a;

uint64_t scene_seed(uint64_t seed, uint64_t stream, const std::string& scene_id) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : scene_id) {
    h = (h ^ c) * 0x100000001b3ULL;
  }
  return derive_seed(seed, stream, h);
}

}  // namespace

SceneModel make_scene_model(const ModelConfig& cfg, const std::string& scene_id, const SceneFrame& frame,
                            std::vector<Pose> initial_poses, uint64_t seed) {
  if (cfg.pose_depth < 1 || cfg.pose_depth > 8) {
    throw DimensionError("make_scene_model: pose_depth must be in 1..8");
  }
  if (scene_id.empty() || scene_id.find_first_of("=,\n\r") != std::string::npos) {
    throw std::invalid_argument("make_scene_model: scene id must be nonempty without '=', ',' or newlines");
  }
  if (initial_poses.empty()) {
    throw std::invalid_argument("make_scene_model: initial_poses must be nonempty");
  }
  for (const auto& p : initial_poses) {
    if (p.frame != Frame::Normalized) {
      throw FrameError("make_scene_model: initial poses must be Normalized");
    }
  }

  SceneModel scene;
  scene.scene_id = scene_id;
  scene.frame = frame;
  scene.initial_poses = std::move(initial_poses);
  scene.pose_encoder.fourier = cfg.fourier;

  std::vector<int> pose_dims;
  pose_dims.push_back(cfg.fourier.output_dim(kPoseScalars));
  for (int l = 0; l + 1 < cfg.pose_depth; ++l) pose_dims.push_back(cfg.pose_width);
  pose_dims.push_back(cfg.latent_dim);
  scene.pose_encoder.mlp =
      make_mlp(pose_dims, Activation::ReLU, Activation::Identity, scene_seed(seed, kPoseStream, scene_id));

  const int proj_dims[] = {cfg.trunk_width, cfg.latent_dim};
  scene.projection =
      make_mlp(proj_dims, Activation::Identity, Activation::Identity, scene_seed(seed, kProjStream, scene_id));
  return scene;
}

MultiSceneModel make_model(const ModelConfig& cfg, std::span<const std::string> scene_ids,
                           std::span<const SceneFrame> frames, std::span<const std::vector<Pose>> initial_poses,
                           uint64_t seed) {
  if (scene_ids.empty()) {
    throw std::invalid_argument("make_model: need at least one scene");
  }
  if (frames.size() != scene_ids.size() || initial_poses.size() != scene_ids.size()) {
    throw DimensionError("make_model: scene_ids, frames, initial_poses lengths differ");
  }
  MultiSceneModel model;
  model.build_seed = seed;
  model.score_fn = cfg.score_fn;
  const int trunk_dims[] = {cfg.descriptor_dim, cfg.trunk_width};
  model.trunk = make_mlp(trunk_dims, Activation::ReLU, Activation::ReLU, derive_seed(seed, kTrunkStream, 0));
  if (cfg.score_fn == ScoreFunction::LearnedMlp) {
    const int hidden = cfg.score_head_width > 0 ? cfg.score_head_width : cfg.latent_dim;
    const int head_dims[] = {cfg.latent_dim, hidden, 1};
    model.score_head = make_mlp(head_dims, Activation::ReLU, Activation::Sigmoid, derive_seed(seed, kHeadStream, 0));
  }
  for (size_t i = 0; i < scene_ids.size(); ++i) {
    if (model.scenes.count(scene_ids[i])) {
      throw std::invalid_argument("make_model: duplicate scene id " + scene_ids[i]);
    }
    model.scenes.emplace(scene_ids[i],
                         make_scene_model(cfg, scene_ids[i], frames[i], initial_poses[i], seed));
  }
  return model;
}

void validate_model(const MultiSceneModel& model) {
  if (model.scenes.empty()) {
    throw DimensionError("validate_model: no scenes");
  }
  validate_mlp(model.trunk);
  const int d = model.latent_dim();
  for (const auto& [id, scene] : model.scenes) {
    validate_mlp(scene.pose_encoder.mlp);
    validate_mlp(scene.projection);
    if (scene.pose_encoder.mlp.input_dim() != scene.pose_encoder.fourier.output_dim(kPoseScalars)) {
      throw DimensionError("validate_model: scene " + id + " pose encoder does not match fourier width");
    }
    if (scene.pose_encoder.latent_dim() != d || scene.latent_dim() != d) {
      throw DimensionError("validate_model: scene " + id + " latent dims inconsistent");
    }
    if (scene.projection.input_dim() != model.trunk.output_dim()) {
      throw DimensionError("validate_model: scene " + id + " projection does not chain from trunk");
    }
    if (scene.initial_poses.empty()) {
      throw std::invalid_argument("validate_model: scene " + id + " has no initial poses");
    }
  }
  if (model.score_fn == ScoreFunction::LearnedMlp) {
    if (!model.score_head) {
      throw DimensionError("validate_model: LearnedMlp score without a head");
    }
    validate_mlp(*model.score_head);
    if (model.score_head->input_dim() != d || model.score_head->output_dim() != 1) {
      throw DimensionError("validate_model: score head dims do not match latent dim");
    }
  }
}

const SceneModel& scene_at(const MultiSceneModel& model, const std::string& scene_id) {
  auto it = model.scenes.find(scene_id);
  if (it == model.scenes.end()) {
    throw std::invalid_argument("unknown scene id: " + scene_id);
  }
  return it->second;
}

SceneModel& scene_at(MultiSceneModel& model, const std::string& scene_id) {
  auto it = model.scenes.find(scene_id);
  if (it == model.scenes.end()) {
    throw std::invalid_argument("unknown scene id: " + scene_id);
  }
  return it->second;
}

Eigen::MatrixXd pose_feature_matrix(std::span<const Pose> poses, const FourierConfig& cfg) {
  Eigen::MatrixXd raw(Eigen::Index(poses.size()), kPoseScalars);
  for (size_t i = 0; i < poses.size(); ++i) {
    const Pose& p = poses[i];
    if (p.frame != Frame::Normalized) {
      throw FrameError("pose_feature_matrix: pose " + std::to_string(i) + " is not Normalized");
    }
    const Eigen::Quaterniond q = canonical_sign(p.q);
    raw(i, 0) = p.t.x();
    raw(i, 1) = p.t.y();
    raw(i, 2) = p.t.z();
    raw(i, 3) = q.x();
    raw(i, 4) = q.y();
    raw(i, 5) = q.z();
    raw(i, 6) = q.w();
  }
  return fourier_encode_batch<double>(raw, cfg);
}

Eigen::MatrixXd encode_poses(const PoseEncoder& pe, std::span<const Pose> poses, ForwardCache* cache) {
  return mlp_forward(pe.mlp, pose_feature_matrix(poses, pe.fourier), cache);
}

Eigen::VectorXd encode_image(const Mlp& trunk, const SceneModel& scene, const Eigen::VectorXd& features,
                             ForwardCache* trunk_cache, ForwardCache* proj_cache) {
  if (features.size() != trunk.input_dim()) {
    throw DimensionError("encode_image: feature dim " + std::to_string(features.size()) +
                         " does not match trunk input " + std::to_string(trunk.input_dim()));
  }
  Eigen::MatrixXd row(1, features.size());
  row.row(0) = features.transpose();
  const Eigen::MatrixXd mid = mlp_forward(trunk, row, trunk_cache);
  return mlp_forward(scene.projection, mid, proj_cache).row(0).transpose();
}

}  // namespace impose
