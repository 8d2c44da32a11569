#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "impose/geometry.hpp"
#include "impose/nn.hpp"

namespace impose {

// Pose encoder f_M: Fourier features over (tx,ty,tz,qx,qy,qz,qw) -> MLP -> d-dim latent.
struct PoseEncoder {
  FourierConfig fourier;
  Mlp mlp;

  int latent_dim() const { return mlp.output_dim(); }
};

// One scene: its pose encoder, the scene-specific final linear layer of the
// image head, the normalization frame, and the reference poses used to seed
// candidate sampling. initial_poses are stored in the Normalized frame.
struct SceneModel {
  std::string scene_id;
  PoseEncoder pose_encoder;
  Mlp projection;  // single Identity layer (trunk width -> d)
  SceneFrame frame;
  std::vector<Pose> initial_poses;

  DenseLayer& projection_layer() { return projection.layers.front(); }
  const DenseLayer& projection_layer() const { return projection.layers.front(); }
  int latent_dim() const { return projection.output_dim(); }
};

// Shared image trunk plus per-scene parameters. The trunk is shared by all
// scenes; each scene owns its pose encoder and projection.
struct MultiSceneModel {
  Mlp trunk;
  std::map<std::string, SceneModel> scenes;
  ScoreFunction score_fn = ScoreFunction::Cosine;
  std::optional<Mlp> score_head;  // present iff score_fn == LearnedMlp
  uint64_t build_seed = 0;

  int descriptor_dim() const { return trunk.input_dim(); }
  int latent_dim() const { return scenes.begin()->second.latent_dim(); }
};

struct ModelConfig {
  int descriptor_dim = 64;   // backbone feature width F
  int latent_dim = 256;      // d
  int trunk_width = 256;     // hidden width of the shared image trunk
  int pose_width = 256;      // width of pose-encoder hidden layers
  int pose_depth = 4;        // dense layers in the pose encoder, 1..8
  FourierConfig fourier;
  ScoreFunction score_fn = ScoreFunction::Cosine;
  int score_head_width = 0;  // hidden width of the learned score head; 0 = latent_dim
};

// Builds a scene's pose encoder + projection with seeded init. initial_poses
// must be Normalized and nonempty.
SceneModel make_scene_model(const ModelConfig& cfg, const std::string& scene_id, const SceneFrame& frame,
                            std::vector<Pose> initial_poses, uint64_t seed);

// Builds trunk (+ learned score head when configured) and one SceneModel per
// entry. Frames/initial poses are per scene, keyed in order of scene_ids.
MultiSceneModel make_model(const ModelConfig& cfg, std::span<const std::string> scene_ids,
                           std::span<const SceneFrame> frames, std::span<const std::vector<Pose>> initial_poses,
                           uint64_t seed);

void validate_model(const MultiSceneModel& model);

const SceneModel& scene_at(const MultiSceneModel& model, const std::string& scene_id);
SceneModel& scene_at(MultiSceneModel& model, const std::string& scene_id);

// Fourier-feature rows for a batch of Normalized poses. Quaternion sign is
// canonicalized (qw >= 0) so q and -q encode identically. World-frame input
// is a frame error.
Eigen::MatrixXd pose_feature_matrix(std::span<const Pose> poses, const FourierConfig& cfg);

// Batched f_M. Row i is the latent of poses[i].
Eigen::MatrixXd encode_poses(const PoseEncoder& pe, std::span<const Pose> poses, ForwardCache* cache = nullptr);

// f_I: projection(trunk(features)).
Eigen::VectorXd encode_image(const Mlp& trunk, const SceneModel& scene, const Eigen::VectorXd& features,
                             ForwardCache* trunk_cache = nullptr, ForwardCache* proj_cache = nullptr);

// ---- checkpoint serialization (format owned by the data layer docs) ----

std::vector<std::byte> checkpoint_save(const MultiSceneModel& model);
MultiSceneModel checkpoint_load(std::span<const std::byte> bytes);
void checkpoint_save_file(const MultiSceneModel& model, const std::string& path);
MultiSceneModel checkpoint_load_file(const std::string& path);

}  // namespace impose
