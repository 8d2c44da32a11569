#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "impose/geometry.hpp"
#include "impose/kvconfig.hpp"

namespace impose {

enum class Split { Train, Test };

struct Sample {
  std::string image_id;
  Pose pose = Pose::identity();  // World frame
  Eigen::VectorXd features;      // backbone descriptor, length F
  Split split = Split::Train;
  int run = 0;                   // synthetic provenance: which traversal
};

struct SceneDataset {
  std::string scene_id;
  SceneFrame frame;  // computed from the train split
  std::vector<Sample> samples;

  int descriptor_dim() const { return samples.empty() ? 0 : int(samples.front().features.size()); }
  std::vector<int> split_indices(Split s) const;
};

enum class Trajectory { Loop, Grid, Figure8 };

struct SyntheticSceneConfig {
  std::string scene_id = "toy";
  Trajectory trajectory = Trajectory::Loop;
  double extent_m = 1000.0;  // map diameter
  int n_train = 2000;
  int n_test = 500;
  int runs = 2;  // appearance variants of the training trajectory
  int descriptor_dim = 64;
  uint64_t oracle_seed = 1;
  double sigma_obs = 0.02;  // per-sample descriptor noise std
  double sigma_run = 0.05;  // per-run additive bias std
  // Oracle frequency band (rad per map-diameter unit), log-uniform.
  double freq_min = 16.0;
  double freq_max = 160.0;
};

struct DatasetStats {
  std::optional<double> median_nn_spacing_m;  // absent when < 2 train poses
  double map_diameter_m = 0.0;
  int n_train = 0;
  int n_test = 0;
};

// ---- pose tables (delimited text, header image_id,tx,ty,tz,qx,qy,qz,qw) ----

std::vector<std::pair<std::string, Pose>> load_poses(const std::string& path);
void save_poses(const std::string& path, std::span<const std::pair<std::string, Pose>> entries);

// ---- descriptor files (binary "IMPD" + text sidecar <path>.idx) ----

struct DescriptorSet {
  std::vector<std::string> ids;  // ids[i] names matrix row i
  Eigen::MatrixXf values;        // count x dim
};

DescriptorSet load_descriptors(const std::string& path);
void save_descriptors(const std::string& path, const DescriptorSet& set);

// ---- scene directories ----

// Layout: scene.txt (kv metadata), {train,test}_poses.csv,
// {train,test}_descriptors.bin(+.idx). The SceneFrame is recomputed from the
// train poses at load time, so it is never stored.
SceneDataset load_scene_dataset(const std::string& dir);
void save_scene_dataset(const SceneDataset& ds, const std::string& dir, const KvConfig* provenance = nullptr);

// Frame from train positions: center = AABB midpoint, scale = largest axis
// extent (1.0 when degenerate).
SceneFrame compute_frame(std::span<const Pose> train_poses);

SceneDataset generate_synthetic_scene(const SyntheticSceneConfig& cfg);

// Oracle descriptor at a pose (before run bias / observation noise); exposed
// for tests of smoothness and determinism.
Eigen::VectorXd oracle_descriptor(const SyntheticSceneConfig& cfg, const Pose& world_pose);

DatasetStats dataset_stats(const SceneDataset& ds);

const char* trajectory_name(Trajectory t);
Trajectory trajectory_from(const std::string& name);

}  // namespace impose
