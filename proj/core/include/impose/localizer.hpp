#pragma once

#include <iosfwd>

#include "impose/encoders.hpp"
#include "impose/rng.hpp"

namespace impose {

// One iteration's pose hypotheses. Scores are in [0,1]; `raw` keeps the
// pre-clamp similarity for the all-zero-score fallback. Both stay empty until
// the set is scored.
struct CandidateSet {
  std::vector<Pose> poses;  // Normalized frame
  Eigen::VectorXd scores;
  Eigen::VectorXd raw;
  int k = 0;

  bool scored() const { return !poses.empty() && scores.size() == Eigen::Index(poses.size()); }
};

enum class InitMode { ReferencePoses, Grid2D };

struct LocalizerConfig {
  int N = 4096;        // candidates per iteration
  int K = 6;           // refinement iterations
  int B = 100;         // top mixture components
  int avg_count = 256; // poses averaged in the final step
  NoiseVector v0;      // base sampling variance, meters / degrees
  InitMode init_mode = InitMode::ReferencePoses;
  ScoreFunction score_fn = ScoreFunction::Cosine;
  uint64_t seed = 0;
};

void validate_config(const LocalizerConfig& cfg);

struct IterationSummary {
  int k = 0;
  double best_score = 0.0;
  double mean_score = 0.0;
  Pose best_candidate = Pose::identity(Frame::Normalized);
};

struct LocalizeResult {
  Pose pose = Pose::identity();               // World frame
  std::vector<IterationSummary> per_iteration;  // one entry per scored set
  std::vector<CandidateSet> diagnostics;        // filled only when requested
  size_t peak_live_candidates = 0;
};

// Single-precision inference nets converted once per model.
struct SceneNetsF {
  MlpF pose;
  MlpF projection;
};
struct InferenceNetsF {
  MlpF trunk;
  std::map<std::string, SceneNetsF> scenes;
  std::optional<MlpF> head;
};
InferenceNetsF to_single_precision_nets(const MultiSceneModel& model);

struct LocalizeOptions {
  bool keep_diagnostics = false;      // retain every scored set (O(K·N) memory)
  const InferenceNetsF* f32 = nullptr;  // when set, run encoder/score math in float
};

CandidateSet initial_candidates(const SceneModel& scene, const LocalizerConfig& cfg, Rng& rng);

// Scores cs against the image latent using cfg.score_fn (head required for
// LearnedMlp). Poses are untouched.
CandidateSet score_candidates(const MultiSceneModel& model, const SceneModel& scene,
                              const Eigen::VectorXd& image_latent, CandidateSet cs,
                              const LocalizerConfig& cfg);

// Samples set k+1 from the score-weighted Gaussian mixture over cs's top-B.
// Sampling variance is v0 / 2^(k+1), converted to normalized units via frame.
CandidateSet propose_next(const CandidateSet& cs, const LocalizerConfig& cfg, const SceneFrame& frame, Rng& rng);

LocalizeResult localize(const MultiSceneModel& model, const std::string& scene_id,
                        const Eigen::VectorXd& features, const LocalizerConfig& cfg,
                        const LocalizeOptions& opts = {});

struct FlopsEstimate {
  double image_head_flops = 0.0;
  double pose_decode_flops = 0.0;
  double total = 0.0;
  std::string formula;
};

// Closed-form multiply-add count: 2*in*out per dense layer per sample;
// pose_decode = K*N*(pose MLP + score). Linear in K and N by construction.
FlopsEstimate flops_estimate(const MultiSceneModel& model, const std::string& scene_id,
                             const LocalizerConfig& cfg);

struct ScoreRow {
  int k = 0;
  Pose world_pose = Pose::identity();
  double score = 0.0;
};

// Scores every probe pose (World frame) against the image latent.
std::vector<ScoreRow> export_score_map(const MultiSceneModel& model, const std::string& scene_id,
                                       const Eigen::VectorXd& image_latent, std::span<const Pose> probe_poses,
                                       const LocalizerConfig& cfg);

// Delimited text, header k,tx,ty,tz,qx,qy,qz,qw,score, 9 significant digits.
void write_score_rows(std::ostream& out, std::span<const ScoreRow> rows);

// World-frame rows of every scored set in a localize run's diagnostics.
std::vector<ScoreRow> diagnostics_to_rows(const LocalizeResult& result, const SceneFrame& frame);

}  // namespace impose
