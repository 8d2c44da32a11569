#pragma once

#include "impose/data.hpp"
#include "impose/localizer.hpp"

namespace impose {

struct TrainingConfig {
  double lambda_t = 5.0;   // score slope per normalized distance unit
  double lambda_r = 0.1;   // score slope per radian
  int epochs = 250;
  double lr = 1e-4;
  int batch_size = 16;
  NoiseVector init_noise;  // uniform [-v, v] on initial candidates, reuses v0 defaults
  double proposer_mix = 0.5;  // fraction of B chosen by target score
  uint64_t seed = 0;
  LocalizerConfig loc;     // N, K, B, v0 for the training-time loop
  int checkpoint_every = 0;    // epochs between checkpoints; 0 disables
  std::string checkpoint_dir;  // required when checkpoint_every > 0
  int eval_subsample = 64;     // train queries localized per epoch for the history
};

void validate_config(const TrainingConfig& cfg);

// Supervision target: max(0, 1 - lambda_t*|dt| - lambda_r*G). Both poses Normalized.
double target_score(const Pose& query_pose, const Pose& candidate, double lambda_t, double lambda_r);

// Batched targets; matches the scalar op within 1e-8 (rotation term computed
// from the quaternion dot product instead of the rotation-matrix trace).
Eigen::VectorXd target_scores(const Pose& query_pose, std::span<const Pose> candidates, double lambda_t,
                              double lambda_r);

// Score loss: sum of |predicted - target| over all (set, candidate) pairs,
// divided by the candidate count only. Rows are iteration sets, columns candidates.
double score_loss(const Eigen::MatrixXd& predicted, const Eigen::MatrixXd& targets);

// Training-time proposer: ceil(mix*B) components by target score, the rest by
// predicted score (duplicates removed, backfilled by next-best predicted).
// Mixture weights over the union use predicted scores; components with zero
// predicted score get the smallest positive predicted weight (uniform if all
// zero). Sampling variance as in the inference proposer.
CandidateSet training_proposer(const CandidateSet& cs, const Eigen::VectorXd& targets,
                               const LocalizerConfig& cfg, double proposer_mix, const SceneFrame& frame,
                               Rng& rng);

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double median_train_error_m = 0.0;
  double median_train_error_deg = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
};

// Loss-history rows as delimited text: epoch,mean_loss,median_train_error_m,
// median_train_error_deg.
void write_loss_history(std::ostream& out, std::span<const EpochStats> history);

// Owns the Adam state for every parameter group of one model. Scoring,
// selection, and sampling treat candidates as constants: gradients flow into
// the trunk, projections, pose encoders, and score head only.
class Trainer {
 public:
  Trainer(MultiSceneModel& model, const TrainingConfig& cfg);

  // One Adam step on a single-scene minibatch; returns the mean per-query
  // score loss. Throws NumericError (naming the query) on non-finite loss.
  double train_step(const std::string& scene_id, std::span<const Sample* const> batch, uint64_t step_seed);

  TrainResult train(const SceneDataset& dataset);
  TrainResult train_multiscene(std::span<const SceneDataset> datasets);

 private:
  struct SceneOpt {
    AdamState pose;
    AdamState projection;
    MlpGradients pose_grads;
    MlpGradients proj_grads;
  };

  double query_loss_and_grads(const std::string& scene_id, const SceneModel& scene, const Sample& sample,
                              Rng& rng);
  void apply_adam(const std::string& scene_id, double inv_batch);
  TrainResult train_impl(std::span<const SceneDataset* const> datasets);

  MultiSceneModel& model_;
  TrainingConfig cfg_;
  AdamState trunk_state_;
  AdamState head_state_;
  std::map<std::string, SceneOpt> scene_opt_;
  MlpGradients trunk_grads_;
  MlpGradients head_grads_;
};

struct TrainGradCheckReport {
  double max_rel_error = 0.0;
  long checked_params = 0;
  long active_params = 0;  // params with nonzero analytic gradient; 0 means vacuous
  bool passed = false;
  std::string worst_param;
};

// Freezes a tiny seeded instance (fixed candidate sets, fixed queries) and
// compares the analytic gradient of the score loss against central finite
// differences over every trainable parameter.
TrainGradCheckReport training_gradient_check(ScoreFunction fn, int pose_depth, uint64_t seed,
                                             double tolerance = 1e-4);

}  // namespace impose
