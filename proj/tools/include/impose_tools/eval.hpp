#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "impose/data.hpp"
#include "impose/kvconfig.hpp"
#include "impose/localizer.hpp"

namespace impose::tools {

// Retrieval baseline: cosine similarity in raw descriptor space, uniform pose
// average over the top `top_n` train samples.
Pose retrieval_baseline_pose(const SceneDataset& ds, std::span<const int> train_rows,
                             const Eigen::VectorXd& query_features, int top_n);

struct QueryEval {
  std::string image_id;
  double err_m = 0.0;
  double err_deg = 0.0;
  double baseline_err_m = 0.0;    // valid when the report has a baseline
  double baseline_err_deg = 0.0;
  double runtime_ms = 0.0;
};

struct EvalReport {
  std::vector<QueryEval> rows;  // ordered by image_id
  double median_err_m = 0.0;
  double mean_err_m = 0.0;
  double median_err_deg = 0.0;
  double mean_err_deg = 0.0;
  std::optional<double> baseline_median_err_m;
  std::optional<double> baseline_median_err_deg;
  double mean_runtime_ms = 0.0;
};

struct EvalOptions {
  int retrieval_top_n = 20;  // 0 disables the baseline columns
  uint64_t seed = 0;         // per-query localizer seeds derive from this
};

// Localizes every test-split sample of `ds` against `model` and aggregates
// world-frame errors; rotation metric is geodesic_distance in degrees.
EvalReport evaluate_scene(const MultiSceneModel& model, const SceneDataset& ds, const LocalizerConfig& cfg,
                          const EvalOptions& opts = {});

// Delimited text: provenance comments (resolved config), header, one row per
// query, then summary rows.
void write_eval_report(std::ostream& out, const EvalReport& report, const KvConfig& provenance);

}  // namespace impose::tools
