#include "impose_tools/eval.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <ostream>

#include "impose/stats.hpp"

namespace impose::tools {

namespace {

constexpr uint64_t kEvalStream = 0x65766c;  // "evl"

}  // namespace

Pose retrieval_baseline_pose(const SceneDataset& ds, std::span<const int> train_rows,
                             const Eigen::VectorXd& query_features, int top_n) {
  if (train_rows.empty() || top_n < 1) {
    throw std::invalid_argument("retrieval_baseline_pose: need train rows and top_n >= 1");
  }
  const double qn = query_features.norm();
  std::vector<std::pair<double, int>> sims;  // (-similarity, row) so sort is descending with index ties
  sims.reserve(train_rows.size());
  for (int row : train_rows) {
    const Eigen::VectorXd& f = ds.samples[size_t(row)].features;
    if (f.size() != query_features.size()) {
      throw DimensionError("retrieval_baseline_pose: descriptor dimension mismatch");
    }
    const double denom = std::max(qn * f.norm(), 1e-300);
    sims.emplace_back(-query_features.dot(f) / denom, row);
  }
  const size_t keep = std::min(size_t(top_n), sims.size());
  std::partial_sort(sims.begin(), sims.begin() + long(keep), sims.end());
  std::vector<Pose> poses;
  std::vector<double> weights(keep, 1.0);
  poses.reserve(keep);
  for (size_t i = 0; i < keep; ++i) poses.push_back(ds.samples[size_t(sims[i].second)].pose);
  return average_poses(poses, weights);
}

EvalReport evaluate_scene(const MultiSceneModel& model, const SceneDataset& ds, const LocalizerConfig& cfg,
                          const EvalOptions& opts) {
  const std::vector<int> test_rows = ds.split_indices(Split::Test);
  const std::vector<int> train_rows = ds.split_indices(Split::Train);
  if (test_rows.empty()) {
    throw std::invalid_argument("evaluate_scene: dataset has no test split");
  }
  EvalReport report;
  report.rows.reserve(test_rows.size());
  LocalizerConfig query_cfg = cfg;
  for (size_t i = 0; i < test_rows.size(); ++i) {
    const Sample& s = ds.samples[size_t(test_rows[i])];
    query_cfg.seed = derive_seed(opts.seed, kEvalStream, i);
    const auto t0 = std::chrono::steady_clock::now();
    const LocalizeResult loc = localize(model, ds.scene_id, s.features, query_cfg);
    const auto t1 = std::chrono::steady_clock::now();
    QueryEval row;
    row.image_id = s.image_id;
    row.err_m = (loc.pose.t - s.pose.t).norm();
    row.err_deg = rad2deg(geodesic_distance(loc.pose.q, s.pose.q));
    row.runtime_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (opts.retrieval_top_n > 0) {
      const Pose base = retrieval_baseline_pose(ds, train_rows, s.features, opts.retrieval_top_n);
      row.baseline_err_m = (base.t - s.pose.t).norm();
      row.baseline_err_deg = rad2deg(geodesic_distance(base.q, s.pose.q));
    }
    report.rows.push_back(std::move(row));
  }
  std::sort(report.rows.begin(), report.rows.end(),
            [](const QueryEval& a, const QueryEval& b) { return a.image_id < b.image_id; });

  std::vector<double> em, ed, bm, bd, ms;
  for (const QueryEval& r : report.rows) {
    em.push_back(r.err_m);
    ed.push_back(r.err_deg);
    bm.push_back(r.baseline_err_m);
    bd.push_back(r.baseline_err_deg);
    ms.push_back(r.runtime_ms);
  }
  report.median_err_m = median(em);
  report.mean_err_m = mean(em);
  report.median_err_deg = median(ed);
  report.mean_err_deg = mean(ed);
  report.mean_runtime_ms = mean(ms);
  if (opts.retrieval_top_n > 0) {
    report.baseline_median_err_m = median(bm);
    report.baseline_median_err_deg = median(bd);
  }
  return report;
}

void write_eval_report(std::ostream& out, const EvalReport& report, const KvConfig& provenance) {
  for (const auto& [key, value] : provenance.items()) {
    out << "# " << key << "=" << value << "\n";
  }
  const bool base = report.baseline_median_err_m.has_value();
  out << "image_id,err_m,err_deg" << (base ? ",baseline_err_m,baseline_err_deg" : "") << ",runtime_ms\n";
  char buf[256];
  for (const QueryEval& r : report.rows) {
    if (base) {
      std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.image_id.c_str(), r.err_m, r.err_deg,
                    r.baseline_err_m, r.baseline_err_deg, r.runtime_ms);
    } else {
      std::snprintf(buf, sizeof(buf), "%s,%.9g,%.9g,%.9g\n", r.image_id.c_str(), r.err_m, r.err_deg, r.runtime_ms);
    }
    out << buf;
  }
  out << "# median_err_m=" << report.median_err_m << "\n";
  out << "# mean_err_m=" << report.mean_err_m << "\n";
  out << "# median_err_deg=" << report.median_err_deg << "\n";
  out << "# mean_err_deg=" << report.mean_err_deg << "\n";
  if (base) {
    out << "# baseline_median_err_m=" << *report.baseline_median_err_m << "\n";
    out << "# baseline_median_err_deg=" << *report.baseline_median_err_deg << "\n";
  }
  out << "# mean_runtime_ms=" << report.mean_runtime_ms << "\n";
}

}  // namespace impose::tools
