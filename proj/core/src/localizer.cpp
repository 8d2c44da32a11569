#include "impose/localizer.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <sstream>

#include "impose/errors.hpp"
#include "impose/stats.hpp"
#include "sampling_detail.hpp"

namespace impose {

namespace detail {

std::vector<int> top_indices(const Eigen::VectorXd& values, int count) {
  std::vector<int> idx(size_t(values.size()));
  std::iota(idx.begin(), idx.end(), 0);
  const int n = std::min<int>(count, int(values.size()));
  std::partial_sort(idx.begin(), idx.begin() + n, idx.end(), [&](int a, int b) {
    if (values[a] != values[b]) return values[a] > values[b];
    return a < b;
  });
  idx.resize(size_t(n));
  return idx;
}

AxisNoise noise_at(const NoiseVector& v0, int k, const SceneFrame& frame) {
  const NoiseVector v = v0.at_iteration(k);
  AxisNoise out;
  for (int a = 0; a < 3; ++a) {
    out.t_std[a] = std::sqrt(v.translation[a]) / frame.scale;
    out.r_std[a] = deg2rad(std::sqrt(v.rotation_deg[a]));
  }
  return out;
}

CandidateSet sample_gmm(const CandidateSet& cs, const std::vector<int>& comps, const Eigen::VectorXd& pi,
                        int N, int next_k, const AxisNoise& noise, Rng& rng) {
  std::vector<double> cum(comps.size());
  double acc = 0.0;
  for (size_t j = 0; j < comps.size(); ++j) {
    acc += pi[Eigen::Index(j)];
    cum[j] = acc;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);

  CandidateSet next;
  next.k = next_k;
  next.poses.reserve(size_t(N));
  for (int n = 0; n < N; ++n) {
    const double u = unit(rng) * acc;
    size_t j = size_t(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
    if (j >= comps.size()) j = comps.size() - 1;
    Eigen::Vector3d dt, euler;
    for (int a = 0; a < 3; ++a) dt[a] = noise.t_std[a] > 0.0 ? noise.t_std[a] * gauss(rng) : 0.0;
    for (int a = 0; a < 3; ++a) euler[a] = noise.r_std[a] > 0.0 ? noise.r_std[a] * gauss(rng) : 0.0;
    next.poses.push_back(perturb_pose(cs.poses[size_t(comps[j])], dt, euler));
  }
  return next;
}

void mixture_components(const CandidateSet& cs, int B, std::vector<int>& comps, Eigen::VectorXd& pi) {
  comps = top_indices(cs.scores, B);
  double total = 0.0;
  for (int i : comps) total += cs.scores[i];
  if (total > 0.0) {
    pi.resize(Eigen::Index(comps.size()));
    for (size_t j = 0; j < comps.size(); ++j) pi[Eigen::Index(j)] = cs.scores[comps[j]] / total;
  } else {
    comps = top_indices(cs.raw, B);
    pi = Eigen::VectorXd::Constant(Eigen::Index(comps.size()), 1.0 / double(comps.size()));
  }
}

}  // namespace detail

namespace {

using detail::mixture_components;
using detail::top_indices;

constexpr uint64_t kInitStream = 0x696e6974;

Eigen::MatrixXf float_pose_features(std::span<const Pose> poses, const FourierConfig& cfg) {
  Eigen::MatrixXf raw(Eigen::Index(poses.size()), 7);
  for (size_t i = 0; i < poses.size(); ++i) {
    const Pose& p = poses[i];
    if (p.frame != Frame::Normalized) {
      throw FrameError("float_pose_features: pose is not Normalized");
    }
    const Eigen::Quaterniond q = canonical_sign(p.q);
    raw(Eigen::Index(i), 0) = float(p.t.x());
    raw(Eigen::Index(i), 1) = float(p.t.y());
    raw(Eigen::Index(i), 2) = float(p.t.z());
    raw(Eigen::Index(i), 3) = float(q.x());
    raw(Eigen::Index(i), 4) = float(q.y());
    raw(Eigen::Index(i), 5) = float(q.z());
    raw(Eigen::Index(i), 6) = float(q.w());
  }
  return fourier_encode_batch<float>(raw, cfg);
}

}  // namespace

void validate_config(const LocalizerConfig& cfg) {
  if (cfg.B < 1 || cfg.N < cfg.B) {
    throw std::invalid_argument("localizer config: need N >= B >= 1");
  }
  if (cfg.K < 0 || cfg.avg_count < 1) {
    throw std::invalid_argument("localizer config: need K >= 0 and avg_count >= 1");
  }
}

InferenceNetsF to_single_precision_nets(const MultiSceneModel& model) {
  InferenceNetsF nets;
  nets.trunk = to_single_precision(model.trunk);
  if (model.score_head) nets.head = to_single_precision(*model.score_head);
  for (const auto& [id, scene] : model.scenes) {
    nets.scenes[id] = SceneNetsF{to_single_precision(scene.pose_encoder.mlp), to_single_precision(scene.projection)};
  }
  return nets;
}

CandidateSet initial_candidates(const SceneModel& scene, const LocalizerConfig& cfg, Rng& rng) {
  validate_config(cfg);
  if (scene.initial_poses.empty()) {
    throw std::invalid_argument("initial_candidates: scene has no reference poses");
  }
  CandidateSet cs;
  cs.k = 0;
  cs.poses.reserve(size_t(cfg.N));
  switch (cfg.init_mode) {
    case InitMode::ReferencePoses: {
      std::uniform_int_distribution<size_t> pick(0, scene.initial_poses.size() - 1);
      for (int n = 0; n < cfg.N; ++n) {
        cs.poses.push_back(scene.initial_poses[pick(rng)]);
      }
      break;
    }
    case InitMode::Grid2D: {
      std::vector<double> alts;
      alts.reserve(scene.initial_poses.size());
      for (const auto& p : scene.initial_poses) alts.push_back(p.t.y());
      const double altitude = median(std::move(alts));
      const int G = int(std::ceil(std::sqrt(double(cfg.N))));
      std::uniform_int_distribution<size_t> pick(0, scene.initial_poses.size() - 1);
      for (int n = 0; n < cfg.N; ++n) {
        const int gx = n % G;
        const int gz = n / G;
        const Eigen::Vector3d t{-0.5 + (gx + 0.5) / double(G), altitude, -0.5 + (gz + 0.5) / double(G)};
        cs.poses.emplace_back(t, scene.initial_poses[pick(rng)].q, Frame::Normalized);
      }
      break;
    }
  }
  return cs;
}

CandidateSet score_candidates(const MultiSceneModel& model, const SceneModel& scene,
                              const Eigen::VectorXd& image_latent, CandidateSet cs,
                              const LocalizerConfig& cfg) {
  const Eigen::MatrixXd latents = encode_poses(scene.pose_encoder, cs.poses);
  const Mlp* head = model.score_head ? &*model.score_head : nullptr;
  if (cfg.score_fn == ScoreFunction::LearnedMlp && !head) {
    throw std::invalid_argument("score_candidates: model has no learned score head");
  }
  ScoreBatch batch = score_latents(cfg.score_fn, head, image_latent, latents);
  cs.scores = std::move(batch.scores);
  cs.raw = std::move(batch.raw);
  return cs;
}

CandidateSet propose_next(const CandidateSet& cs, const LocalizerConfig& cfg, const SceneFrame& frame, Rng& rng) {
  if (!cs.scored()) {
    throw std::invalid_argument("propose_next: candidate set is not scored");
  }
  std::vector<int> comps;
  Eigen::VectorXd pi;
  mixture_components(cs, cfg.B, comps, pi);
  return detail::sample_gmm(cs, comps, pi, cfg.N, cs.k + 1, detail::noise_at(cfg.v0, cs.k + 1, frame), rng);
}

namespace {

CandidateSet score_set_f32(const InferenceNetsF& nets, const SceneNetsF& scene_nets,
                           const Eigen::VectorXf& image_latent, CandidateSet cs, const FourierConfig& fourier,
                           ScoreFunction fn) {
  const Eigen::MatrixXf latents = mlp_forward(scene_nets.pose, float_pose_features(cs.poses, fourier));
  const MlpF* head = nets.head ? &*nets.head : nullptr;
  if (fn == ScoreFunction::LearnedMlp && !head) {
    throw std::invalid_argument("localize: model has no learned score head");
  }
  const Eigen::VectorXf s = score_latents_single(fn, head, image_latent, latents);
  cs.scores = s.cast<double>();
  cs.raw = cs.scores;  // float path keeps no pre-clamp values; fallback uses scores
  return cs;
}

IterationSummary summarize(const CandidateSet& cs) {
  IterationSummary out;
  out.k = cs.k;
  Eigen::Index best = 0;
  cs.scores.maxCoeff(&best);
  out.best_score = cs.scores[best];
  out.mean_score = cs.scores.mean();
  out.best_candidate = cs.poses[size_t(best)];
  return out;
}

}  // namespace

LocalizeResult localize(const MultiSceneModel& model, const std::string& scene_id,
                        const Eigen::VectorXd& features, const LocalizerConfig& cfg,
                        const LocalizeOptions& opts) {
  validate_config(cfg);
  const SceneModel& scene = scene_at(model, scene_id);
  Rng rng = make_rng(derive_seed(cfg.seed, kInitStream, 0));

  Eigen::VectorXd latent_d;
  Eigen::VectorXf latent_f;
  const SceneNetsF* scene_nets = nullptr;
  if (opts.f32) {
    auto it = opts.f32->scenes.find(scene_id);
    if (it == opts.f32->scenes.end()) {
      throw std::invalid_argument("localize: float nets lack scene " + scene_id);
    }
    scene_nets = &it->second;
    if (features.size() != opts.f32->trunk.layers.front().in_dim()) {
      throw DimensionError("localize: feature dim does not match trunk input");
    }
    Eigen::MatrixXf row(1, features.size());
    row.row(0) = features.cast<float>().transpose();
    latent_f = mlp_forward(scene_nets->projection, mlp_forward(opts.f32->trunk, row)).row(0).transpose();
  } else {
    latent_d = encode_image(model.trunk, scene, features);
  }

  auto score_set = [&](CandidateSet cs) {
    return opts.f32 ? score_set_f32(*opts.f32, *scene_nets, latent_f, std::move(cs),
                                    scene.pose_encoder.fourier, cfg.score_fn)
                    : score_candidates(model, scene, latent_d, std::move(cs), cfg);
  };

  LocalizeResult result;
  size_t live = 0;
  auto track = [&](size_t candidates_alive) {
    live = candidates_alive;
    result.peak_live_candidates = std::max(result.peak_live_candidates, live);
  };

  CandidateSet current = score_set(initial_candidates(scene, cfg, rng));
  size_t retained = 0;
  track(current.poses.size());
  result.per_iteration.push_back(summarize(current));
  if (opts.keep_diagnostics) {
    result.diagnostics.push_back(current);
    retained += current.poses.size();
  }
  for (int k = 0; k < cfg.K; ++k) {
    CandidateSet next = propose_next(current, cfg, scene.frame, rng);
    // Proposal + previous set + top-B components are live at once.
    track(retained + current.poses.size() + next.poses.size() + size_t(cfg.B));
    next = score_set(std::move(next));
    current = std::move(next);
    result.per_iteration.push_back(summarize(current));
    if (opts.keep_diagnostics) {
      result.diagnostics.push_back(current);
      retained += current.poses.size();
    }
  }

  // Step 7: score-weighted average of the top avg_count candidates of the
  // final scored set (all of them when N < avg_count).
  const auto top = top_indices(current.scores, std::min(cfg.avg_count, cfg.N));
  std::vector<Pose> top_poses;
  std::vector<double> weights;
  top_poses.reserve(top.size());
  weights.reserve(top.size());
  double total = 0.0;
  for (int i : top) total += current.scores[i];
  if (total > 0.0) {
    for (int i : top) {
      top_poses.push_back(current.poses[size_t(i)]);
      weights.push_back(current.scores[i]);
    }
  } else {
    for (int i : top_indices(current.raw, std::min(cfg.avg_count, cfg.N))) {
      top_poses.push_back(current.poses[size_t(i)]);
      weights.push_back(1.0);
    }
  }
  const Pose averaged = average_poses(top_poses, weights);
  result.pose = denormalize_pose(averaged, scene.frame);
  return result;
}

FlopsEstimate flops_estimate(const MultiSceneModel& model, const std::string& scene_id,
                             const LocalizerConfig& cfg) {
  const SceneModel& scene = scene_at(model, scene_id);
  auto mlp_flops = [](const Mlp& net) {
    double f = 0.0;
    for (const auto& layer : net.layers) f += 2.0 * double(layer.in_dim()) * double(layer.out_dim());
    return f;
  };
  const double d = double(model.latent_dim());
  double score_flops = 0.0;
  std::string score_desc;
  switch (cfg.score_fn) {
    case ScoreFunction::Cosine:
      score_flops = 4.0 * d + 3.0;  // dot 2d + candidate norm 2d + divide/clamp
      score_desc = "4d+3";
      break;
    case ScoreFunction::L2:
      score_flops = 3.0 * d + 2.0;  // diff+square 3d + sqrt/clamp
      score_desc = "3d+2";
      break;
    case ScoreFunction::LearnedMlp: {
      if (!model.score_head) {
        throw std::invalid_argument("flops_estimate: model has no learned score head");
      }
      score_flops = d + mlp_flops(*model.score_head);
      score_desc = "d+head";
      break;
    }
  }
  FlopsEstimate est;
  est.image_head_flops = mlp_flops(model.trunk) + mlp_flops(scene.projection);
  const double per_candidate = mlp_flops(scene.pose_encoder.mlp) + score_flops;
  est.pose_decode_flops = double(cfg.K) * double(cfg.N) * per_candidate;
  est.total = est.image_head_flops + est.pose_decode_flops;
  std::ostringstream f;
  f << "multiply-adds, 2*in*out per dense layer per sample; image_head = trunk+projection = "
    << est.image_head_flops << "; pose_decode = K*N*(pose_mlp + score[" << score_desc << "]) = " << cfg.K
    << "*" << cfg.N << "*" << per_candidate << "; total = image_head + pose_decode";
  est.formula = f.str();
  return est;
}

std::vector<ScoreRow> export_score_map(const MultiSceneModel& model, const std::string& scene_id,
                                       const Eigen::VectorXd& image_latent, std::span<const Pose> probe_poses,
                                       const LocalizerConfig& cfg) {
  const SceneModel& scene = scene_at(model, scene_id);
  std::vector<ScoreRow> rows;
  rows.reserve(probe_poses.size());
  constexpr size_t kChunk = 4096;
  std::vector<Pose> chunk;
  for (size_t start = 0; start < probe_poses.size(); start += kChunk) {
    const size_t end = std::min(probe_poses.size(), start + kChunk);
    chunk.clear();
    for (size_t i = start; i < end; ++i) {
      if (probe_poses[i].frame != Frame::World) {
        throw FrameError("export_score_map: probe poses must be in the World frame");
      }
      chunk.push_back(normalize_pose(probe_poses[i], scene.frame));
    }
    CandidateSet cs;
    cs.poses = chunk;
    cs = score_candidates(model, scene, image_latent, std::move(cs), cfg);
    for (size_t i = start; i < end; ++i) {
      rows.push_back(ScoreRow{0, probe_poses[i], cs.scores[Eigen::Index(i - start)]});
    }
  }
  return rows;
}

void write_score_rows(std::ostream& out, std::span<const ScoreRow> rows) {
  out << "k,tx,ty,tz,qx,qy,qz,qw,score\n";
  char buf[352];
  for (const auto& row : rows) {
    const Pose& p = row.world_pose;
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", row.k, p.t.x(), p.t.y(),
                  p.t.z(), p.q.x(), p.q.y(), p.q.z(), p.q.w(), row.score);
    out << buf;
  }
}

std::vector<ScoreRow> diagnostics_to_rows(const LocalizeResult& result, const SceneFrame& frame) {
  std::vector<ScoreRow> rows;
  for (const auto& cs : result.diagnostics) {
    for (size_t i = 0; i < cs.poses.size(); ++i) {
      rows.push_back(ScoreRow{cs.k, denormalize_pose(cs.poses[i], frame), cs.scores[Eigen::Index(i)]});
    }
  }
  return rows;
}

}  // namespace impose
