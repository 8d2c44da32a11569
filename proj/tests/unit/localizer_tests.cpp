#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "impose/errors.hpp"
#include "impose/localizer.hpp"
#include "impose/rng.hpp"

using namespace impose;

namespace {

ModelConfig tiny_config(ScoreFunction fn = ScoreFunction::Cosine) {
  ModelConfig cfg;
  cfg.descriptor_dim = 6;
  cfg.latent_dim = 8;
  cfg.trunk_width = 10;
  cfg.pose_width = 12;
  cfg.pose_depth = 2;
  cfg.fourier.num_frequencies = 2;
  cfg.score_fn = fn;
  return cfg;
}

std::vector<Pose> reference_poses(int n, uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_real_distribution<double> box(-0.4, 0.4);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Pose> out;
  for (int i = 0; i < n; ++i) {
    Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    out.emplace_back(Eigen::Vector3d(box(rng), box(rng), box(rng)), q, Frame::Normalized);
  }
  return out;
}

MultiSceneModel one_scene_model(ScoreFunction fn, int n_refs, uint64_t seed = 7) {
  const std::vector<std::string> ids = {"s"};
  const std::vector<SceneFrame> frames = {SceneFrame({10.0, 0.0, -4.0}, 80.0)};
  const std::vector<std::vector<Pose>> inits = {reference_poses(n_refs, 100 + seed)};
  return make_model(tiny_config(fn), ids, frames, inits, seed);
}

Eigen::VectorXd some_features(int n, uint64_t seed) {
  Rng rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

// Zero-variance sampling turns the GMM proposal into exact component copies.
NoiseVector zero_noise() { return NoiseVector(Eigen::Vector3d::Zero(), Eigen::Vector3d::Zero()); }

CandidateSet scored_set(std::vector<Pose> poses, const Eigen::VectorXd& scores) {
  CandidateSet cs;
  cs.poses = std::move(poses);
  cs.scores = scores;
  cs.raw = scores;
  cs.k = 0;
  return cs;
}

int match_pose(const std::vector<Pose>& refs, const Pose& p) {
  for (size_t i = 0; i < refs.size(); ++i) {
    if (refs[i].t == p.t) return int(i);
  }
  return -1;
}

}  // namespace

TEST_SUITE("localizer") {

TEST_CASE("config validation") {
  LocalizerConfig cfg;
  CHECK_NOTHROW(validate_config(cfg));
  auto broken = cfg;
  broken.B = 0;
  CHECK_THROWS_AS(validate_config(broken), std::invalid_argument);
  broken = cfg;
  broken.N = broken.B - 1;
  CHECK_THROWS_AS(validate_config(broken), std::invalid_argument);
  broken = cfg;
  broken.K = -1;
  CHECK_THROWS_AS(validate_config(broken), std::invalid_argument);
  broken = cfg;
  broken.avg_count = 0;
  CHECK_THROWS_AS(validate_config(broken), std::invalid_argument);
}

TEST_CASE("initial candidates copy reference poses uniformly") {
  MultiSceneModel model = one_scene_model(ScoreFunction::Cosine, 1);
  const SceneModel& scene = scene_at(model, "s");
  LocalizerConfig cfg;
  cfg.N = 8;
  cfg.B = 4;
  Rng rng = make_rng(3);
  CandidateSet cs = initial_candidates(scene, cfg, rng);
  REQUIRE(cs.poses.size() == 8);
  CHECK(cs.k == 0);
  CHECK_FALSE(cs.scored());
  for (const auto& p : cs.poses) {
    CHECK(p.t == scene.initial_poses[0].t);
    CHECK(p.q.coeffs() == scene.initial_poses[0].q.coeffs());
  }

  // same seed, same draw sequence
  Rng r1 = make_rng(5), r2 = make_rng(5);
  MultiSceneModel many = one_scene_model(ScoreFunction::Cosine, 10);
  const SceneModel& ms = scene_at(many, "s");
  LocalizerConfig big;
  big.N = 10000;
  const CandidateSet a = initial_candidates(ms, big, r1);
  const CandidateSet b = initial_candidates(ms, big, r2);
  for (int i = 0; i < big.N; ++i) CHECK(a.poses[size_t(i)].t == b.poses[size_t(i)].t);

  // chi-squared uniformity over the 10 references, dof 9
  // critical value chi2_{0.999}(9) = 27.88
  std::vector<int> counts(10, 0);
  for (const auto& p : a.poses) {
    const int idx = match_pose(ms.initial_poses, p);
    REQUIRE(idx >= 0);
    ++counts[size_t(idx)];
  }
  const double expected = big.N / 10.0;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  CHECK(chi2 < 27.88);

  SceneModel empty = ms;
  empty.initial_poses.clear();
  CHECK_THROWS_AS(initial_candidates(empty, cfg, rng), std::invalid_argument);
}

TEST_CASE("grid init lays a centered lattice at the median altitude") {
  MultiSceneModel model = one_scene_model(ScoreFunction::Cosine, 3);
  SceneModel& scene = scene_at(model, "s");
  scene.initial_poses[0].t.y() = 0.1;
  scene.initial_poses[1].t.y() = 0.5;
  scene.initial_poses[2].t.y() = 0.2;
  LocalizerConfig cfg;
  cfg.init_mode = InitMode::Grid2D;
  cfg.N = 9;
  cfg.B = 4;
  Rng rng = make_rng(8);
  const CandidateSet cs = initial_candidates(scene, cfg, rng);
  REQUIRE(cs.poses.size() == 9);
  for (int n = 0; n < 9; ++n) {
    const Pose& p = cs.poses[size_t(n)];
    const int gx = n % 3, gz = n / 3;
    CHECK(p.t.x() == -0.5 + (gx + 0.5) / 3.0);
    CHECK(p.t.z() == -0.5 + (gz + 0.5) / 3.0);
    CHECK(p.t.y() == 0.2);  // median of {0.1, 0.5, 0.2}
    CHECK(p.frame == Frame::Normalized);
    bool from_ref = false;
    for (const auto& r : scene.initial_poses) from_ref |= (p.q.coeffs() == r.q.coeffs());
    CHECK(from_ref);
  }
}

TEST_CASE("score_candidates matches the latent-space oracle") {
  for (ScoreFunction fn : {ScoreFunction::Cosine, ScoreFunction::L2, ScoreFunction::LearnedMlp}) {
    MultiSceneModel model = one_scene_model(fn, 6);
    const SceneModel& scene = scene_at(model, "s");
    LocalizerConfig cfg;
    cfg.N = 16;
    cfg.B = 8;
    cfg.score_fn = fn;
    Rng rng = make_rng(31);
    CandidateSet cs = initial_candidates(scene, cfg, rng);
    const Eigen::VectorXd latent = encode_image(model.trunk, scene, some_features(6, 77));
    cs = score_candidates(model, scene, latent, std::move(cs), cfg);
    REQUIRE(cs.scored());
    REQUIRE(cs.raw.size() == 16);
    const Eigen::MatrixXd latents = encode_poses(scene.pose_encoder, cs.poses);
    const Mlp* head = model.score_head ? &*model.score_head : nullptr;
    const ScoreBatch oracle = score_latents(fn, head, latent, latents);
    CHECK(cs.scores == oracle.scores);
    CHECK(cs.raw == oracle.raw);
  }
  // learned scoring without a head in the model
  MultiSceneModel cosine = one_scene_model(ScoreFunction::Cosine, 3);
  const SceneModel& scene = scene_at(cosine, "s");
  LocalizerConfig cfg;
  cfg.N = 4;
  cfg.B = 2;
  cfg.score_fn = ScoreFunction::LearnedMlp;
  Rng rng = make_rng(1);
  CandidateSet cs = initial_candidates(scene, cfg, rng);
  CHECK_THROWS_AS(score_candidates(cosine, scene, some_features(8, 1), std::move(cs), cfg),
                  std::invalid_argument);
}

TEST_CASE("propose_next resamples by score with ties broken by index") {
  const SceneFrame frame({0, 0, 0}, 2.0);
  auto poses = reference_poses(4, 9);
  LocalizerConfig cfg;
  cfg.N = 6000;
  cfg.B = 1;
  cfg.v0 = zero_noise();

  // single hot component: every sample copies it exactly
  Eigen::VectorXd hot = Eigen::VectorXd::Zero(4);
  hot[2] = 0.8;
  Rng rng = make_rng(11);
  CandidateSet next = propose_next(scored_set(poses, hot), cfg, frame, rng);
  CHECK(next.k == 1);
  REQUIRE(next.poses.size() == 6000);
  for (const auto& p : next.poses) {
    CHECK(p.t == poses[2].t);  // zero offset adds exactly nothing
    CHECK(geodesic_distance(p.q, poses[2].q) < 1e-12);
  }

  // tied maxima: B=1 keeps the lower index
  Eigen::VectorXd tied(4);
  tied << 0.7, 0.9, 0.9, 0.1;
  next = propose_next(scored_set(poses, tied), cfg, frame, rng);
  for (const auto& p : next.poses) CHECK(p.t == poses[1].t);

  // mixture weights follow the scores
  cfg.B = 3;
  next = propose_next(scored_set(poses, tied), cfg, frame, rng);
  std::vector<int> counts(4, 0);
  for (const auto& p : next.poses) ++counts[size_t(match_pose(poses, p))];
  CHECK(counts[3] == 0);  // outside top-B
  const double total = 0.9 + 0.9 + 0.7;
  CHECK(counts[1] == doctest::Approx(cfg.N * 0.9 / total).epsilon(0.06));
  CHECK(counts[2] == doctest::Approx(cfg.N * 0.9 / total).epsilon(0.06));
  CHECK(counts[0] == doctest::Approx(cfg.N * 0.7 / total).epsilon(0.06));

  // all-zero scores fall back to the raw ranking, uniform weights
  CandidateSet dead = scored_set(poses, Eigen::VectorXd::Zero(4));
  dead.raw << -4.0, -1.0, -2.0, -3.0;
  cfg.B = 2;
  next = propose_next(dead, cfg, frame, rng);
  counts.assign(4, 0);
  for (const auto& p : next.poses) ++counts[size_t(match_pose(poses, p))];
  CHECK(counts[0] == 0);
  CHECK(counts[3] == 0);
  CHECK(counts[1] == doctest::Approx(cfg.N / 2.0).epsilon(0.06));
  CHECK(counts[2] == doctest::Approx(cfg.N / 2.0).epsilon(0.06));

  CandidateSet unscored;
  unscored.poses = poses;
  CHECK_THROWS_AS(propose_next(unscored, cfg, frame, rng), std::invalid_argument);
}

TEST_CASE("proposal noise halves in variance per iteration and scales by frame") {
  const SceneFrame frame({0, 0, 0}, 2.0);
  std::vector<Pose> one = {Pose({0, 0, 0}, {1, 0, 0, 0}, Frame::Normalized)};
  LocalizerConfig cfg;
  cfg.N = 8000;
  cfg.B = 1;
  cfg.v0 = NoiseVector({4.0, 1.0, 0.25}, {9.0, 0.0, 0.0});

  CandidateSet cs = scored_set(one, Eigen::VectorXd::Ones(1));
  SUBCASE("first refinement") {
    Rng rng = make_rng(21);
    const CandidateSet next = propose_next(cs, cfg, frame, rng);
    // k=1: variance v0/2, std sqrt(v0/2); translation further divided by scale
    const Eigen::Vector3d want_t(std::sqrt(2.0) / 2.0, std::sqrt(0.5) / 2.0, std::sqrt(0.125) / 2.0);
    const double want_rx = deg2rad(std::sqrt(4.5));
    Eigen::Vector3d sum = Eigen::Vector3d::Zero(), sum2 = Eigen::Vector3d::Zero();
    double rsum2 = 0.0;
    for (const auto& p : next.poses) {
      sum += p.t;
      sum2 += p.t.cwiseProduct(p.t);
      const double angle = 2.0 * std::atan2(p.q.x(), p.q.w());
      rsum2 += angle * angle;
      CHECK(p.q.y() == 0.0);  // no rotation off the x axis
      CHECK(p.q.z() == 0.0);
    }
    const Eigen::Vector3d std_t = ((sum2 - sum.cwiseProduct(sum) / cfg.N) / (cfg.N - 1)).cwiseSqrt();
    for (int a = 0; a < 3; ++a) {
      CHECK(std_t[a] == doctest::Approx(want_t[a]).epsilon(0.05));
      CHECK(std::abs(sum[a] / cfg.N) < 5.0 * want_t[a] / std::sqrt(double(cfg.N)));
    }
    CHECK(std::sqrt(rsum2 / cfg.N) == doctest::Approx(want_rx).epsilon(0.05));
  }
  SUBCASE("deeper iterations keep halving") {
    cs.k = 3;
    Rng rng = make_rng(22);
    const CandidateSet next = propose_next(cs, cfg, frame, rng);
    CHECK(next.k == 4);
    // k=4: variance v0/16
    const double want_x = std::sqrt(4.0 / 16.0) / 2.0;
    double sum2 = 0.0;
    for (const auto& p : next.poses) sum2 += p.t.x() * p.t.x();
    CHECK(std::sqrt(sum2 / cfg.N) == doctest::Approx(want_x).epsilon(0.05));
  }
}

TEST_CASE("localize with a single candidate returns the denormalized reference") {
  MultiSceneModel model = one_scene_model(ScoreFunction::Cosine, 1);
  const SceneModel& scene = scene_at(model, "s");
  LocalizerConfig cfg;
  cfg.N = 1;
  cfg.K = 0;
  cfg.B = 1;
  cfg.avg_count = 1;
  const LocalizeResult res = localize(model, "s", some_features(6, 55), cfg);
  const Pose expected = denormalize_pose(scene.initial_poses[0], scene.frame);
  CHECK(res.pose.frame == Frame::World);
  CHECK((res.pose.t - expected.t).norm() < 1e-12);
  CHECK(geodesic_distance(res.pose.q, expected.q) < 1e-12);
  REQUIRE(res.per_iteration.size() == 1);
  CHECK(res.per_iteration[0].k == 0);
  CHECK(res.diagnostics.empty());
  CHECK(res.peak_live_candidates == 1);

  CHECK_THROWS_AS(localize(model, "nope", some_features(6, 55), cfg), std::invalid_argument);
  CHECK_THROWS_AS(localize(model, "s", some_features(5, 55), cfg), DimensionError);
}

TEST_CASE("localize is bit-deterministic in its seed") {
  MultiSceneModel model = one_scene_model(ScoreFunction::Cosine, 8);
  LocalizerConfig cfg;
  cfg.N = 64;
  cfg.K = 3;
  cfg.B = 16;
  cfg.avg_count = 8;
  cfg.seed = 12345;
  const Eigen::VectorXd feats = some_features(6, 50);
  const LocalizeResult r1 = localize(model, "s", feats, cfg);
  const LocalizeResult r2 = localize(model, "s", feats, cfg);
  CHECK(r1.pose.t == r2.pose.t);
  CHECK(r1.pose.q.coeffs() == r2.pose.q.coeffs());
  REQUIRE(r1.per_iteration.size() == size_t(cfg.K) + 1);
  for (size_t i = 0; i < r1.per_iteration.size(); ++i) {
    CHECK(r1.per_iteration[i].best_score == r2.per_iteration[i].best_score);
    CHECK(r1.per_iteration[i].mean_score == r2.per_iteration[i].mean_score);
    CHECK(r1.per_iteration[i].k == int(i));
  }
  auto other = cfg;
  other.seed = 54321;
  const LocalizeResult r3 = localize(model, "s", feats, other);
  CHECK(r1.pose.t != r3.pose.t);

  // avg_count beyond N clamps instead of failing
  auto clamped = cfg;
  clamped.avg_count = 10000;
  CHECK_NOTHROW(localize(model, "s", feats, clamped));
}

TEST_CASE("peak candidate memory is independent of K") {
  MultiSceneModel model = one_scene_model(ScoreFunction::Cosine, 8);
  const Eigen::VectorXd feats = some_features(6, 51);
  LocalizerConfig cfg;
  cfg.N = 64;
  cfg.B = 16;
  cfg.avg_count = 8;
  cfg.K = 2;
  const size_t peak2 = localize(model, "s", feats, cfg).peak_live_candidates;
  cfg.K = 6;
  const size_t peak6 = localize(model, "s", feats, cfg).peak_live_candidates;
  CHECK(peak2 == peak6);
  CHECK(peak6 <= size_t(2 * cfg.N + cfg.B));

  // diagnostics retention is the opt-in exception
  LocalizeOptions opts;
  opts.keep_diagnostics = true;
  const LocalizeResult res = localize(model, "s", feats, cfg, opts);
  REQUIRE(res.diagnostics.size() == size_t(cfg.K) + 1);
  for (int k = 0; k <= cfg.K; ++k) {
    CHECK(res.diagnostics[size_t(k)].k == k);
    CHECK(res.diagnostics[size_t(k)].poses.size() == size_t(cfg.N));
    CHECK(res.diagnostics[size_t(k)].scored());
  }
  CHECK(res.peak_live_candidates > peak6);

  const SceneFrame frame = scene_at(model, "s").frame;
  const auto rows = diagnostics_to_rows(res, frame);
  REQUIRE(rows.size() == size_t((cfg.K + 1) * cfg.N));
  CHECK(rows.front().k == 0);
  CHECK(rows.back().k == cfg.K);
  const Pose back = denormalize_pose(res.diagnostics.back().poses.back(), frame);
  CHECK(rows.back().world_pose.t == back.t);
  CHECK(rows.back().score == res.diagnostics.back().scores[cfg.N - 1]);
}

TEST_CASE("float inference path is deterministic and self-consistent") {
  MultiSceneModel model = one_scene_model(ScoreFunction::Cosine, 8);
  const InferenceNetsF nets = to_single_precision_nets(model);
  CHECK(nets.scenes.count("s") == 1);
  CHECK_FALSE(nets.head.has_value());
  LocalizerConfig cfg;
  cfg.N = 64;
  cfg.K = 2;
  cfg.B = 16;
  cfg.avg_count = 8;
  LocalizeOptions opts;
  opts.f32 = &nets;
  const Eigen::VectorXd feats = some_features(6, 52);
  const LocalizeResult r1 = localize(model, "s", feats, cfg, opts);
  const LocalizeResult r2 = localize(model, "s", feats, cfg, opts);
  CHECK(r1.pose.t == r2.pose.t);
  CHECK(r1.pose.t.allFinite());
  CHECK(r1.pose.frame == Frame::World);

  InferenceNetsF missing = nets;
  missing.scenes.clear();
  LocalizeOptions bad;
  bad.f32 = &missing;
  CHECK_THROWS_AS(localize(model, "s", feats, cfg, bad), std::invalid_argument);
  CHECK_THROWS_AS(localize(model, "s", some_features(9, 1), cfg, opts), DimensionError);
}

TEST_CASE("flops estimate is exact and linear in K and N") {
  MultiSceneModel model = one_scene_model(ScoreFunction::Cosine, 4);
  LocalizerConfig cfg;
  cfg.N = 1024;
  cfg.K = 6;
  cfg.B = 100;

  // hand formula for the tiny model: trunk 6->10, projection 10->8,
  // pose mlp 35->12->8 (fourier 7*(1+2*2)=35), cosine d=8
  const double image_head = 2.0 * 6 * 10 + 2.0 * 10 * 8;
  const double pose_mlp = 2.0 * 35 * 12 + 2.0 * 12 * 8;
  const double score = 4.0 * 8 + 3.0;
  const FlopsEstimate est = flops_estimate(model, "s", cfg);
  CHECK(est.image_head_flops == image_head);
  CHECK(est.pose_decode_flops == 6.0 * 1024.0 * (pose_mlp + score));
  CHECK(est.total == est.image_head_flops + est.pose_decode_flops);
  CHECK_FALSE(est.formula.empty());

  auto n2 = cfg;
  n2.N = 2048;
  CHECK(flops_estimate(model, "s", n2).pose_decode_flops == 2.0 * est.pose_decode_flops);
  auto k12 = cfg;
  k12.K = 12;
  CHECK(flops_estimate(model, "s", k12).pose_decode_flops == 2.0 * est.pose_decode_flops);
  auto k0 = cfg;
  k0.K = 0;
  CHECK(flops_estimate(model, "s", k0).pose_decode_flops == 0.0);
  CHECK(flops_estimate(model, "s", k0).total == image_head);

  // per-candidate cost orderings across score functions
  LocalizerConfig l2 = cfg;
  l2.score_fn = ScoreFunction::L2;
  CHECK(flops_estimate(model, "s", l2).pose_decode_flops < est.pose_decode_flops);
  CHECK_THROWS_AS(flops_estimate(model, "s", LocalizerConfig{.score_fn = ScoreFunction::LearnedMlp}),
                  std::invalid_argument);
}

TEST_CASE("score map export preserves probe order and frame") {
  MultiSceneModel model = one_scene_model(ScoreFunction::Cosine, 4);
  const SceneModel& scene = scene_at(model, "s");
  const Eigen::VectorXd latent = encode_image(model.trunk, scene, some_features(6, 60));
  LocalizerConfig cfg;

  CHECK(export_score_map(model, "s", latent, {}, cfg).empty());

  std::vector<Pose> probes;
  Rng rng = make_rng(61);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int i = 0; i < 7; ++i) {
    Eigen::Quaterniond q(gauss(rng), gauss(rng), gauss(rng), gauss(rng));
    probes.emplace_back(Eigen::Vector3d(10.0 + i, gauss(rng), -4.0 + 2.0 * i), q, Frame::World);
  }
  const auto rows = export_score_map(model, "s", latent, probes, cfg);
  REQUIRE(rows.size() == 7);
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].k == 0);
    CHECK(rows[i].world_pose.t == probes[i].t);
    CHECK(rows[i].score >= 0.0);
    CHECK(rows[i].score <= 1.0);
    // oracle: normalize, encode, score
    std::vector<Pose> one = {normalize_pose(probes[i], scene.frame)};
    const ScoreBatch sb = score_latents(cfg.score_fn, nullptr, latent, encode_poses(scene.pose_encoder, one));
    CHECK(rows[i].score == doctest::Approx(sb.scores[0]).epsilon(1e-12));
  }

  auto bad = probes;
  bad[2] = normalize_pose(bad[2], scene.frame);
  CHECK_THROWS_AS(export_score_map(model, "s", latent, bad, cfg), FrameError);
}

TEST_CASE("score rows serialize with 9 significant digits") {
  std::vector<ScoreRow> rows(2);
  rows[0].k = 0;
  rows[0].world_pose = Pose({1.0 / 3.0, -2.0, 1e6}, Eigen::Quaterniond(1, 0, 0, 0), Frame::World);
  rows[0].score = 0.123456789123;
  rows[1].k = 5;
  rows[1].world_pose = Pose({0, 0, 0}, Eigen::Quaterniond(std::sqrt(0.5), 0, std::sqrt(0.5), 0), Frame::World);
  rows[1].score = 1.0;

  std::ostringstream out;
  write_score_rows(out, rows);
  std::istringstream in(out.str());
  std::string line;
  REQUIRE(std::getline(in, line));
  CHECK(line == "k,tx,ty,tz,qx,qy,qz,qw,score");
  REQUIRE(std::getline(in, line));
  {
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    int k;
    double t[3], q[4], s;
    fields >> k >> t[0] >> t[1] >> t[2] >> q[0] >> q[1] >> q[2] >> q[3] >> s;
    CHECK(k == 0);
    CHECK(t[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-8));
    CHECK(t[2] == 1e6);
    CHECK(q[3] == 1.0);
    CHECK(s == doctest::Approx(0.123456789123).epsilon(1e-8));
  }
  REQUIRE(std::getline(in, line));
  CHECK(line.substr(0, 2) == "5,");
  CHECK_FALSE(std::getline(in, line));
}

}  // TEST_SUITE
