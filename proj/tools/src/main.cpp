// impose CLI: synthesize scenes, train, localize, evaluate against the
// retrieval baseline, run test-time ablation sweeps, export latent PCA and
// score maps. Configuration is a flat key=value file plus repeatable
// --set key=value overrides; every command embeds its resolved configuration
// and seeds into its output for provenance.
//
// Exit codes: 0 success; 1 bad config/arguments; 2 file IO; 3 malformed file
// content; 4 dimension/frame mismatch; 5 numeric failure; 6 degenerate data.
// CLI11 usage errors exit with CLI11's own nonzero codes.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "impose/data.hpp"
#include "impose/errors.hpp"
#include "impose/localizer.hpp"
#include "impose/pca.hpp"
#include "impose/training.hpp"
#include "impose_tools/eval.hpp"

using namespace impose;

namespace {

constexpr uint64_t kLocalizeStream = 0x6c6f63;  // per-query seed stream for cmd_localize

// ---------------------------------------------------------------------------
// Configuration plumbing
// ---------------------------------------------------------------------------

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> sets;
  uint64_t seed = 0;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& a, bool out_required = true) {
  cmd->add_option("--config", a.config_path, "flat key=value configuration file");
  cmd->add_option("--set", a.sets, "override a config key, e.g. --set k=9 (repeatable)");
  cmd->add_option("--seed", a.seed, "master seed for this command");
  auto* out = cmd->add_option("--out", a.out, "output path");
  if (out_required) out->required();
}

KvConfig load_config(const CommonArgs& a) {
  KvConfig cfg = a.config_path.empty() ? KvConfig() : KvConfig::from_file(a.config_path);
  for (const std::string& kv : a.sets) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

// Reads typed values out of the config while echoing everything consumed into
// the provenance block, so reports list the resolved value of every knob.
struct ConfigReader {
  const KvConfig& cfg;
  KvConfig& prov;

  int64_t get_int(const std::string& key, int64_t fallback) {
    const int64_t v = cfg.get_int(key, fallback);
    prov.set(key, std::to_string(v));
    return v;
  }
  double get_double(const std::string& key, double fallback) {
    const double v = cfg.get_double(key, fallback);
    std::ostringstream os;
    os.precision(17);
    os << v;
    prov.set(key, os.str());
    return v;
  }
  uint64_t get_u64(const std::string& key, uint64_t fallback) {
    const uint64_t v = cfg.get_u64(key, fallback);
    prov.set(key, std::to_string(v));
    return v;
  }
  std::string get_string(const std::string& key, const std::string& fallback) {
    const std::string v = cfg.get_string(key, fallback);
    prov.set(key, v);
    return v;
  }
};

// ---- enum spellings shared by config values and report provenance ----

Trajectory trajectory_from(const std::string& s) {
  if (s == "loop") return Trajectory::Loop;
  if (s == "grid") return Trajectory::Grid;
  if (s == "figure8") return Trajectory::Figure8;
  throw std::invalid_argument("trajectory must be loop|grid|figure8, got '" + s + "'");
}

ScoreFunction score_fn_from(const std::string& s) {
  if (s == "cosine") return ScoreFunction::Cosine;
  if (s == "l2") return ScoreFunction::L2;
  if (s == "learned_mlp") return ScoreFunction::LearnedMlp;
  throw std::invalid_argument("score_fn must be cosine|l2|learned_mlp, got '" + s + "'");
}

const char* score_fn_name(ScoreFunction fn) {
  switch (fn) {
    case ScoreFunction::Cosine: return "cosine";
    case ScoreFunction::L2: return "l2";
    case ScoreFunction::LearnedMlp: return "learned_mlp";
  }
  return "cosine";
}

FourierSchedule schedule_from(const std::string& s) {
  if (s == "linear") return FourierSchedule::Linear;
  if (s == "geometric") return FourierSchedule::Geometric;
  throw std::invalid_argument("fourier_schedule must be linear|geometric, got '" + s + "'");
}

InitMode init_mode_from(const std::string& s) {
  if (s == "reference_poses") return InitMode::ReferencePoses;
  if (s == "grid2d") return InitMode::Grid2D;
  throw std::invalid_argument("init_mode must be reference_poses|grid2d, got '" + s + "'");
}

NoiseVector noise_from(ConfigReader& r, const std::string& prefix, const NoiseVector& fallback) {
  const Eigen::Vector3d t(r.get_double(prefix + "_tx", fallback.translation[0]),
                          r.get_double(prefix + "_ty", fallback.translation[1]),
                          r.get_double(prefix + "_tz", fallback.translation[2]));
  const Eigen::Vector3d rot(r.get_double(prefix + "_rx", fallback.rotation_deg[0]),
                            r.get_double(prefix + "_ry", fallback.rotation_deg[1]),
                            r.get_double(prefix + "_rz", fallback.rotation_deg[2]));
  return NoiseVector(t, rot);
}

LocalizerConfig localizer_from(ConfigReader& r, uint64_t seed) {
  LocalizerConfig lc;
  lc.N = int(r.get_int("n", lc.N));
  lc.K = int(r.get_int("k", lc.K));
  lc.B = int(r.get_int("b", lc.B));
  lc.avg_count = int(r.get_int("avg_count", lc.avg_count));
  lc.v0 = noise_from(r, "v0", lc.v0);
  lc.init_mode = init_mode_from(r.get_string("init_mode", "reference_poses"));
  lc.score_fn = score_fn_from(r.get_string("score_fn", "cosine"));
  lc.seed = seed;
  validate_config(lc);
  return lc;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

void write_comments(std::ostream& out, const KvConfig& prov) {
  for (const auto& [k, v] : prov.items()) out << "# " << k << "=" << v << "\n";
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) {
    throw IoError("cannot open output file '" + path + "'");
  }
  return out;
}

SceneDataset load_scene_checked(const std::string& dir) {
  if (dir.empty()) {
    throw std::invalid_argument("--scene-dir is required");
  }
  return load_scene_dataset(dir);
}

// The model's scene entry matching the dataset, with a readable error when the
// checkpoint was trained on different scenes.
const SceneModel& scene_for(const MultiSceneModel& model, const SceneDataset& ds) {
  if (model.scenes.find(ds.scene_id) == model.scenes.end()) {
    std::string known;
    for (const auto& [id, _] : model.scenes) known += (known.empty() ? "" : ", ") + id;
    throw std::invalid_argument("checkpoint has no scene '" + ds.scene_id + "' (scenes: " + known + ")");
  }
  return scene_at(model, ds.scene_id);
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

int cmd_synth(const CommonArgs& a) {
  const KvConfig cfg = load_config(a);
  KvConfig prov;
  ConfigReader r{cfg, prov};
  SyntheticSceneConfig sc;
  sc.scene_id = r.get_string("scene_id", sc.scene_id);
  sc.trajectory = trajectory_from(r.get_string("trajectory", "loop"));
  sc.extent_m = r.get_double("extent_m", sc.extent_m);
  sc.n_train = int(r.get_int("n_train", sc.n_train));
  sc.n_test = int(r.get_int("n_test", sc.n_test));
  sc.runs = int(r.get_int("runs", sc.runs));
  sc.descriptor_dim = int(r.get_int("descriptor_dim", sc.descriptor_dim));
  sc.sigma_obs = r.get_double("sigma_obs", sc.sigma_obs);
  sc.sigma_run = r.get_double("sigma_run", sc.sigma_run);
  sc.freq_min = r.get_double("freq_min", sc.freq_min);
  sc.freq_max = r.get_double("freq_max", sc.freq_max);
  sc.oracle_seed = a.seed;
  prov.set("command", "synth");
  prov.set("seed", std::to_string(a.seed));

  const SceneDataset ds = generate_synthetic_scene(sc);
  save_scene_dataset(ds, a.out, &prov);
  const DatasetStats stats = dataset_stats(ds);
  std::printf("synth: scene '%s' -> %s (train %d, test %d, median nn spacing %.3f m)\n", ds.scene_id.c_str(),
              a.out.c_str(), stats.n_train, stats.n_test,
              stats.median_nn_spacing_m.value_or(0.0));
  return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const CommonArgs& a, const std::vector<std::string>& scene_dirs) {
  const KvConfig cfg = load_config(a);
  KvConfig prov;
  ConfigReader r{cfg, prov};
  if (scene_dirs.empty()) {
    throw std::invalid_argument("train: at least one --scene-dir is required");
  }
  std::vector<SceneDataset> datasets;
  for (const std::string& dir : scene_dirs) datasets.push_back(load_scene_checked(dir));
  const int dim = datasets.front().descriptor_dim();
  for (const SceneDataset& ds : datasets) {
    if (ds.descriptor_dim() != dim) {
      throw DimensionError("train: scene '" + ds.scene_id + "' has descriptor dim " +
                           std::to_string(ds.descriptor_dim()) + ", expected " + std::to_string(dim));
    }
  }

  ModelConfig mc;
  mc.descriptor_dim = dim;  // always taken from the data
  mc.latent_dim = int(r.get_int("latent_dim", mc.latent_dim));
  mc.trunk_width = int(r.get_int("trunk_width", mc.trunk_width));
  mc.pose_width = int(r.get_int("pose_width", mc.pose_width));
  mc.pose_depth = int(r.get_int("pose_depth", mc.pose_depth));
  mc.fourier.num_frequencies = int(r.get_int("fourier_frequencies", mc.fourier.num_frequencies));
  mc.fourier.schedule = schedule_from(r.get_string("fourier_schedule", "linear"));
  mc.score_fn = score_fn_from(r.get_string("score_fn", "cosine"));
  mc.score_head_width = int(r.get_int("score_head_width", mc.score_head_width));
  const uint64_t model_seed = r.get_u64("model_seed", 1);

  TrainingConfig tc;
  tc.lambda_t = r.get_double("lambda_t", tc.lambda_t);
  tc.lambda_r = r.get_double("lambda_r", tc.lambda_r);
  tc.epochs = int(r.get_int("epochs", tc.epochs));
  tc.lr = r.get_double("lr", tc.lr);
  tc.batch_size = int(r.get_int("batch_size", tc.batch_size));
  tc.init_noise = noise_from(r, "init_noise", tc.init_noise);
  tc.proposer_mix = r.get_double("proposer_mix", tc.proposer_mix);
  tc.seed = a.seed;
  tc.loc = localizer_from(r, a.seed);
  tc.loc.score_fn = mc.score_fn;  // training always scores with the model's function
  tc.checkpoint_every = int(r.get_int("checkpoint_every", tc.checkpoint_every));
  tc.checkpoint_dir = r.get_string("checkpoint_dir", tc.checkpoint_dir);
  tc.eval_subsample = int(r.get_int("eval_subsample", tc.eval_subsample));
  validate_config(tc);
  prov.set("command", "train");
  prov.set("seed", std::to_string(a.seed));
  prov.set("descriptor_dim", std::to_string(dim));
  for (size_t i = 0; i < scene_dirs.size(); ++i) {
    prov.set("scene_dir_" + std::to_string(i), scene_dirs[i]);
  }

  std::vector<std::string> ids;
  std::vector<SceneFrame> frames;
  std::vector<std::vector<Pose>> inits;
  for (const SceneDataset& ds : datasets) {
    ids.push_back(ds.scene_id);
    frames.push_back(ds.frame);
    std::vector<Pose> init;
    for (int i : ds.split_indices(Split::Train)) init.push_back(normalize_pose(ds.samples[size_t(i)].pose, ds.frame));
    inits.push_back(std::move(init));
  }
  MultiSceneModel model = make_model(mc, ids, frames, inits, model_seed);

  Trainer trainer(model, tc);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult result =
      datasets.size() == 1 ? trainer.train(datasets.front()) : trainer.train_multiscene(datasets);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  checkpoint_save_file(model, a.out);
  std::ofstream hist = open_out(a.out + ".history.csv");
  write_comments(hist, prov);
  write_loss_history(hist, result.history);
  std::printf("train: %zu scene(s), %d epochs in %.1f s -> %s (final loss %.6f)\n", datasets.size(), tc.epochs,
              secs, a.out.c_str(), result.history.empty() ? 0.0 : result.history.back().mean_loss);
  return 0;
}

// ---------------------------------------------------------------------------
// localize
// ---------------------------------------------------------------------------

int cmd_localize(const CommonArgs& a, const std::string& checkpoint, const std::string& scene_dir) {
  const KvConfig cfg = load_config(a);
  KvConfig prov;
  ConfigReader r{cfg, prov};
  const MultiSceneModel model = checkpoint_load_file(checkpoint);
  const SceneDataset ds = load_scene_checked(scene_dir);
  scene_for(model, ds);
  LocalizerConfig lc = localizer_from(r, a.seed);
  const std::string query_id = r.get_string("query_id", "");
  const std::string query_split = r.get_string("query_split", "test");
  const int query_limit = int(r.get_int("query_limit", 0));
  prov.set("command", "localize");
  prov.set("seed", std::to_string(a.seed));
  prov.set("checkpoint", checkpoint);
  prov.set("scene_dir", scene_dir);

  std::vector<int> rows;
  if (!query_id.empty()) {
    for (size_t i = 0; i < ds.samples.size(); ++i) {
      if (ds.samples[i].image_id == query_id) rows.push_back(int(i));
    }
    if (rows.empty()) {
      throw std::invalid_argument("localize: image_id '" + query_id + "' not in scene '" + ds.scene_id + "'");
    }
  } else {
    if (query_split != "train" && query_split != "test") {
      throw std::invalid_argument("query_split must be train|test, got '" + query_split + "'");
    }
    rows = ds.split_indices(query_split == "train" ? Split::Train : Split::Test);
    if (query_limit > 0 && rows.size() > size_t(query_limit)) rows.resize(size_t(query_limit));
  }

  std::vector<std::pair<std::string, Pose>> entries;
  for (size_t i = 0; i < rows.size(); ++i) {
    const Sample& s = ds.samples[size_t(rows[i])];
    lc.seed = derive_seed(a.seed, kLocalizeStream, i);
    entries.emplace_back(s.image_id, localize(model, ds.scene_id, s.features, lc).pose);
  }
  save_poses(a.out, entries);
  std::ofstream meta = open_out(a.out + ".meta");
  write_comments(meta, prov);
  std::printf("localize: %zu quer%s -> %s\n", entries.size(), entries.size() == 1 ? "y" : "ies", a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

int cmd_eval(const CommonArgs& a, const std::string& checkpoint, const std::string& scene_dir) {
  const KvConfig cfg = load_config(a);
  KvConfig prov;
  ConfigReader r{cfg, prov};
  const MultiSceneModel model = checkpoint_load_file(checkpoint);
  const SceneDataset ds = load_scene_checked(scene_dir);
  scene_for(model, ds);
  const LocalizerConfig lc = localizer_from(r, a.seed);
  tools::EvalOptions opts;
  opts.retrieval_top_n = int(r.get_int("retrieval_top_n", opts.retrieval_top_n));
  opts.seed = a.seed;
  prov.set("command", "eval");
  prov.set("seed", std::to_string(a.seed));
  prov.set("checkpoint", checkpoint);
  prov.set("scene_dir", scene_dir);

  const tools::EvalReport report = tools::evaluate_scene(model, ds, lc, opts);
  std::ofstream out = open_out(a.out);
  tools::write_eval_report(out, report, prov);
  std::printf("eval: scene '%s', %zu queries -> %s (median %.3f m / %.3f deg", ds.scene_id.c_str(),
              report.rows.size(), a.out.c_str(), report.median_err_m, report.median_err_deg);
  if (report.baseline_median_err_m) {
    std::printf("; retrieval baseline %.3f m / %.3f deg", *report.baseline_median_err_m,
                *report.baseline_median_err_deg);
  }
  std::printf(")\n");
  return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

int cmd_ablate(const CommonArgs& a, const std::string& checkpoint, const std::string& scene_dir) {
  const KvConfig cfg = load_config(a);
  KvConfig prov;
  ConfigReader r{cfg, prov};
  const MultiSceneModel model = checkpoint_load_file(checkpoint);
  const SceneDataset ds = load_scene_checked(scene_dir);
  const SceneModel& scene = scene_for(model, ds);
  const LocalizerConfig base = localizer_from(r, a.seed);
  const int checkpoint_depth = int(scene.pose_encoder.mlp.layers.size());
  const std::vector<std::string> sweep_k = split_list(r.get_string("sweep_k", "2,4,6,9"));
  const std::vector<std::string> sweep_n = split_list(r.get_string("sweep_n", "512,1024,2048,4096"));
  const std::vector<std::string> sweep_avg = split_list(r.get_string("sweep_avg_count", "1,16,256"));
  const std::vector<std::string> sweep_fn = split_list(r.get_string("sweep_score_fn", ""));
  const std::vector<std::string> sweep_depth = split_list(r.get_string("sweep_pose_depth", ""));
  prov.set("command", "ablate");
  prov.set("seed", std::to_string(a.seed));
  prov.set("checkpoint", checkpoint);
  prov.set("scene_dir", scene_dir);
  prov.set("checkpoint_pose_depth", std::to_string(checkpoint_depth));

  std::ofstream out = open_out(a.out);
  write_comments(out, prov);
  out << "param,value,median_err_m,mean_err_m,median_err_deg,mean_err_deg,mean_runtime_ms,note\n";
  // Every evaluated row reuses the base seed so rows differ only by the swept
  // parameter, and a row matching the base config reproduces cmd_eval exactly.
  tools::EvalOptions opts;
  opts.retrieval_top_n = 0;
  opts.seed = a.seed;
  char buf[256];
  const auto emit = [&](const std::string& param, const std::string& value, const LocalizerConfig& lc) {
    const tools::EvalReport rep = tools::evaluate_scene(model, ds, lc, opts);
    std::snprintf(buf, sizeof(buf), "%s,%s,%.9g,%.9g,%.9g,%.9g,%.9g,\n", param.c_str(), value.c_str(),
                  rep.median_err_m, rep.mean_err_m, rep.median_err_deg, rep.mean_err_deg, rep.mean_runtime_ms);
    out << buf;
    std::printf("ablate: %s=%s median %.3f m\n", param.c_str(), value.c_str(), rep.median_err_m);
  };
  for (const std::string& v : sweep_k) {
    LocalizerConfig lc = base;
    lc.K = int(std::stol(v));
    emit("K", v, lc);
  }
  for (const std::string& v : sweep_n) {
    LocalizerConfig lc = base;
    lc.N = int(std::stol(v));
    emit("N", v, lc);
  }
  for (const std::string& v : sweep_avg) {
    LocalizerConfig lc = base;
    lc.avg_count = int(std::stol(v));
    emit("avg_count", v, lc);
  }
  for (const std::string& v : sweep_fn) {
    LocalizerConfig lc = base;
    lc.score_fn = score_fn_from(v);
    if (lc.score_fn == ScoreFunction::LearnedMlp && !model.score_head) {
      out << "score_fn," << v << ",,,,,,requires_score_head\n";
      continue;
    }
    emit("score_fn", v, lc);
  }
  for (const std::string& v : sweep_depth) {
    // The pose-encoder depth is baked into the checkpoint; other depths need a
    // retrain, so those rows are flagged instead of evaluated.
    if (int(std::stol(v)) == checkpoint_depth) {
      emit("pose_depth", v, base);
    } else {
      out << "pose_depth," << v << ",,,,,,requires_retraining\n";
    }
  }
  std::printf("ablate: table -> %s\n", a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// export-latents
// ---------------------------------------------------------------------------

int cmd_export_latents(const CommonArgs& a, const std::string& checkpoint, const std::string& scene_dir) {
  const KvConfig cfg = load_config(a);
  KvConfig prov;
  ConfigReader r{cfg, prov};
  const MultiSceneModel model = checkpoint_load_file(checkpoint);
  const std::string poses_csv = r.get_string("poses_csv", "");
  prov.set("command", "export-latents");
  prov.set("seed", std::to_string(a.seed));
  prov.set("checkpoint", checkpoint);

  std::string scene_id;
  std::vector<Pose> world;  // world-frame poses to encode
  if (!poses_csv.empty()) {
    scene_id = r.get_string("scene", "");
    if (scene_id.empty()) {
      if (model.scenes.size() != 1) {
        throw std::invalid_argument("export-latents: config key 'scene' required for multi-scene checkpoints");
      }
      scene_id = model.scenes.begin()->first;
    }
    for (const auto& [id, pose] : load_poses(poses_csv)) world.push_back(pose);
  } else {
    const SceneDataset ds = load_scene_checked(scene_dir);
    scene_for(model, ds);
    scene_id = ds.scene_id;
    const std::string split = r.get_string("latents_split", "train");
    if (split != "train" && split != "test") {
      throw std::invalid_argument("latents_split must be train|test, got '" + split + "'");
    }
    for (int i : ds.split_indices(split == "train" ? Split::Train : Split::Test)) {
      world.push_back(ds.samples[size_t(i)].pose);
    }
    prov.set("scene_dir", scene_dir);
  }
  prov.set("scene", scene_id);

  const SceneModel& scene = scene_at(model, scene_id);
  std::vector<Pose> normalized;
  for (const Pose& p : world) normalized.push_back(normalize_pose(p, scene.frame));
  const Eigen::MatrixXd latents = encode_poses(scene.pose_encoder, normalized);
  const PcaResult pca = pca3(latents);  // throws DegenerateError below 4 poses
  prov.set("degenerate", pca.degenerate ? "1" : "0");
  prov.set("pc_variances", [&] {
    char b[128];
    std::snprintf(b, sizeof(b), "%.9g,%.9g,%.9g", pca.variances[0], pca.variances[1], pca.variances[2]);
    return std::string(b);
  }());

  std::ofstream out = open_out(a.out);
  write_comments(out, prov);
  out << "tx,ty,tz,pc1,pc2,pc3\n";
  char buf[256];
  for (size_t i = 0; i < world.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", world[i].t[0], world[i].t[1],
                  world[i].t[2], pca.projected(Eigen::Index(i), 0), pca.projected(Eigen::Index(i), 1),
                  pca.projected(Eigen::Index(i), 2));
    out << buf;
  }
  std::printf("export-latents: %zu poses -> %s%s\n", world.size(), a.out.c_str(),
              pca.degenerate ? " (zero-variance latents flagged)" : "");
  return 0;
}

// ---------------------------------------------------------------------------
// export-scoremap
// ---------------------------------------------------------------------------

int cmd_export_scoremap(const CommonArgs& a, const std::string& checkpoint, const std::string& scene_dir,
                        const std::string& query) {
  const KvConfig cfg = load_config(a);
  KvConfig prov;
  ConfigReader r{cfg, prov};
  const MultiSceneModel model = checkpoint_load_file(checkpoint);
  const SceneDataset ds = load_scene_checked(scene_dir);
  const SceneModel& scene = scene_for(model, ds);
  const LocalizerConfig lc = localizer_from(r, a.seed);
  const std::string probes_csv = r.get_string("probes_csv", "");
  const int grid = int(r.get_int("probe_grid", 48));
  prov.set("command", "export-scoremap");
  prov.set("seed", std::to_string(a.seed));
  prov.set("checkpoint", checkpoint);
  prov.set("scene_dir", scene_dir);
  prov.set("query_id", query);

  const Sample* sample = nullptr;
  for (const Sample& s : ds.samples) {
    if (s.image_id == query) sample = &s;
  }
  if (sample == nullptr) {
    throw std::invalid_argument("export-scoremap: image_id '" + query + "' not in scene '" + ds.scene_id + "'");
  }

  std::vector<Pose> probes;
  if (!probes_csv.empty()) {
    for (const auto& [id, pose] : load_poses(probes_csv)) probes.push_back(pose);
  } else {
    // Default probe set: grid x grid positions across the map footprint at
    // the query's altitude, all carrying the query's orientation.
    if (grid < 2) {
      throw std::invalid_argument("probe_grid must be >= 2");
    }
    for (int ix = 0; ix < grid; ++ix) {
      for (int iz = 0; iz < grid; ++iz) {
        Eigen::Vector3d t = scene.frame.center;
        t[0] += scene.frame.scale * (double(ix) / (grid - 1) - 0.5);
        t[1] = sample->pose.t[1];
        t[2] += scene.frame.scale * (double(iz) / (grid - 1) - 0.5);
        probes.emplace_back(t, sample->pose.q, Frame::World);
      }
    }
  }

  const Eigen::VectorXd latent = encode_image(model.trunk, scene, sample->features);
  const std::vector<ScoreRow> rows = export_score_map(model, ds.scene_id, latent, probes, lc);
  std::ofstream out = open_out(a.out);
  write_comments(out, prov);
  write_score_rows(out, rows);
  std::printf("export-scoremap: %zu probes for '%s' -> %s\n", rows.size(), query.c_str(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "impose: implicit pose encoding camera localizer\n"
      "Exit codes: 0 ok, 1 config, 2 io, 3 format, 4 dimensions, 5 numeric, 6 degenerate data."};
  app.require_subcommand(1);

  CommonArgs synth_args, train_args, loc_args, eval_args, abl_args, lat_args, map_args;
  std::vector<std::string> train_scene_dirs;
  std::string loc_ckpt, loc_scene, eval_ckpt, eval_scene, abl_ckpt, abl_scene;
  std::string lat_ckpt, lat_scene, map_ckpt, map_scene, map_query;

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic scene dataset directory");
  add_common(synth, synth_args);

  CLI::App* train = app.add_subcommand("train", "train encoders on one or more scene directories");
  add_common(train, train_args);
  train->add_option("--scene-dir", train_scene_dirs, "scene dataset directory (repeat for multi-scene)")
      ->required();

  CLI::App* loc = app.add_subcommand("localize", "localize queries and write a pose table");
  add_common(loc, loc_args);
  loc->add_option("--checkpoint", loc_ckpt, "trained model checkpoint")->required();
  loc->add_option("--scene-dir", loc_scene, "scene dataset directory")->required();

  CLI::App* ev = app.add_subcommand("eval", "evaluate on the test split against the retrieval baseline");
  add_common(ev, eval_args);
  ev->add_option("--checkpoint", eval_ckpt, "trained model checkpoint")->required();
  ev->add_option("--scene-dir", eval_scene, "scene dataset directory")->required();

  CLI::App* abl = app.add_subcommand("ablate", "test-time parameter sweeps on a frozen checkpoint");
  add_common(abl, abl_args);
  abl->add_option("--checkpoint", abl_ckpt, "trained model checkpoint")->required();
  abl->add_option("--scene-dir", abl_scene, "scene dataset directory")->required();

  CLI::App* lat = app.add_subcommand("export-latents", "project pose-encoder latents onto their top-3 PCA");
  add_common(lat, lat_args);
  lat->add_option("--checkpoint", lat_ckpt, "trained model checkpoint")->required();
  lat->add_option("--scene-dir", lat_scene, "scene dataset directory (or set poses_csv)");

  CLI::App* map = app.add_subcommand("export-scoremap", "score probe poses against one query image");
  add_common(map, map_args);
  map->add_option("--checkpoint", map_ckpt, "trained model checkpoint")->required();
  map->add_option("--scene-dir", map_scene, "scene dataset directory")->required();
  map->add_option("--query", map_query, "image_id of the query")->required();

  try {
    app.parse(argc, argv);
    if (synth->parsed()) return cmd_synth(synth_args);
    if (train->parsed()) return cmd_train(train_args, train_scene_dirs);
    if (loc->parsed()) return cmd_localize(loc_args, loc_ckpt, loc_scene);
    if (ev->parsed()) return cmd_eval(eval_args, eval_ckpt, eval_scene);
    if (abl->parsed()) return cmd_ablate(abl_args, abl_ckpt, abl_scene);
    if (lat->parsed()) return cmd_export_latents(lat_args, lat_ckpt, lat_scene);
    if (map->parsed()) return cmd_export_scoremap(map_args, map_ckpt, map_scene, map_query);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "error (dimensions): %s\n", e.what());
    return 4;
  } catch (const FrameError& e) {
    std::fprintf(stderr, "error (frame): %s\n", e.what());
    return 4;
  } catch (const DegenerateError& e) {
    std::fprintf(stderr, "error (degenerate data): %s\n", e.what());
    return 6;
  } catch (const IoError& e) {
    std::fprintf(stderr, "error (io): %s\n", e.what());
    return 2;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "error (format): %s\n", e.what());
    return 3;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "error (numeric): %s\n", e.what());
    return 5;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error (config): %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
