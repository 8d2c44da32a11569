#include <charconv>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "impose/encoders.hpp"
#include "impose/errors.hpp"

// Checkpoint layout (little-endian):
//   "IMPC" | u32 version=1 | u64 metadata length | metadata text |
//   float64 parameter blocks.
// Metadata is key=value lines describing every shape; parameter blocks follow
// in declared order: trunk layers, score head layers (if any), then per scene
// (sorted by id): frame center+scale, initial poses (t xyz, q xyzw), pose
// encoder layers, projection layers. Each layer block is weights row-major
// then bias.

namespace impose {

namespace {

constexpr char kMagic[4] = {'I', 'M', 'P', 'C'};
constexpr uint32_t kVersion = 1;

const char* activation_name(Activation a) {
  switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Identity: return "identity";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "?";
}

Activation activation_from(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw FormatError("checkpoint: unknown activation '" + s + "'");
}

const char* score_fn_name(ScoreFunction fn) {
  switch (fn) {
    case ScoreFunction::Cosine: return "cosine";
    case ScoreFunction::L2: return "l2";
    case ScoreFunction::LearnedMlp: return "learned_mlp";
  }
  return "?";
}

ScoreFunction score_fn_from(const std::string& s) {
  if (s == "cosine") return ScoreFunction::Cosine;
  if (s == "l2") return ScoreFunction::L2;
  if (s == "learned_mlp") return ScoreFunction::LearnedMlp;
  throw FormatError("checkpoint: unknown score function '" + s + "'");
}

struct Writer {
  std::vector<std::byte> bytes;

  void raw(const void* p, size_t n) {
    const auto* b = static_cast<const std::byte*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  void u32(uint32_t v) { raw(&v, 4); }
  void u64(uint64_t v) { raw(&v, 8); }
  void f64(double v) { raw(&v, 8); }
  void matrix_rowmajor(const Eigen::MatrixXd& m) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        f64(m(r, c));
      }
    }
  }
  void mlp(const Mlp& net) {
    for (const auto& layer : net.layers) {
      matrix_rowmajor(layer.weights);
      for (Eigen::Index i = 0; i < layer.bias.size(); ++i) f64(layer.bias[i]);
    }
  }
};

struct Reader {
  std::span<const std::byte> bytes;
  size_t pos = 0;

  void raw(void* out, size_t n) {
    if (pos + n > bytes.size()) {
      throw IoError("checkpoint: truncated payload at byte " + std::to_string(pos));
    }
    std::memcpy(out, bytes.data() + pos, n);
    pos += n;
  }
  uint32_t u32() { uint32_t v; raw(&v, 4); return v; }
  uint64_t u64() { uint64_t v; raw(&v, 8); return v; }
  double f64() { double v; raw(&v, 8); return v; }
  Eigen::MatrixXd matrix_rowmajor(Eigen::Index rows, Eigen::Index cols) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
      for (Eigen::Index c = 0; c < cols; ++c) {
        m(r, c) = f64();
      }
    }
    return m;
  }
};

void describe_mlp(std::ostringstream& meta, const std::string& prefix, const Mlp& net) {
  meta << prefix << "_dims=" << net.input_dim();
  for (const auto& layer : net.layers) meta << "," << layer.out_dim();
  meta << "\n" << prefix << "_acts=";
  for (size_t i = 0; i < net.layers.size(); ++i) {
    meta << (i ? "," : "") << activation_name(net.layers[i].activation);
  }
  meta << "\n";
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

class Metadata {
 public:
  explicit Metadata(const std::string& text) {
    for (const auto& line : split(text, '\n')) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw FormatError("checkpoint: malformed metadata line '" + line + "'");
      }
      kv_[line.substr(0, eq)] = line.substr(eq + 1);
    }
  }

  const std::string& get(const std::string& key) const {
    auto it = kv_.find(key);
    if (it == kv_.end()) {
      throw FormatError("checkpoint: missing metadata key '" + key + "'");
    }
    return it->second;
  }
  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  uint64_t get_u64(const std::string& key) const {
    const std::string& v = get(key);
    uint64_t out = 0;
    const auto rc = std::from_chars(v.data(), v.data() + v.size(), out);
    if (rc.ec != std::errc() || rc.ptr != v.data() + v.size()) {
      throw FormatError("checkpoint: bad integer for key '" + key + "'");
    }
    return out;
  }

  Mlp read_mlp(const std::string& prefix, Reader& r) const {
    const auto dims = split(get(prefix + "_dims"), ',');
    const auto acts = split(get(prefix + "_acts"), ',');
    if (dims.size() < 2 || acts.size() + 1 != dims.size()) {
      throw DimensionError("checkpoint: inconsistent dims/acts for " + prefix);
    }
    auto parse_dim = [&](const std::string& s) {
      long v = 0;
      const auto rc = std::from_chars(s.data(), s.data() + s.size(), v);
      if (rc.ec != std::errc() || rc.ptr != s.data() + s.size() || v <= 0) {
        throw DimensionError("checkpoint: bad layer dim '" + s + "' for " + prefix);
      }
      return v;
    };
    Mlp net;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      DenseLayer layer;
      const long in = parse_dim(dims[l]);
      const long out = parse_dim(dims[l + 1]);
      layer.weights = r.matrix_rowmajor(out, in);
      layer.bias = Eigen::VectorXd(out);
      for (long i = 0; i < out; ++i) layer.bias[i] = r.f64();
      layer.activation = activation_from(acts[l]);
      net.layers.push_back(std::move(layer));
    }
    return net;
  }

 private:
  std::map<std::string, std::string> kv_;
};

}  // namespace

std::vector<std::byte> checkpoint_save(const MultiSceneModel& model) {
  validate_model(model);
  std::ostringstream meta;
  meta << "format=impose-checkpoint\n";
  meta << "descriptor_dim=" << model.descriptor_dim() << "\n";
  meta << "latent_dim=" << model.latent_dim() << "\n";
  meta << "score_fn=" << score_fn_name(model.score_fn) << "\n";
  meta << "build_seed=" << model.build_seed << "\n";
  describe_mlp(meta, "trunk", model.trunk);
  if (model.score_head) {
    describe_mlp(meta, "score_head", *model.score_head);
  }
  meta << "scenes=";
  bool first = true;
  for (const auto& [id, scene] : model.scenes) {
    if (id.empty() || id.find_first_of("=,\n\r") != std::string::npos) {
      throw FormatError("checkpoint: scene id '" + id + "' contains reserved characters");
    }
    meta << (first ? "" : ",") << id;
    first = false;
  }
  meta << "\n";
  for (const auto& [id, scene] : model.scenes) {
    const std::string p = "scene." + id + ".";
    meta << p << "fourier_frequencies=" << scene.pose_encoder.fourier.num_frequencies << "\n";
    meta << p << "fourier_schedule="
         << (scene.pose_encoder.fourier.schedule == FourierSchedule::Linear ? "linear" : "geometric") << "\n";
    meta << p << "initial_pose_count=" << scene.initial_poses.size() << "\n";
    describe_mlp(meta, p + "pose", scene.pose_encoder.mlp);
    describe_mlp(meta, p + "proj", scene.projection);
  }
  const std::string meta_text = meta.str();

  Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  w.u64(meta_text.size());
  w.raw(meta_text.data(), meta_text.size());
  w.mlp(model.trunk);
  if (model.score_head) w.mlp(*model.score_head);
  for (const auto& [id, scene] : model.scenes) {
    for (int i = 0; i < 3; ++i) w.f64(scene.frame.center[i]);
    w.f64(scene.frame.scale);
    for (const auto& pose : scene.initial_poses) {
      for (int i = 0; i < 3; ++i) w.f64(pose.t[i]);
      for (int i = 0; i < 4; ++i) w.f64(pose.q.coeffs()[i]);  // (qx, qy, qz, qw)
    }
    w.mlp(scene.pose_encoder.mlp);
    w.mlp(scene.projection);
  }
  return std::move(w.bytes);
}

MultiSceneModel checkpoint_load(std::span<const std::byte> bytes) {
  Reader r{bytes};
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("checkpoint: bad magic bytes (not an IMPC file)");
  }
  const uint32_t version = r.u32();
  if (version != kVersion) {
    throw FormatError("checkpoint: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kVersion) + ")");
  }
  const uint64_t meta_len = r.u64();
  if (r.pos + meta_len > bytes.size()) {
    throw IoError("checkpoint: truncated metadata block");
  }
  std::string meta_text(reinterpret_cast<const char*>(bytes.data()) + r.pos, meta_len);
  r.pos += meta_len;
  const Metadata meta(meta_text);
  if (meta.get("format") != "impose-checkpoint") {
    throw FormatError("checkpoint: unexpected format tag '" + meta.get("format") + "'");
  }

  MultiSceneModel model;
  model.score_fn = score_fn_from(meta.get("score_fn"));
  model.build_seed = meta.get_u64("build_seed");
  model.trunk = meta.read_mlp("trunk", r);
  if (meta.has("score_head_dims")) {
    model.score_head = meta.read_mlp("score_head", r);
  }
  for (const auto& id : split(meta.get("scenes"), ',')) {
    if (id.empty()) {
      throw FormatError("checkpoint: empty scene id in metadata");
    }
    SceneModel scene;
    scene.scene_id = id;
    const std::string p = "scene." + id + ".";
    scene.pose_encoder.fourier.num_frequencies = int(meta.get_u64(p + "fourier_frequencies"));
    const std::string& sched = meta.get(p + "fourier_schedule");
    if (sched == "linear") {
      scene.pose_encoder.fourier.schedule = FourierSchedule::Linear;
    } else if (sched == "geometric") {
      scene.pose_encoder.fourier.schedule = FourierSchedule::Geometric;
    } else {
      throw FormatError("checkpoint: unknown fourier schedule '" + sched + "'");
    }
    Eigen::Vector3d center;
    for (int i = 0; i < 3; ++i) center[i] = r.f64();
    const double scale = r.f64();
    if (!(scale > 0.0)) {
      throw DimensionError("checkpoint: scene " + id + " has nonpositive frame scale");
    }
    scene.frame = SceneFrame(center, scale);
    const uint64_t n_poses = meta.get_u64(p + "initial_pose_count");
    scene.initial_poses.reserve(n_poses);
    for (uint64_t i = 0; i < n_poses; ++i) {
      Eigen::Vector3d t;
      for (int j = 0; j < 3; ++j) t[j] = r.f64();
      Eigen::Vector4d qc;
      for (int j = 0; j < 4; ++j) qc[j] = r.f64();
      const Eigen::Quaterniond q(qc[3], qc[0], qc[1], qc[2]);
      Pose pose(t, q, Frame::Normalized);
      pose.q = q;  // keep stored bits; ctor validated unit norm
      scene.initial_poses.push_back(pose);
    }
    scene.pose_encoder.mlp = meta.read_mlp(p + "pose", r);
    scene.projection = meta.read_mlp(p + "proj", r);
    if (!model.scenes.emplace(id, std::move(scene)).second) {
      throw FormatError("checkpoint: duplicate scene id '" + id + "'");
    }
  }
  if (r.pos != bytes.size()) {
    throw FormatError("checkpoint: " + std::to_string(bytes.size() - r.pos) + " trailing bytes");
  }
  validate_model(model);
  return model;
}

void checkpoint_save_file(const MultiSceneModel& model, const std::string& path) {
  const auto bytes = checkpoint_save(model);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("checkpoint: cannot open '" + path + "' for writing");
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) {
    throw IoError("checkpoint: write failed for '" + path + "'");
  }
}

MultiSceneModel checkpoint_load_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("checkpoint: cannot open '" + path + "'");
  }
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return checkpoint_load(
      std::span<const std::byte>(reinterpret_cast<const std::byte*>(data.data()), data.size()));
}

}  // namespace impose
