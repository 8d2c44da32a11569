#include "impose/data.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "impose/errors.hpp"
#include "impose/stats.hpp"

namespace impose {

namespace {

constexpr char kPoseHeader[] = "image_id,tx,ty,tz,qx,qy,qz,qw";
constexpr char kDescMagic[4] = {'I', 'M', 'P', 'D'};
constexpr uint32_t kDescVersion = 1;

// Shortest decimal form that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& field, const std::string& where) {
  double out = 0.0;
  const auto res = std::from_chars(field.data(), field.data() + field.size(), out);
  if (res.ec != std::errc() || res.ptr != field.data() + field.size()) {
    throw FormatError(where + ": '" + field + "' is not a number");
  }
  if (!std::isfinite(out)) {
    throw FormatError(where + ": non-finite value '" + field + "'");
  }
  return out;
}

std::vector<std::string> split_line(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

std::vector<int> SceneDataset::split_indices(Split s) const {
  std::vector<int> out;
  for (size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].split == s) out.push_back(int(i));
  }
  return out;
}

std::vector<std::pair<std::string, Pose>> load_poses(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("poses: cannot open '" + path + "'");
  }
  std::string line;
  if (!std::getline(in, line)) {
    throw FormatError("poses: '" + path + "' is empty");
  }
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kPoseHeader) {
    throw FormatError("poses: '" + path + "' header is '" + line + "', expected '" + kPoseHeader + "'");
  }
  std::vector<std::pair<std::string, Pose>> out;
  std::set<std::string> seen;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto fields = split_line(line, ',');
    const std::string where = "poses: " + path + " row " + std::to_string(row);
    if (fields.size() != 8) {
      throw FormatError(where + ": expected 8 columns, got " + std::to_string(fields.size()));
    }
    const std::string& id = fields[0];
    if (id.empty()) {
      throw FormatError(where + ": empty image_id");
    }
    if (!seen.insert(id).second) {
      throw FormatError(where + ": duplicate image_id '" + id + "'");
    }
    double v[7];
    for (int i = 0; i < 7; ++i) v[i] = parse_double(fields[i + 1], where);
    const Eigen::Vector3d t(v[0], v[1], v[2]);
    const Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);  // file order (qx,qy,qz,qw)
    const double norm = q.norm();
    if (std::abs(norm - 1.0) > 1e-3) {
      throw FormatError(where + ": quaternion norm " + std::to_string(norm) +
                        " outside the 1e-3 renormalization band");
    }
    Pose pose(t, q, Frame::World);
    if (std::abs(norm - 1.0) <= 1e-12) {
      pose.q = q;  // already unit: keep the stored bits for exact round trips
    }
    out.emplace_back(id, pose);
  }
  return out;
}

void save_poses(const std::string& path, std::span<const std::pair<std::string, Pose>> entries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw IoError("poses: cannot open '" + path + "' for writing");
  }
  out << kPoseHeader << "\n";
  for (const auto& [id, pose] : entries) {
    if (id.find_first_of(",\n\r") != std::string::npos || id.empty()) {
      throw FormatError("poses: image_id '" + id + "' is empty or contains reserved characters");
    }
    out << id << ',' << format_double(pose.t.x()) << ',' << format_double(pose.t.y()) << ','
        << format_double(pose.t.z()) << ',' << format_double(pose.q.x()) << ',' << format_double(pose.q.y())
        << ',' << format_double(pose.q.z()) << ',' << format_double(pose.q.w()) << "\n";
  }
  if (!out) {
    throw IoError("poses: write failed for '" + path + "'");
  }
}

DescriptorSet load_descriptors(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("descriptors: cannot open '" + path + "'");
  }
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::memcmp(magic, kDescMagic, 4) != 0) {
    throw FormatError("descriptors: '" + path + "' has bad magic bytes (not an IMPD file)");
  }
  uint32_t version = 0, count = 0, dim = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  in.read(reinterpret_cast<char*>(&count), 4);
  in.read(reinterpret_cast<char*>(&dim), 4);
  if (!in) {
    throw IoError("descriptors: '" + path + "' truncated header");
  }
  if (version != kDescVersion) {
    throw FormatError("descriptors: '" + path + "' version " + std::to_string(version) + ", expected " +
                      std::to_string(kDescVersion));
  }
  DescriptorSet set;
  set.values.resize(count, dim);
  std::vector<float> row(dim);
  for (uint32_t r = 0; r < count; ++r) {
    in.read(reinterpret_cast<char*>(row.data()), std::streamsize(dim) * 4);
    if (in.gcount() != std::streamsize(dim) * 4) {
      throw IoError("descriptors: '" + path + "' truncated at row " + std::to_string(r));
    }
    for (uint32_t c = 0; c < dim; ++c) set.values(r, c) = row[c];
  }
  char extra;
  if (in.read(&extra, 1)) {
    throw FormatError("descriptors: '" + path + "' has trailing bytes");
  }

  const std::string idx_path = path + ".idx";
  std::ifstream idx(idx_path);
  if (!idx) {
    throw IoError("descriptors: missing sidecar '" + idx_path + "'");
  }
  std::string line;
  if (!std::getline(idx, line) || (line != "image_id,row" && line != "image_id,row\r")) {
    throw FormatError("descriptors: '" + idx_path + "' missing 'image_id,row' header");
  }
  std::set<std::string> seen;
  while (std::getline(idx, line)) {
    if (line.empty()) continue;
    const auto fields = split_line(line, ',');
    if (fields.size() != 2 || fields[0].empty()) {
      throw FormatError("descriptors: '" + idx_path + "' malformed line '" + line + "'");
    }
    unsigned long rownum = 0;
    const auto rc = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), rownum);
    if (rc.ec != std::errc() || rc.ptr != fields[1].data() + fields[1].size() || rownum != set.ids.size()) {
      throw FormatError("descriptors: '" + idx_path + "' rows must be 0..count-1 in order, got '" + line + "'");
    }
    if (!seen.insert(fields[0]).second) {
      throw FormatError("descriptors: '" + idx_path + "' duplicate image_id '" + fields[0] + "'");
    }
    set.ids.push_back(fields[0]);
  }
  if (set.ids.size() != count) {
    throw FormatError("descriptors: '" + idx_path + "' lists " + std::to_string(set.ids.size()) +
                      " rows but the binary holds " + std::to_string(count));
  }
  return set;
}

void save_descriptors(const std::string& path, const DescriptorSet& set) {
  if (set.ids.size() != size_t(set.values.rows())) {
    throw DimensionError("descriptors: id count does not match matrix rows");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw IoError("descriptors: cannot open '" + path + "' for writing");
  }
  out.write(kDescMagic, 4);
  const uint32_t version = kDescVersion;
  const uint32_t count = uint32_t(set.values.rows());
  const uint32_t dim = uint32_t(set.values.cols());
  out.write(reinterpret_cast<const char*>(&version), 4);
  out.write(reinterpret_cast<const char*>(&count), 4);
  out.write(reinterpret_cast<const char*>(&dim), 4);
  std::vector<float> row(dim);
  for (uint32_t r = 0; r < count; ++r) {
    for (uint32_t c = 0; c < dim; ++c) row[c] = set.values(r, c);
    out.write(reinterpret_cast<const char*>(row.data()), std::streamsize(dim) * 4);
  }
  if (!out) {
    throw IoError("descriptors: write failed for '" + path + "'");
  }
  std::ofstream idx(path + ".idx", std::ios::trunc);
  if (!idx) {
    throw IoError("descriptors: cannot open '" + path + ".idx' for writing");
  }
  idx << "image_id,row\n";
  for (size_t i = 0; i < set.ids.size(); ++i) {
    if (set.ids[i].empty() || set.ids[i].find_first_of(",\n\r") != std::string::npos) {
      throw FormatError("descriptors: image_id '" + set.ids[i] + "' is empty or contains reserved characters");
    }
    idx << set.ids[i] << ',' << i << "\n";
  }
  if (!idx) {
    throw IoError("descriptors: write failed for '" + path + ".idx'");
  }
}

SceneFrame compute_frame(std::span<const Pose> train_poses) {
  if (train_poses.empty()) {
    throw std::invalid_argument("compute_frame: no train poses");
  }
  Eigen::Vector3d lo = train_poses[0].t;
  Eigen::Vector3d hi = train_poses[0].t;
  for (const auto& p : train_poses) {
    if (p.frame != Frame::World) {
      throw FrameError("compute_frame: expected World-frame poses");
    }
    lo = lo.cwiseMin(p.t);
    hi = hi.cwiseMax(p.t);
  }
  const double extent = (hi - lo).maxCoeff();
  return SceneFrame(0.5 * (lo + hi), extent > 0.0 ? extent : 1.0);
}

namespace {

void append_split(SceneDataset& ds, const std::string& dir, const char* stem, Split split) {
  namespace fs = std::filesystem;
  const std::string pose_path = (fs::path(dir) / (std::string(stem) + "_poses.csv")).string();
  const std::string desc_path = (fs::path(dir) / (std::string(stem) + "_descriptors.bin")).string();
  const auto poses = load_poses(pose_path);
  const auto descs = load_descriptors(desc_path);
  if (poses.size() != descs.ids.size()) {
    throw FormatError("scene: " + pose_path + " and " + desc_path + " disagree on sample count");
  }
  for (size_t i = 0; i < poses.size(); ++i) {
    if (poses[i].first != descs.ids[i]) {
      throw FormatError("scene: row " + std::to_string(i) + " id mismatch: '" + poses[i].first + "' vs '" +
                        descs.ids[i] + "'");
    }
    Sample s;
    s.image_id = poses[i].first;
    s.pose = poses[i].second;
    s.features = descs.values.row(Eigen::Index(i)).cast<double>().transpose();
    s.split = split;
    ds.samples.push_back(std::move(s));
  }
}

}  // namespace

SceneDataset load_scene_dataset(const std::string& dir) {
  namespace fs = std::filesystem;
  const std::string meta_path = (fs::path(dir) / "scene.txt").string();
  const KvConfig meta = KvConfig::from_file(meta_path);
  SceneDataset ds;
  ds.scene_id = meta.get_string("scene_id");
  append_split(ds, dir, "train", Split::Train);
  append_split(ds, dir, "test", Split::Test);

  std::set<std::string> ids;
  for (const auto& s : ds.samples) {
    if (!ids.insert(s.image_id).second) {
      throw FormatError("scene: image_id '" + s.image_id + "' appears in both splits");
    }
  }
  const int want_dim = int(meta.get_int("descriptor_dim", -1));
  for (const auto& s : ds.samples) {
    if (s.features.size() != ds.samples.front().features.size()) {
      throw DimensionError("scene: descriptor dims differ between samples");
    }
  }
  if (want_dim >= 0 && !ds.samples.empty() && ds.descriptor_dim() != want_dim) {
    throw DimensionError("scene: scene.txt declares descriptor_dim " + std::to_string(want_dim) +
                         " but files hold " + std::to_string(ds.descriptor_dim()));
  }

  std::vector<Pose> train_poses;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Train) train_poses.push_back(s.pose);
  }
  ds.frame = compute_frame(train_poses);
  return ds;
}

void save_scene_dataset(const SceneDataset& ds, const std::string& dir, const KvConfig* provenance) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    throw IoError("scene: cannot create directory '" + dir + "': " + ec.message());
  }
  KvConfig meta;
  if (provenance) meta = *provenance;
  meta.set("scene_id", ds.scene_id);
  meta.set("descriptor_dim", std::to_string(ds.descriptor_dim()));
  {
    std::ofstream out((fs::path(dir) / "scene.txt").string(), std::ios::trunc);
    if (!out) {
      throw IoError("scene: cannot write scene.txt in '" + dir + "'");
    }
    out << meta.to_text();
  }
  for (const Split split : {Split::Train, Split::Test}) {
    const char* stem = split == Split::Train ? "train" : "test";
    std::vector<std::pair<std::string, Pose>> poses;
    DescriptorSet descs;
    std::vector<Eigen::Index> rows;
    for (const auto& s : ds.samples) {
      if (s.split != split) continue;
      poses.emplace_back(s.image_id, s.pose);
      descs.ids.push_back(s.image_id);
    }
    descs.values.resize(Eigen::Index(descs.ids.size()), ds.descriptor_dim());
    Eigen::Index r = 0;
    for (const auto& s : ds.samples) {
      if (s.split != split) continue;
      descs.values.row(r++) = s.features.cast<float>().transpose();
    }
    save_poses((fs::path(dir) / (std::string(stem) + "_poses.csv")).string(), poses);
    save_descriptors((fs::path(dir) / (std::string(stem) + "_descriptors.bin")).string(), descs);
  }
}

DatasetStats dataset_stats(const SceneDataset& ds) {
  DatasetStats stats;
  std::vector<Eigen::Vector3d> train;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Train) {
      train.push_back(s.pose.t);
      ++stats.n_train;
    } else {
      ++stats.n_test;
    }
  }
  if (train.empty()) {
    throw std::invalid_argument("dataset_stats: empty train split");
  }
  double diameter = 0.0;
  std::vector<double> nn(train.size(), std::numeric_limits<double>::infinity());
  for (size_t i = 0; i < train.size(); ++i) {
    for (size_t j = i + 1; j < train.size(); ++j) {
      const double d = (train[i] - train[j]).norm();
      diameter = std::max(diameter, d);
      nn[i] = std::min(nn[i], d);
      nn[j] = std::min(nn[j], d);
    }
  }
  stats.map_diameter_m = diameter;
  if (train.size() >= 2) {
    stats.median_nn_spacing_m = median(nn);
  }
  return stats;
}

const char* trajectory_name(Trajectory t) {
  switch (t) {
    case Trajectory::Loop: return "loop";
    case Trajectory::Grid: return "grid";
    case Trajectory::Figure8: return "figure8";
  }
  return "?";
}

Trajectory trajectory_from(const std::string& name) {
  if (name == "loop") return Trajectory::Loop;
  if (name == "grid") return Trajectory::Grid;
  if (name == "figure8") return Trajectory::Figure8;
  throw FormatError("unknown trajectory '" + name + "' (expected loop, grid, or figure8)");
}

}  // namespace impose
