#include <cmath>
#include <cstdio>

#include "impose/data.hpp"
#include "impose/errors.hpp"
#include "impose/rng.hpp"

namespace impose {

namespace {

constexpr uint64_t kBasisStream = 0x626173;
constexpr uint64_t kBiasStream = 0x626961;
constexpr uint64_t kNoiseStream = 0x6e6f69;

constexpr int kGridLanes = 10;

// Position (meters, y = 0) and unit tangent along the trajectory at arc
// parameter s in [0, 1).
void trajectory_point(Trajectory traj, double extent, double s, Eigen::Vector3d& pos, Eigen::Vector3d& tangent) {
  const double R = 0.5 * extent;
  switch (traj) {
    case Trajectory::Loop: {
      const double th = 2.0 * kPi * s;
      pos = {R * std::sin(th), 0.0, R * std::cos(th)};
      tangent = {std::cos(th), 0.0, -std::sin(th)};
      return;
    }
    case Trajectory::Figure8: {
      // Bernoulli lemniscate, x-diameter = extent; tangent by central difference.
      auto at = [&](double u) {
        const double th = 2.0 * kPi * u;
        const double den = 1.0 + std::sin(th) * std::sin(th);
        return Eigen::Vector3d{R * std::cos(th) / den, 0.0, R * std::sin(th) * std::cos(th) / den};
      };
      pos = at(s);
      const double h = 1e-6;
      tangent = (at(s + h) - at(s - h)).normalized();
      return;
    }
    case Trajectory::Grid: {
      // Boustrophedon sweep: kGridLanes lanes along x, stepped in z.
      const double u = s * kGridLanes;
      int lane = int(std::floor(u));
      if (lane >= kGridLanes) lane = kGridLanes - 1;
      const double along = u - lane;
      const double z = -R + extent * double(lane) / double(kGridLanes - 1);
      const double dir = (lane % 2 == 0) ? 1.0 : -1.0;
      pos = {-dir * R + dir * extent * along, 0.0, z};
      tangent = {dir, 0.0, 0.0};
      return;
    }
  }
  throw std::invalid_argument("trajectory_point: unknown trajectory");
}

Pose pose_at(Trajectory traj, double extent, double s) {
  Eigen::Vector3d pos, tangent;
  trajectory_point(traj, extent, s, pos, tangent);
  const double yaw = std::atan2(tangent.x(), tangent.z());
  const Eigen::Quaterniond q(Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()));
  return Pose(pos, q, Frame::World);
}

// Random sin/cos feature basis over (position / extent, heading). Pair counts
// keep the raw vector at exactly unit norm after scaling by 1/sqrt(J).
struct OracleBasis {
  Eigen::MatrixXd w_pos;   // J x 3
  Eigen::MatrixXd w_head;  // J x 3
};

OracleBasis make_basis(const SyntheticSceneConfig& cfg) {
  if (cfg.descriptor_dim < 2 || cfg.descriptor_dim % 2 != 0) {
    throw DimensionError("synthetic: descriptor_dim must be even and >= 2");
  }
  if (!(cfg.freq_min > 0.0) || !(cfg.freq_max > cfg.freq_min)) {
    throw std::invalid_argument("synthetic: need 0 < freq_min < freq_max");
  }
  const int J = cfg.descriptor_dim / 2;
  OracleBasis basis;
  basis.w_pos.resize(J, 3);
  basis.w_head.resize(J, 3);
  Rng rng = make_rng(derive_seed(cfg.oracle_seed, kBasisStream, 0));
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int j = 0; j < J; ++j) {
    Eigen::Vector3d v{gauss(rng), gauss(rng), gauss(rng)};
    if (v.norm() < 1e-9) v = {1.0, 0.0, 0.0};
    const double omega = cfg.freq_min * std::pow(cfg.freq_max / cfg.freq_min, unit(rng));
    basis.w_pos.row(j) = (omega * v.normalized()).transpose();
    Eigen::Vector3d u{gauss(rng), gauss(rng), gauss(rng)};
    if (u.norm() < 1e-9) u = {0.0, 0.0, 1.0};
    const double eta = 0.5 + 1.5 * unit(rng);
    basis.w_head.row(j) = (eta * u.normalized()).transpose();
  }
  return basis;
}

Eigen::VectorXd descriptor_from_basis(const OracleBasis& basis, const SyntheticSceneConfig& cfg,
                                      const Pose& world_pose) {
  const Eigen::Vector3d p = world_pose.t / cfg.extent_m;
  const Eigen::Vector3d h = world_pose.q * Eigen::Vector3d::UnitZ();
  const Eigen::VectorXd a = basis.w_pos * p + basis.w_head * h;
  const int J = int(a.size());
  Eigen::VectorXd e(2 * J);
  const double scale = 1.0 / std::sqrt(double(J));
  for (int j = 0; j < J; ++j) {
    e[2 * j] = scale * std::sin(a[j]);
    e[2 * j + 1] = scale * std::cos(a[j]);
  }
  return e;
}

Eigen::VectorXd gaussian_vector(Rng& rng, int n, double sigma) {
  Eigen::VectorXd v(n);
  std::normal_distribution<double> gauss(0.0, sigma);
  for (int i = 0; i < n; ++i) v[i] = gauss(rng);
  return v;
}

// Descriptors are rounded through float32 so in-memory generation matches a
// save/load round trip exactly.
Eigen::VectorXd round_f32(const Eigen::VectorXd& v) { return v.cast<float>().cast<double>(); }

}  // namespace

Eigen::VectorXd oracle_descriptor(const SyntheticSceneConfig& cfg, const Pose& world_pose) {
  if (world_pose.frame != Frame::World) {
    throw FrameError("oracle_descriptor: pose must be in the World frame");
  }
  return descriptor_from_basis(make_basis(cfg), cfg, world_pose);
}

SceneDataset generate_synthetic_scene(const SyntheticSceneConfig& cfg) {
  if (!(cfg.extent_m > 0.0)) {
    throw std::invalid_argument("synthetic: extent_m must be positive");
  }
  if (cfg.runs < 1 || cfg.n_train < cfg.runs || cfg.n_test < 0) {
    throw std::invalid_argument("synthetic: need runs >= 1, n_train >= runs, n_test >= 0");
  }
  if (cfg.sigma_obs < 0.0 || cfg.sigma_run < 0.0) {
    throw std::invalid_argument("synthetic: noise stds must be nonnegative");
  }
  const OracleBasis basis = make_basis(cfg);

  SceneDataset ds;
  ds.scene_id = cfg.scene_id;
  char id_buf[32];

  // Run r covers the trajectory with phase offset r/runs of one inter-pose
  // gap, so the runs interleave evenly; the held-out test run (index = runs)
  // sits at a fixed off-grid phase.
  const int base = cfg.n_train / cfg.runs;
  const int extra = cfg.n_train % cfg.runs;
  for (int r = 0; r < cfg.runs; ++r) {
    const int n_run = base + (r < extra ? 1 : 0);
    Rng noise_rng = make_rng(derive_seed(cfg.oracle_seed, kNoiseStream, 1000 + uint64_t(r)));
    Rng bias_rng = make_rng(derive_seed(cfg.oracle_seed, kBiasStream, uint64_t(r)));
    const Eigen::VectorXd bias = gaussian_vector(bias_rng, cfg.descriptor_dim, cfg.sigma_run);
    for (int i = 0; i < n_run; ++i) {
      const double s = (double(i) + double(r) / double(cfg.runs)) / double(n_run);
      Sample sample;
      std::snprintf(id_buf, sizeof(id_buf), "r%d_%05d", r, i);
      sample.image_id = id_buf;
      sample.pose = pose_at(cfg.trajectory, cfg.extent_m, s);
      const Eigen::VectorXd noise = gaussian_vector(noise_rng, cfg.descriptor_dim, cfg.sigma_obs);
      sample.features = round_f32(descriptor_from_basis(basis, cfg, sample.pose) + bias + noise);
      sample.split = Split::Train;
      sample.run = r;
      ds.samples.push_back(std::move(sample));
    }
  }
  {
    Rng noise_rng = make_rng(derive_seed(cfg.oracle_seed, kNoiseStream, 1000 + uint64_t(cfg.runs)));
    Rng bias_rng = make_rng(derive_seed(cfg.oracle_seed, kBiasStream, uint64_t(cfg.runs)));
    const Eigen::VectorXd bias = gaussian_vector(bias_rng, cfg.descriptor_dim, cfg.sigma_run);
    for (int i = 0; i < cfg.n_test; ++i) {
      const double s = (double(i) + 0.37) / double(cfg.n_test);
      Sample sample;
      std::snprintf(id_buf, sizeof(id_buf), "t_%05d", i);
      sample.image_id = id_buf;
      sample.pose = pose_at(cfg.trajectory, cfg.extent_m, s);
      const Eigen::VectorXd noise = gaussian_vector(noise_rng, cfg.descriptor_dim, cfg.sigma_obs);
      sample.features = round_f32(descriptor_from_basis(basis, cfg, sample.pose) + bias + noise);
      sample.split = Split::Test;
      sample.run = cfg.runs;
      ds.samples.push_back(std::move(sample));
    }
  }

  std::vector<Pose> train_poses;
  for (const auto& s : ds.samples) {
    if (s.split == Split::Train) train_poses.push_back(s.pose);
  }
  ds.frame = compute_frame(train_poses);
  return ds;
}

}  // namespace impose
