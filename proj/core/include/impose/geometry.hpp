#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

namespace impose {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double d) { return d * kPi / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / kPi; }

/// Coordinate frame a pose lives in. World positions are meters; Normalized
/// positions are mapped into [-0.5, 0.5]^3 by a SceneFrame.
enum class Frame { World, Normalized };

/// Rigid 6-DoF camera pose: translation plus unit quaternion (qx, qy, qz, qw).
/// The quaternion is renormalized on construction; a zero quaternion is
/// rejected. q and -q denote the same rotation, so rotation equality is
/// always tested through geodesic_distance, never componentwise.
struct Pose {
  Eigen::Vector3d t{0.0, 0.0, 0.0};
  Eigen::Quaterniond q{1.0, 0.0, 0.0, 0.0};  // ctor order (w,x,y,z); storage (x,y,z,w)
  Frame frame = Frame::World;

  Pose() = default;
  Pose(const Eigen::Vector3d& t_, const Eigen::Quaterniond& q_, Frame frame_);

  static Pose identity(Frame frame_ = Frame::World) { return Pose({0, 0, 0}, {1, 0, 0, 0}, frame_); }
};

/// Affine map from world positions to [-0.5, 0.5]^3: p_norm = (p - center) / scale.
/// Rotations are left untouched.
struct SceneFrame {
  Eigen::Vector3d center{0.0, 0.0, 0.0};
  double scale = 1.0;  // meters, largest axis extent of the train split; > 0

  SceneFrame() = default;
  SceneFrame(const Eigen::Vector3d& center_, double scale_);
};

/// Per-axis sampling variance: translation in meters (x, altitude y, z) and
/// rotation as Euler angles in degrees (about x, y, z). All components >= 0.
struct NoiseVector {
  Eigen::Vector3d translation{8.0, 0.2, 8.0};
  Eigen::Vector3d rotation_deg{1.0, 5.0, 1.0};

  NoiseVector() = default;
  NoiseVector(const Eigen::Vector3d& translation_, const Eigen::Vector3d& rotation_deg_);

  /// Variance at refinement iteration k: every component divided by 2^k.
  /// The division is exact in double precision.
  NoiseVector at_iteration(int k) const;
};

/// Minimal angle in radians between the rotations q1 and q2, computed from the
/// relative quaternion r = q1^-1 q2 as 2*atan2(|r_vec|, |r_w|) — well
/// conditioned at both 0 and pi, unlike the arccos-of-trace form.
/// Inputs whose norm deviates from 1 by more than 1e-3 are rejected.
double geodesic_distance(const Eigen::Quaterniond& q1, const Eigen::Quaterniond& q2);

/// Flips the quaternion sign so qw >= 0 (ties: qz >= 0, then qy, then qx).
Eigen::Quaterniond canonical_sign(const Eigen::Quaterniond& q);

/// Score-weighted pose mean: translations averaged arithmetically, rotations
/// through the unit eigenvector of the largest eigenvalue of
/// M = sum_i w_i q_i q_i^T (4x4 symmetric, Jacobi iteration, tol 1e-12).
/// The result quaternion is sign-canonicalized. All poses must share a frame;
/// weights must be nonnegative with at least one strictly positive.
Pose average_poses(std::span<const Pose> poses, std::span<const double> weights);

/// Applies a translation offset plus an extrinsic X-then-Y-then-Z Euler
/// rotation (radians), pre-multiplied onto the pose rotation.
Pose perturb_pose(const Pose& p, const Eigen::Vector3d& dt, const Eigen::Vector3d& euler_rad);

/// World -> Normalized position transform; rotation unchanged, frame retagged.
Pose normalize_pose(const Pose& p, const SceneFrame& f);
/// Normalized -> World inverse of normalize_pose.
Pose denormalize_pose(const Pose& p, const SceneFrame& f);

}  // namespace impose
