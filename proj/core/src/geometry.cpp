#include "impose/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "impose/errors.hpp"

namespace impose {

Pose::Pose(const Eigen::Vector3d& t_, const Eigen::Quaterniond& q_, Frame frame_)
    : t(t_), q(q_), frame(frame_) {
  const double n = q.norm();
  if (n < 1e-12) {
    throw std::invalid_argument("Pose: zero quaternion");
  }
  if (!t.allFinite() || !std::isfinite(n)) {
    throw std::invalid_argument("Pose: non-finite component");
  }
  q.coeffs() /= n;
}

SceneFrame::SceneFrame(const Eigen::Vector3d& center_, double scale_) : center(center_), scale(scale_) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw std::invalid_argument("SceneFrame: scale must be positive, got " + std::to_string(scale_));
  }
}

NoiseVector::NoiseVector(const Eigen::Vector3d& translation_, const Eigen::Vector3d& rotation_deg_)
    : translation(translation_), rotation_deg(rotation_deg_) {
  if ((translation.array() < 0.0).any() || (rotation_deg.array() < 0.0).any()) {
    throw std::invalid_argument("NoiseVector: components must be nonnegative");
  }
}

NoiseVector NoiseVector::at_iteration(int k) const {
  if (k < 0) {
    throw std::invalid_argument("NoiseVector::at_iteration: k must be >= 0");
  }
  NoiseVector out = *this;
  for (int i = 0; i < 3; ++i) {
    out.translation[i] = std::ldexp(translation[i], -k);
    out.rotation_deg[i] = std::ldexp(rotation_deg[i], -k);
  }
  return out;
}

namespace {

void require_unit(const Eigen::Quaterniond& q, const char* who) {
  if (std::abs(q.norm() - 1.0) > 1e-3) {
    throw std::invalid_argument(std::string(who) + ": quaternion norm deviates from 1 by more than 1e-3");
  }
}

// Largest-eigenvalue unit eigenvector of a symmetric 4x4 matrix. Cyclic
// Jacobi rotations until every off-diagonal entry is below tol.
Eigen::Vector4d largest_eigenvector_jacobi(Eigen::Matrix4d m, double tol) {
  Eigen::Matrix4d v = Eigen::Matrix4d::Identity();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (int p = 0; p < 4; ++p) {
      for (int r = p + 1; r < 4; ++r) {
        off = std::max(off, std::abs(m(p, r)));
      }
    }
    if (off < tol) break;
    for (int p = 0; p < 4; ++p) {
      for (int r = p + 1; r < 4; ++r) {
        if (std::abs(m(p, r)) < tol) continue;
        const double theta = 0.5 * std::atan2(2.0 * m(p, r), m(r, r) - m(p, p));
        const double c = std::cos(theta);
        const double s = std::sin(theta);
        Eigen::Matrix4d g = Eigen::Matrix4d::Identity();
        g(p, p) = c;
        g(r, r) = c;
        g(p, r) = s;
        g(r, p) = -s;
        m = g.transpose() * m * g;
        v = v * g;
      }
    }
  }
  int best = 0;
  for (int i = 1; i < 4; ++i) {
    if (m(i, i) > m(best, best)) best = i;
  }
  return v.col(best).normalized();
}

}  // namespace

double geodesic_distance(const Eigen::Quaterniond& q1, const Eigen::Quaterniond& q2) {
  require_unit(q1, "geodesic_distance");
  require_unit(q2, "geodesic_distance");
  // Half-angle form of the relative rotation: well conditioned at 0 and pi,
  // unlike acos of the trace which bottoms out near sqrt(ulp).
  const Eigen::Quaterniond r = q1.normalized().conjugate() * q2.normalized();
  const double angle = 2.0 * std::atan2(r.vec().norm(), std::abs(r.w()));
  return std::clamp(angle, 0.0, kPi);
}

Eigen::Quaterniond canonical_sign(const Eigen::Quaterniond& q) {
  const Eigen::Vector4d c = q.coeffs();  // (x, y, z, w)
  bool flip = false;
  if (c[3] != 0.0) {
    flip = c[3] < 0.0;
  } else if (c[2] != 0.0) {
    flip = c[2] < 0.0;
  } else if (c[1] != 0.0) {
    flip = c[1] < 0.0;
  } else {
    flip = c[0] < 0.0;
  }
  Eigen::Quaterniond out = q;
  if (flip) out.coeffs() = -out.coeffs();
  return out;
}

Pose average_poses(std::span<const Pose> poses, std::span<const double> weights) {
  if (poses.empty()) {
    throw std::invalid_argument("average_poses: empty input");
  }
  if (poses.size() != weights.size()) {
    throw DimensionError("average_poses: " + std::to_string(poses.size()) + " poses vs " +
                         std::to_string(weights.size()) + " weights");
  }
  const Frame frame = poses.front().frame;
  double weight_sum = 0.0;
  Eigen::Vector3d t_sum = Eigen::Vector3d::Zero();
  Eigen::Matrix4d moment = Eigen::Matrix4d::Zero();
  for (size_t i = 0; i < poses.size(); ++i) {
    if (poses[i].frame != frame) {
      throw FrameError("average_poses: poses mix frames");
    }
    const double w = weights[i];
    if (w < 0.0 || !std::isfinite(w)) {
      throw std::invalid_argument("average_poses: weight " + std::to_string(i) + " is negative or non-finite");
    }
    if (w == 0.0) continue;
    weight_sum += w;
    t_sum += w * poses[i].t;
    const Eigen::Vector4d c = poses[i].q.coeffs();
    moment.noalias() += w * (c * c.transpose());
  }
  if (weight_sum <= 0.0) {
    throw DegenerateError("average_poses: all weights are zero");
  }
  const Eigen::Vector4d ec = largest_eigenvector_jacobi(moment / weight_sum, 1e-12);
  Eigen::Quaterniond q(ec[3], ec[0], ec[1], ec[2]);
  return Pose(t_sum / weight_sum, canonical_sign(q), frame);
}

Pose perturb_pose(const Pose& p, const Eigen::Vector3d& dt, const Eigen::Vector3d& euler_rad) {
  // Extrinsic X-then-Y-then-Z composes as Rz * Ry * Rx.
  const Eigen::Quaterniond noise =
      Eigen::AngleAxisd(euler_rad[2], Eigen::Vector3d::UnitZ()) *
      Eigen::AngleAxisd(euler_rad[1], Eigen::Vector3d::UnitY()) *
      Eigen::AngleAxisd(euler_rad[0], Eigen::Vector3d::UnitX());
  return Pose(p.t + dt, (noise * p.q).normalized(), p.frame);
}

Pose normalize_pose(const Pose& p, const SceneFrame& f) {
  if (p.frame != Frame::World) {
    throw FrameError("normalize_pose: pose already Normalized");
  }
  return Pose((p.t - f.center) / f.scale, p.q, Frame::Normalized);
}

Pose denormalize_pose(const Pose& p, const SceneFrame& f) {
  if (p.frame != Frame::Normalized) {
    throw FrameError("denormalize_pose: pose already in World frame");
  }
  return Pose(p.t * f.scale + f.center, p.q, Frame::World);
}

}  // namespace impose
