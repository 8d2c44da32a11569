#include "impose/pca.hpp"

#include <cmath>

#include "impose/errors.hpp"
#include "impose/rng.hpp"

namespace impose {

namespace {

// Deterministic non-degenerate start direction for the power iteration.
Eigen::VectorXd start_vector(Eigen::Index dim, int component) {
  Rng rng = make_rng(derive_seed(0x706361, uint64_t(component)));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v[i] = gauss(rng);
  return v / v.norm();
}

void fix_sign(Eigen::VectorXd& v) {
  Eigen::Index imax = 0;
  v.cwiseAbs().maxCoeff(&imax);
  if (v[imax] < 0.0) v = -v;
}

}  // namespace

PcaResult pca3(const Eigen::MatrixXd& rows, double tol, int max_iterations) {
  if (rows.rows() < 4) {
    throw DegenerateError("pca3: need at least 4 rows");
  }
  const Eigen::Index n = rows.rows();
  const Eigen::Index dim = rows.cols();

  PcaResult result;
  result.mean = rows.colwise().mean();
  const Eigen::MatrixXd centered = rows.rowwise() - result.mean.transpose();
  Eigen::MatrixXd cov = (centered.transpose() * centered) / double(n - 1);
  const double floor = 1e-12 * std::max(1.0, cov.trace());

  result.components.resize(3, dim);
  for (int c = 0; c < 3; ++c) {
    Eigen::VectorXd v = start_vector(dim, c);
    double lambda = 0.0;
    bool dead = false;
    for (int it = 0; it < max_iterations; ++it) {
      Eigen::VectorXd next = cov * v;
      const double norm = next.norm();
      if (norm < floor) {
        dead = true;
        break;
      }
      next /= norm;
      const double delta = std::min((next - v).norm(), (next + v).norm());
      v = next;
      lambda = norm;
      if (delta < tol) break;
    }
    if (dead) {
      // No variance left: complete the basis with anything orthonormal.
      result.degenerate = true;
      lambda = 0.0;
      for (Eigen::Index axis = 0; axis < dim; ++axis) {
        v.setZero();
        v[axis] = 1.0;
        for (int p = 0; p < c; ++p) {
          v -= result.components.row(p).dot(v) * result.components.row(p).transpose();
        }
        if (v.norm() > 0.5) {
          v /= v.norm();
          break;
        }
      }
    }
    fix_sign(v);
    result.components.row(c) = v.transpose();
    result.variances[c] = lambda;
    cov -= lambda * v * v.transpose();
  }
  result.projected = centered * result.components.transpose();
  return result;
}

}  // namespace impose
