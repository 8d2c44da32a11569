#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "impose/errors.hpp"
#include "impose/pca.hpp"
#include "impose/rng.hpp"

using namespace impose;

namespace {

// Rows drawn from a zero-mean Gaussian stretched along the given orthonormal
// axes; axis i gets standard deviation stds[i], remaining directions are flat.
Eigen::MatrixXd anisotropic_cloud(int n, const Eigen::MatrixXd& axes, const Eigen::Vector3d& stds,
                                  double residual_std, uint64_t seed) {
  const int d = int(axes.cols());
  Rng rng = make_rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd rows(n, d);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x(d);
    for (int j = 0; j < d; ++j) x[j] = residual_std * gauss(rng);
    for (int a = 0; a < 3; ++a) x += (stds[a] * gauss(rng)) * axes.row(a).transpose();
    rows.row(i) = x.transpose();
  }
  return rows;
}

Eigen::MatrixXd orthonormal_axes_5d() {
  Eigen::MatrixXd axes(3, 5);
  axes << 1, 1, 0, 0, 0,
          0, 0, 1, -1, 0,
          1, -1, 0, 0, 2;
  axes.row(0).normalize();
  axes.row(1).normalize();
  axes.row(2).normalize();
  return axes;  // mutually orthogonal by construction
}

}  // namespace

TEST_SUITE("pca") {

TEST_CASE("fewer than four rows is degenerate input") {
  CHECK_THROWS_AS(pca3(Eigen::MatrixXd::Random(3, 6)), DegenerateError);
  CHECK_THROWS_AS(pca3(Eigen::MatrixXd(0, 6)), DegenerateError);
  CHECK_NOTHROW(pca3(Eigen::MatrixXd::Random(4, 6)));
}

TEST_CASE("recovers planted principal axes in order") {
  const Eigen::MatrixXd axes = orthonormal_axes_5d();
  const Eigen::Vector3d stds(8.0, 3.0, 1.0);
  Eigen::MatrixXd rows = anisotropic_cloud(4000, axes, stds, 0.05, 21);
  const Eigen::VectorXd shift = Eigen::VectorXd::LinSpaced(5, -2.0, 2.0);
  rows.rowwise() += shift.transpose();

  const PcaResult r = pca3(rows);
  CHECK_FALSE(r.degenerate);
  REQUIRE(r.mean.size() == 5);
  for (int j = 0; j < 5; ++j) CHECK(std::abs(r.mean[j] - shift[j]) < 0.5);
  REQUIRE(r.components.rows() == 3);
  REQUIRE(r.components.cols() == 5);
  for (int a = 0; a < 3; ++a) {
    // direction match up to sign
    CHECK(std::abs(r.components.row(a).dot(axes.row(a))) > 0.99);
    // variance close to the planted spread (sampling noise dominates the slack)
    CHECK(r.variances[a] == doctest::Approx(stds[a] * stds[a]).epsilon(0.15));
  }
  CHECK(r.variances[0] >= r.variances[1]);
  CHECK(r.variances[1] >= r.variances[2]);
}

TEST_CASE("matches a dense eigensolver on random data") {
  Rng rng = make_rng(33);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Eigen::MatrixXd rows(60, 7);
  for (Eigen::Index i = 0; i < rows.size(); ++i) rows.data()[i] = gauss(rng);
  // correlate columns so the spectrum is well separated
  rows.col(1) += 2.0 * rows.col(0);
  rows.col(2) += rows.col(0) - rows.col(3);

  const Eigen::MatrixXd centered = rows.rowwise() - rows.colwise().mean();
  const Eigen::MatrixXd cov = centered.transpose() * centered / double(rows.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  REQUIRE(eig.info() == Eigen::Success);

  const PcaResult r = pca3(rows);
  CHECK_FALSE(r.degenerate);
  for (int a = 0; a < 3; ++a) {
    const Eigen::VectorXd ref = eig.eigenvectors().col(6 - a);  // eigensolver sorts ascending
    CHECK(r.variances[a] == doctest::Approx(eig.eigenvalues()[6 - a]).epsilon(1e-8));
    CHECK(std::abs(r.components.row(a).dot(ref)) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("component rows are orthonormal and projection is the centered product") {
  const Eigen::MatrixXd rows = anisotropic_cloud(200, orthonormal_axes_5d(), {5.0, 2.0, 0.5}, 0.1, 4);
  const PcaResult r = pca3(rows);
  const Eigen::MatrixXd gram = r.components * r.components.transpose();
  CHECK((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);

  REQUIRE(r.projected.rows() == rows.rows());
  REQUIRE(r.projected.cols() == 3);
  const Eigen::MatrixXd centered = rows.rowwise() - r.mean.transpose();
  CHECK((r.projected - centered * r.components.transpose()).cwiseAbs().maxCoeff() < 1e-9);
  // deterministic sign: the largest-magnitude coefficient of each row is positive
  for (int a = 0; a < 3; ++a) {
    Eigen::Index imax = 0;
    r.components.row(a).cwiseAbs().maxCoeff(&imax);
    CHECK(r.components(a, imax) > 0.0);
  }
}

TEST_CASE("rank-deficient data sets the degenerate flag") {
  SUBCASE("identical rows have no variance at all") {
    const Eigen::MatrixXd rows = Eigen::RowVector4d(1.0, -2.0, 3.0, 0.5).replicate(6, 1);
    const PcaResult r = pca3(rows);
    CHECK(r.degenerate);
    CHECK(r.variances.cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.projected.cwiseAbs().maxCoeff() == 0.0);
    const Eigen::MatrixXd gram = r.components * r.components.transpose();
    CHECK((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);  // still completed
  }
  SUBCASE("a single spread direction leaves two dead components") {
    Eigen::MatrixXd rows(8, 4);
    rows.setZero();
    for (int i = 0; i < 8; ++i) rows(i, 1) = double(i);
    const PcaResult r = pca3(rows);
    CHECK(r.degenerate);
    CHECK(r.variances[0] > 0.0);
    CHECK(r.variances[1] == 0.0);
    CHECK(r.variances[2] == 0.0);
    CHECK(std::abs(r.components(0, 1)) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("same input gives bit-identical results") {
  const Eigen::MatrixXd rows = anisotropic_cloud(300, orthonormal_axes_5d(), {4.0, 2.0, 1.0}, 0.2, 8);
  const PcaResult a = pca3(rows);
  const PcaResult b = pca3(rows);
  CHECK(a.components == b.components);
  CHECK(a.variances == b.variances);
  CHECK(a.projected == b.projected);
  CHECK(a.mean == b.mean);
}

}  // TEST_SUITE
