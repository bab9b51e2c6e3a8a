#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <random>

#include "osp3d/error.hpp"
#include "osp3d/scene.hpp"
#include "test_util.hpp"

using namespace osp3d;

namespace {

Eigen::Vector4d quat_mul(const Eigen::Vector4d& a, const Eigen::Vector4d& b) {
  return {a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
          a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
          a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
          a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]};
}

Eigen::Vector4d random_quat(std::mt19937_64& rng) {
  std::normal_distribution<double> n;
  return {n(rng), n(rng), n(rng), n(rng)};
}

}  // namespace

TEST_CASE("build_covariance closed-form cases") {
  const Eigen::Vector4d identity(1, 0, 0, 0);
  CHECK((build_covariance(identity, Eigen::Vector3d::Zero()) - Eigen::Matrix3d::Identity())
            .cwiseAbs()
            .maxCoeff() < 1e-12);

  const Eigen::Vector3d stretch(std::log(2.0), 0, 0);
  const Eigen::Matrix3d expect_x = Eigen::Vector3d(4, 1, 1).asDiagonal();
  CHECK((build_covariance(identity, stretch) - expect_x).cwiseAbs().maxCoeff() < 1e-12);

  // R_z(90) diag(4,1,1) R_z(90)^T, written out by hand.
  const double h = std::sqrt(0.5);
  Eigen::Matrix3d rz;
  rz << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  const Eigen::Matrix3d expect_rot = rz * expect_x * rz.transpose();
  CHECK((expect_rot - Eigen::Matrix3d(Eigen::Vector3d(1, 4, 1).asDiagonal())).cwiseAbs().maxCoeff() <
        1e-15);
  CHECK((build_covariance({h, 0, 0, h}, stretch) - expect_rot).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("build_covariance rejects a zero quaternion") {
  try {
    build_covariance(Eigen::Vector4d::Zero(), Eigen::Vector3d::Zero());
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidParameter);
  }
}

TEST_CASE("build_covariance is symmetric, rotation-equivariant, with squared-scale spectrum") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.0, 0.7);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Vector4d q = random_quat(rng), r = random_quat(rng);
    const Eigen::Vector3d s(n(rng), n(rng), n(rng));
    const Eigen::Matrix3d sigma = build_covariance(r, s);
    CHECK((sigma - sigma.transpose()).cwiseAbs().maxCoeff() < 1e-12);

    const Eigen::Matrix3d rq = quaternion_to_matrix(q);
    CHECK((rq * rq.transpose() - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
    const Eigen::Matrix3d lhs = build_covariance(quat_mul(q, r), s);
    const Eigen::Matrix3d rhs = rq * sigma * rq.transpose();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-9 * std::max(1.0, sigma.norm()));

    Eigen::Vector3d eig = Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(sigma).eigenvalues();
    Eigen::Vector3d expect = (2.0 * s).array().exp();
    std::sort(eig.data(), eig.data() + 3);
    std::sort(expect.data(), expect.data() + 3);
    CHECK((eig - expect).cwiseAbs().maxCoeff() < 1e-9 * expect.maxCoeff());
  }
}

TEST_CASE("SH basis constants are orthonormal under spherical quadrature") {
  // Gauss-free midpoint quadrature on (theta, phi); accurate to ~1e-6 for
  // polynomials of this degree at this resolution.
  const int nt = 400, np = 800;
  double gram[16][16] = {};
  for (int it = 0; it < nt; ++it) {
    const double theta = (it + 0.5) * std::numbers::pi / nt;
    for (int ip = 0; ip < np; ++ip) {
      const double phi = (ip + 0.5) * 2.0 * std::numbers::pi / np;
      const Eigen::Vector3d dir(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi),
                                std::cos(theta));
      double y[16];
      sh_basis(3, dir, y);
      const double w = std::sin(theta) * (std::numbers::pi / nt) * (2.0 * std::numbers::pi / np);
      for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b) gram[a][b] += w * y[a] * y[b];
    }
  }
  for (int a = 0; a < 16; ++a)
    for (int b = 0; b < 16; ++b) CHECK(gram[a][b] == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-4));
  CHECK(1.0 / (2.0 * std::sqrt(std::numbers::pi)) == doctest::Approx(0.28209479).epsilon(1e-8));
}

TEST_CASE("sh_eval examples") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  SUBCASE("degree-0 color is direction independent") {
    const double coeffs[3] = {0.7, -0.2, 1.3};
    for (int t = 0; t < 10; ++t) {
      const Eigen::Vector3d dir(n(rng), n(rng), n(rng));
      const Eigen::Vector3d c = sh_eval(0, coeffs, dir);
      for (int ch = 0; ch < 3; ++ch)
        CHECK(c[ch] == doctest::Approx(std::max(0.0, 0.28209479177387814 * coeffs[ch] + 0.5)));
    }
  }
  SUBCASE("zero coefficients give mid gray") {
    const double coeffs[12] = {};
    const Eigen::Vector3d c = sh_eval(1, coeffs, {0.3, -0.2, 0.9});
    CHECK(c.isApprox(Eigen::Vector3d(0.5, 0.5, 0.5)));
  }
  SUBCASE("degree-1 terms are odd in the direction") {
    double coeffs[12] = {};
    for (int ch = 0; ch < 3; ++ch)
      for (int b = 1; b < 4; ++b) coeffs[ch * 4 + b] = 0.3 * n(rng);
    const Eigen::Vector3d dir(0.2, -0.5, 0.7);
    const Eigen::Vector3d a = sh_eval(1, coeffs, dir), b = sh_eval(1, coeffs, -dir);
    for (int ch = 0; ch < 3; ++ch) CHECK(a[ch] + b[ch] == doctest::Approx(1.0));
  }
  SUBCASE("linear in coefficients before the clamp") {
    double c1[48], c2[48], sum[48];
    for (int k = 0; k < 48; ++k) {
      c1[k] = 0.05 * n(rng);
      c2[k] = 0.05 * n(rng);
      sum[k] = c1[k] + c2[k];
    }
    const Eigen::Vector3d dir(0.1, 0.4, -0.3);
    const Eigen::Vector3d half(0.5, 0.5, 0.5);
    const Eigen::Vector3d lhs = sh_eval(3, sum, dir) - half;
    const Eigen::Vector3d rhs = (sh_eval(3, c1, dir) - half) + (sh_eval(3, c2, dir) - half);
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("zero direction is rejected") {
    const double coeffs[3] = {};
    CHECK_THROWS_AS(sh_eval(0, coeffs, Eigen::Vector3d::Zero()), Error);
  }
}

TEST_CASE("project_gaussian on the optical axis") {
  const Camera cam = testing::axis_camera(64, 48, 100.0);
  const auto p = project_gaussian({0, 0, 2}, Eigen::Matrix3d::Identity() * 0.01, cam);
  REQUIRE(p.has_value());
  CHECK(p->mean2d.x() == doctest::Approx(cam.cx));
  CHECK(p->mean2d.y() == doctest::Approx(cam.cy));
  CHECK(p->depth == doctest::Approx(2.0));

  const double sigma = 0.05, z = 3.0;
  const auto iso = project_gaussian({0, 0, z}, Eigen::Matrix3d::Identity() * sigma * sigma, cam);
  REQUIRE(iso.has_value());
  const double expect = std::pow(100.0 * sigma / z, 2) + 0.3;
  CHECK(iso->cov2d(0, 0) == doctest::Approx(expect));
  CHECK(iso->cov2d(1, 1) == doctest::Approx(expect));
  CHECK(std::abs(iso->cov2d(0, 1)) < 1e-12);

  CHECK_FALSE(project_gaussian({0, 0, -1}, Eigen::Matrix3d::Identity(), cam).has_value());
}

TEST_CASE("project_gaussian matches numerical Jacobian propagation") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  Camera cam = Camera::look_at({0.3, -0.2, -3.0}, {0, 0, 0}, {0, -1, 0}, 120, 110, 80, 60);
  cam.cx = 41.3;
  cam.cy = 28.7;
  auto project = [&](const Eigen::Vector3d& x) {
    const Eigen::Vector3d t = cam.to_camera(x);
    return Eigen::Vector2d(cam.fx * t.x() / t.z() + cam.cx, cam.fy * t.y() / t.z() + cam.cy);
  };
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::Vector3d mean(0.8 * u(rng), 0.8 * u(rng), 0.8 * u(rng));
    const Eigen::Matrix3d sigma = build_covariance(
        {1 + u(rng), u(rng), u(rng), u(rng)}, {std::log(0.1) + u(rng), std::log(0.1), -2.0});
    Eigen::Matrix<double, 2, 3> jac;
    const double h = 1e-5;
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d e = Eigen::Vector3d::Zero();
      e[k] = h;
      jac.col(k) = (project(mean + e) - project(mean - e)) / (2 * h);
    }
    const Eigen::Matrix2d expect = jac * sigma * jac.transpose();
    const auto p = project_gaussian(mean, sigma, cam);
    REQUIRE(p.has_value());
    Eigen::Matrix2d got = p->cov2d;
    got(0, 0) -= kCovDilation;
    got(1, 1) -= kCovDilation;
    CHECK((got - expect).cwiseAbs().maxCoeff() <= 1e-4 * expect.cwiseAbs().maxCoeff());
    CHECK((p->mean2d - project(mean)).norm() < 1e-9);
    const Eigen::Vector2d eig = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(p->cov2d).eigenvalues();
    CHECK(eig.minCoeff() >= kCovDilation - 1e-12);
  }
}

TEST_CASE("camera and cloud validation") {
  Camera cam = testing::axis_camera(4, 4, 10);
  CHECK_NOTHROW(cam.validate());
  cam.rotation(0, 1) = 0.1;
  CHECK_THROWS_AS(cam.validate(), Error);
  cam = testing::axis_camera(0, 4, 10);
  CHECK_THROWS_AS(cam.validate(), Error);

  GaussianCloud c(3, 8, 1);
  CHECK_NOTHROW(c.validate());
  CHECK(c.features.size() == 24);
  CHECK(c.sh_coeffs.size() == 36);
  c.features.pop_back();
  CHECK_THROWS_AS(c.validate(), Error);
  GaussianCloud q(1, 2, 0);
  q.rotations = {0, 0, 0, 0};
  CHECK_THROWS_AS(q.validate(), Error);
  CHECK(sigmoid(logit(0.3)) == doctest::Approx(0.3));
}

TEST_CASE("cloud row operations keep arrays aligned") {
  std::mt19937_64 rng(1);
  GaussianCloud c = testing::random_cloud(rng, 5, 4, 1);
  GaussianCloud keep_odd = c;
  keep_odd.filter({false, true, false, true, false});
  REQUIRE(keep_odd.size() == 2);
  CHECK_NOTHROW(keep_odd.validate());
  CHECK(keep_odd.features[0] == c.features[4]);
  CHECK(keep_odd.means[3] == c.means[9]);
  GaussianCloud sub = c.subset({4, 0});
  CHECK(sub.size() == 2);
  CHECK(sub.sh_coeffs[0] == c.sh_coeffs[4 * 12]);
  sub.append_row(c, 2);
  CHECK(sub.size() == 3);
  CHECK_NOTHROW(sub.validate());
}
