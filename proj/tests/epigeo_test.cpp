#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <epirefine/epigeo/camera.hpp>
#include <epirefine/epigeo/epipolar.hpp>
#include <epirefine/epigeo/se3.hpp>

#include <Eigen/LU>
#include <Eigen/SVD>

#include <cmath>
#include <random>

using namespace epirefine::epigeo;

namespace {

Intrinsics test_intrinsics(double f = 100.0, int w = 128, int h = 128) {
  return {f, f, w / 2.0, h / 2.0, w, h};
}

Pose random_pose(unsigned seed, double max_angle_rad = 0.5) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Eigen::Matrix<double, 6, 1> xi;
  for (int i = 0; i < 3; ++i) xi(i) = u(rng) * max_angle_rad;
  for (int i = 3; i < 6; ++i) xi(i) = u(rng);
  return se3_exp(xi);
}

Vec3 random_point_in_front(std::mt19937& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  return {u(rng), u(rng), 3.0 + u(rng)};
}

}  // namespace

TEST_CASE("essential matrix of pure x-translation") {
  RelativePose rel;
  rel.t = Vec3(1, 0, 0);
  const Mat3 e = essential_from_relative(rel);
  Mat3 expected;
  expected << 0, 0, 0, 0, 0, -1, 0, 1, 0;
  CHECK((e - expected).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("essential matrix has singular values (s, s, 0)") {
  for (unsigned seed = 0; seed < 5; ++seed) {
    const Mat3 e = essential_from_relative(random_pose(seed));
    Eigen::JacobiSVD<Mat3> svd(e);
    const auto s = svd.singularValues();
    CHECK(std::abs(s(0) - s(1)) < 1e-9 * s(0));
    CHECK(s(2) < 1e-9 * s(0));
  }
}

TEST_CASE("zero translation raises DegeneratePose") {
  RelativePose rel;
  rel.R = axis_angle(Vec3(0, 0, 1), 0.3);
  CHECK_THROWS_AS(essential_from_relative(rel), epirefine::DegeneratePose);
}

TEST_CASE("epipolar constraint in normalized coordinates (projection oracle)") {
  std::mt19937 rng(17);
  for (unsigned seed = 100; seed < 105; ++seed) {
    const RelativePose rel = random_pose(seed);
    const Mat3 e = essential_from_relative(rel);
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const Vec3 x_ref = random_point_in_front(rng);       // reference frame
      const Vec3 x_tgt = rel.transform(x_ref);             // target frame
      REQUIRE(x_tgt.z() > 0.1);
      const Vec3 xn(x_ref.x() / x_ref.z(), x_ref.y() / x_ref.z(), 1.0);
      const Vec3 yn(x_tgt.x() / x_tgt.z(), x_tgt.y() / x_tgt.z(), 1.0);
      worst = std::max(worst, std::abs(yn.dot(e * xn)));
    }
    CHECK(worst < 1e-9);
  }
}

TEST_CASE("fundamental from essential") {
  const RelativePose rel = random_pose(3);
  const Mat3 e = essential_from_relative(rel);

  SUBCASE("identity-like intrinsics give F proportional to E") {
    Intrinsics k{1, 1, 0, 0, 2, 2};
    const FundamentalMatrix f = fundamental_from_essential(e, k, k);
    const Mat3 en = e / e.norm();
    const double sign = (en(1, 2) * f.F(1, 2) >= 0) ? 1.0 : -1.0;
    CHECK((f.F - sign * en).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("rank 2 and unit norm") {
    const Intrinsics k = test_intrinsics();
    const FundamentalMatrix f = fundamental_from_essential(e, k, k);
    CHECK(std::abs(f.F.determinant()) < 1e-9);
    CHECK(f.smallest_singular_value_ratio() < 1e-9);
    CHECK(f.F.norm() == doctest::Approx(1.0));
  }

  SUBCASE("pixel projections satisfy the constraint within 1e-6 px") {
    const Intrinsics k = test_intrinsics();
    const FundamentalMatrix f = fundamental_from_essential(e, k, k);
    std::mt19937 rng(5);
    Pose identity;
    for (int i = 0; i < 20; ++i) {
      const Vec3 xw = random_point_in_front(rng);
      const Vec2 x = project(identity, k, xw);
      const Vec2 y = project(rel, k, xw);
      CHECK(symmetric_epipolar_distance(f, x, y) < 1e-6);
    }
  }
}

TEST_CASE("epipolar lines") {
  SUBCASE("pure x-translation gives horizontal lines in pixels") {
    RelativePose rel;
    rel.t = Vec3(1, 0, 0);
    const Intrinsics k = test_intrinsics();
    const FundamentalMatrix f = fundamental_from_relative(rel, k, k);
    const Line2 l = epipolar_line(f, Vec2(40.0, 80.0));
    CHECK(std::abs(l.b) > 100.0 * std::abs(l.a));
    // the line passes through y = 80 (same row)
    CHECK(point_line_distance(Vec2(10.0, 80.0), l) < 1e-9);
  }

  SUBCASE("epipole input is flagged") {
    RelativePose rel;
    rel.t = Vec3(0, 0, 1);
    Intrinsics k{1, 1, 0, 0, 2, 2};
    const FundamentalMatrix f = fundamental_from_relative(rel, k, k);
    // epipole at the origin for optical-axis translation in normalized coords
    const Line2 l = epipolar_line(f, Vec2(0.0, 0.0));
    CHECK(l.degenerate);
    CHECK_THROWS_AS(point_line_distance(Vec2(1.0, 1.0), l), epirefine::EpipoleDegenerate);
  }
}

TEST_CASE("point-line distance") {
  CHECK(point_line_distance(Vec2(0, 0), Line2{1, 0, -1}) == doctest::Approx(1.0));
  CHECK(point_line_distance(Vec2(1, 0), Line2{1, 0, -1}) == doctest::Approx(0.0));
  CHECK(point_line_distance(Vec2(3, 4), Line2{3, 4, 0}) == doctest::Approx(5.0));
}

TEST_CASE("symmetric epipolar distance") {
  const RelativePose rel = random_pose(9);
  const Intrinsics k = test_intrinsics();
  const FundamentalMatrix f = fundamental_from_relative(rel, k, k);
  const FundamentalMatrix ft{Mat3(f.F.transpose())};
  std::mt19937 rng(2);
  Pose identity;

  for (int i = 0; i < 10; ++i) {
    const Vec3 xw = random_point_in_front(rng);
    const Vec2 x = project(identity, k, xw);
    const Vec2 y = project(rel, k, xw);

    // exact correspondences
    CHECK(symmetric_epipolar_distance(f, x, y) < 1e-6);

    // swap symmetry: d(F, x, y) == d(F^T, y, x)
    const Vec2 yd = y + Vec2(1.3, -0.7);
    CHECK(symmetric_epipolar_distance(f, x, yd) ==
          doctest::Approx(symmetric_epipolar_distance(ft, yd, x)).epsilon(1e-12));
  }

  SUBCASE("perpendicular displacement shows up as its magnitude plus the back term") {
    const Vec3 xw(0.2, -0.3, 3.5);
    const Vec2 x = project(identity, k, xw);
    const Vec2 y = project(rel, k, xw);
    const Line2 l = epipolar_line(f, x);
    const double n = std::hypot(l.a, l.b);
    const Vec2 y2 = y + 2.0 * Vec2(l.a / n, l.b / n);
    const double back = point_line_distance(x, epipolar_line_transposed(f, y2));
    CHECK(symmetric_epipolar_distance(f, x, y2) == doctest::Approx(2.0 + back).epsilon(1e-9));
  }
}

TEST_CASE("se3 exponential map") {
  SUBCASE("zero maps to identity") {
    const Pose p = se3_exp(Eigen::Matrix<double, 6, 1>::Zero());
    CHECK((p.R - Mat3::Identity()).cwiseAbs().maxCoeff() == 0.0);
    CHECK(p.t.norm() == 0.0);
  }

  SUBCASE("rotation about z") {
    const double theta = 0.37;
    Eigen::Matrix<double, 6, 1> xi = Eigen::Matrix<double, 6, 1>::Zero();
    xi(2) = theta;
    const Pose p = se3_exp(xi);
    Mat3 expected;
    expected << std::cos(theta), -std::sin(theta), 0, std::sin(theta), std::cos(theta), 0, 0, 0, 1;
    CHECK((p.R - expected).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("exp(xi) * exp(-xi) = identity") {
    for (unsigned seed = 0; seed < 5; ++seed) {
      std::mt19937 rng(seed);
      std::uniform_real_distribution<double> u(-1.0, 1.0);
      Eigen::Matrix<double, 6, 1> xi;
      for (int i = 0; i < 6; ++i) xi(i) = u(rng);
      const Pose p = se3_exp(xi).compose(se3_exp(-xi));
      CHECK((p.R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);
      CHECK(p.t.norm() < 1e-9);
    }
  }

  SUBCASE("outputs are valid rotations") {
    for (unsigned seed = 20; seed < 30; ++seed) {
      const Pose p = random_pose(seed, 2.5);
      p.validate();
    }
  }
}

TEST_CASE("pose and intrinsics JSON round trip") {
  const Pose p = random_pose(33);
  const Pose q = Pose::from_json(p.to_json());
  CHECK((p.R - q.R).cwiseAbs().maxCoeff() == 0.0);
  CHECK((p.t - q.t).cwiseAbs().maxCoeff() == 0.0);

  const Intrinsics k = test_intrinsics();
  const Intrinsics k2 = Intrinsics::from_json(k.to_json());
  CHECK(k2.fx == k.fx);
  CHECK(k2.cy == k.cy);
  CHECK(k2.width == k.width);
}

TEST_CASE("relative pose of a camera against itself is identity") {
  const Pose p = random_pose(8);
  const RelativePose rel = relative_pose(p, p);
  CHECK((rel.R - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(rel.t.norm() < 1e-15);
}
