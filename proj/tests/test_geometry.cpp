#include "pgslam/geometry.hpp"

#include <random>

#include "doctest.h"

using namespace pgslam;

namespace {

Pose random_pose(std::mt19937_64& rng, double max_angle = 3.0,
                 double max_trans = 10.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 axis(u(rng), u(rng), u(rng));
  while (axis.norm() < 1e-3) axis = Vec3(u(rng), u(rng), u(rng));
  std::uniform_real_distribution<double> ua(0.0, max_angle);
  Pose p;
  p.rotation =
      Eigen::AngleAxisd(ua(rng), axis.normalized()).toRotationMatrix();
  p.translation = max_trans * Vec3(u(rng), u(rng), u(rng));
  return p;
}

double pose_diff(const Pose& a, const Pose& b) {
  return std::max((a.rotation - b.rotation).cwiseAbs().maxCoeff(),
                  (a.translation - b.translation).cwiseAbs().maxCoeff());
}

}  // namespace

TEST_CASE("compose identities") {
  const Pose id;
  CHECK(pose_diff(compose(id, id), id) == 0.0);

  Pose rz90;
  rz90.rotation = rot_z(deg2rad(90.0));
  const Pose two = compose(rz90, rz90);
  Pose rz180;
  rz180.rotation = rot_z(deg2rad(180.0));
  CHECK(pose_diff(two, rz180) < 1e-12);
  CHECK(two.translation.norm() == 0.0);

  std::mt19937_64 rng(7);
  for (int i = 0; i < 50; ++i) {
    const Pose p = random_pose(rng);
    CHECK(pose_diff(compose(p, invert(p)), id) < 1e-9);
  }
}

TEST_CASE("group axioms on random poses") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    CHECK(pose_diff(compose(compose(a, b), c), compose(a, compose(b, c))) <
          1e-9);
    CHECK(is_rotation(compose(a, b).rotation));
  }
}

TEST_CASE("apply maps points and keeps metadata") {
  PointCloud cloud;
  cloud.points.resize(3, 3);
  cloud.points << 0, 0, 0, 1, 0, 0, 0, 0, 2;
  cloud.timestamp = 4.5;
  cloud.frame_id = "sensor";

  const PointCloud same = apply(Pose{}, cloud);
  CHECK((same.points - cloud.points).cwiseAbs().maxCoeff() == 0.0);
  CHECK(same.timestamp == 4.5);
  CHECK(same.frame_id == "sensor");

  Pose shift;
  shift.translation = Vec3(1, 0, 0);
  CHECK((apply(shift, cloud).points.row(0) - Eigen::RowVector3d(1, 0, 0))
            .cwiseAbs()
            .maxCoeff() == 0.0);

  Pose rz90;
  rz90.rotation = rot_z(deg2rad(90.0));
  CHECK((apply(rz90, cloud).points.row(1) - Eigen::RowVector3d(0, 1, 0))
            .cwiseAbs()
            .maxCoeff() < 1e-12);
}

TEST_CASE("apply composes") {
  std::mt19937_64 rng(13);
  PointCloud cloud;
  cloud.points.resize(20, 3);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int i = 0; i < 20; ++i)
    cloud.points.row(i) << u(rng), u(rng), u(rng);
  for (int i = 0; i < 10; ++i) {
    const Pose a = random_pose(rng), b = random_pose(rng);
    const PointCloud lhs = apply(compose(a, b), cloud);
    const PointCloud rhs = apply(a, apply(b, cloud));
    CHECK((lhs.points - rhs.points).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("exp special cases") {
  const Pose id = se3_exp(Twist::Zero());
  CHECK(pose_diff(id, Pose{}) == 0.0);

  Twist xi = Twist::Zero();
  xi[0] = 1.0;
  const Pose p = se3_exp(xi);
  CHECK(pose_diff(p, Pose{Mat3::Identity(), Vec3(1, 0, 0)}) < 1e-15);
}

TEST_CASE("exp/log round trip") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    Twist xi;
    for (int k = 0; k < 6; ++k) xi[k] = u(rng);
    xi.head<3>() *= 10.0;
    Vec3 phi = xi.tail<3>();
    if (phi.norm() > 1e-12) {
      std::uniform_real_distribution<double> mag(0.0, 3.0);
      xi.tail<3>() = phi.normalized() * mag(rng);
    }
    const Twist back = se3_log(se3_exp(xi));
    CHECK((back - xi).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("log small-angle branch") {
  Twist xi;
  xi << 0.3, -0.2, 0.1, 1e-9, -2e-9, 1e-9;
  const Twist back = se3_log(se3_exp(xi));
  CHECK((back - xi).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("log rejects rotations at pi") {
  Pose p;
  p.rotation = Eigen::AngleAxisd(kPi, Vec3::UnitX()).toRotationMatrix();
  CHECK_THROWS_AS((void)se3_log(p), std::domain_error);
  p.rotation =
      Eigen::AngleAxisd(kPi - 1e-7, Vec3::UnitY()).toRotationMatrix();
  CHECK_THROWS_AS((void)se3_log(p), std::domain_error);
  p.rotation =
      Eigen::AngleAxisd(kPi - 1e-5, Vec3::UnitY()).toRotationMatrix();
  CHECK_NOTHROW((void)se3_log(p));
}

TEST_CASE("boxplus is right perturbation") {
  std::mt19937_64 rng(19);
  const Pose t = random_pose(rng);
  CHECK(pose_diff(boxplus(t, Twist::Zero()), t) == 0.0);

  Twist xi;
  xi << 0.1, -0.2, 0.05, 0.03, 0.02, -0.1;
  CHECK(pose_diff(boxplus(t, xi), compose(t, se3_exp(xi))) == 0.0);
}

TEST_CASE("adjoint moves perturbations across composition") {
  // exp(Adj(T) xi) = T exp(xi) T^-1 for the (trans, rot) twist ordering.
  std::mt19937_64 rng(23);
  for (int i = 0; i < 20; ++i) {
    const Pose t = random_pose(rng);
    Twist xi;
    std::uniform_real_distribution<double> u(-0.3, 0.3);
    for (int k = 0; k < 6; ++k) xi[k] = u(rng);
    const Pose lhs = se3_exp(Twist(adjoint(t) * xi));
    const Pose rhs = compose(t, compose(se3_exp(xi), invert(t)));
    CHECK(pose_diff(lhs, rhs) < 1e-9);
  }
}

TEST_CASE("rotation angle") {
  CHECK(rotation_angle(rot_z(0.7)) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(rotation_angle(Mat3::Identity()) == 0.0);
}

TEST_CASE("quaternion boundary round trip") {
  std::mt19937_64 rng(29);
  for (int i = 0; i < 50; ++i) {
    const Pose p = random_pose(rng);
    const auto q = to_quaternion(p);
    const Pose back =
        pose_from_quaternion(p.translation, q.x(), q.y(), q.z(), q.w());
    CHECK(pose_diff(back, p) < 1e-12);
  }
}

TEST_CASE("covariance validity") {
  CHECK(is_valid_covariance(Covariance6::Identity()));
  Covariance6 c = Covariance6::Identity();
  c(0, 0) = 0.0;
  CHECK_FALSE(is_valid_covariance(c));  // singular
  c = Covariance6::Identity();
  c(0, 1) = 0.5;
  CHECK_FALSE(is_valid_covariance(c));  // asymmetric
  c(1, 0) = 0.5;
  CHECK(is_valid_covariance(c));
}
