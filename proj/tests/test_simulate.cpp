#include "pgslam/simulate.hpp"

#include <cmath>

#include "doctest.h"

using namespace pgslam;

namespace {

ScanConfig noise_free() {
  ScanConfig cfg;
  cfg.range_sigma = 0.0;
  return cfg;
}

double plane_distance(const Rect& r, const Vec3& p) {
  return std::abs(r.normal().dot(p - r.corner));
}

// Distance to the nearest rectangle plane among all world planes.
double min_plane_distance(const SyntheticWorld& w, const Vec3& p) {
  double best = std::numeric_limits<double>::infinity();
  for (const Rect& r : w.rects) best = std::min(best, plane_distance(r, p));
  return best;
}

Pose sensor_at(const Vec3& p, double yaw = 0.0) {
  Pose pose;
  pose.rotation = rot_z(yaw);
  pose.translation = p;
  return pose;
}

}  // namespace

TEST_CASE("single plane ahead: central ray range exactly 1") {
  SyntheticWorld w;
  // Wall x = 1 spanning y,z in [-5,5].
  w.rects.push_back({Vec3(1, -5, -5), Vec3(0, 10, 0), Vec3(0, 0, 10)});
  ScanConfig cfg = noise_free();
  cfg.num_rings = 1;
  cfg.zenith_start_deg = 0.0;  // central ring at zero elevation
  const PointCloud c = simulate_scan(w, sensor_at(Vec3::Zero()), cfg);
  REQUIRE(!c.empty());
  bool found_central = false;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const Vec3 p = c.point(i);
    // forward ray = +x direction
    if (std::abs(p.y()) < 1e-12 && std::abs(p.z()) < 1e-12) {
      found_central = true;
      CHECK(p.x() == doctest::Approx(1.0).epsilon(1e-12));
    }
    // every hit satisfies range = 1 / cos(incidence): x component is 1
    CHECK(p.x() == doctest::Approx(1.0).epsilon(1e-9));
  }
  CHECK(found_central);
}

TEST_CASE("empty world gives empty cloud") {
  SyntheticWorld w;
  const PointCloud c = simulate_scan(w, sensor_at(Vec3::Zero()), noise_free());
  CHECK(c.empty());
}

TEST_CASE("cube room: every noise-free point lies on a wall") {
  const SyntheticWorld w = make_room_world(10.0, 10.0, 3.0);
  const Pose sensor = sensor_at(Vec3(0, 0, 1.5), 0.3);
  const PointCloud c = simulate_scan(w, sensor, noise_free());
  REQUIRE(c.size() > 1000);
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const Vec3 world_p = apply_point(sensor, c.point(i));
    CHECK(min_plane_distance(w, world_p) < 1e-9);
  }
}

TEST_CASE("range noise is applied along the ray") {
  SyntheticWorld w;
  w.rects.push_back({Vec3(2, -5, -5), Vec3(0, 10, 0), Vec3(0, 0, 10)});
  ScanConfig cfg;
  cfg.range_sigma = 0.05;
  cfg.num_rings = 1;
  cfg.zenith_start_deg = 0.0;
  cfg.seed = 42;
  const PointCloud c = simulate_scan(w, sensor_at(Vec3::Zero()), cfg);
  REQUIRE(!c.empty());
  double sq_sum = 0.0;
  for (Eigen::Index i = 0; i < c.size(); ++i) {
    const Vec3 p = c.point(i);
    // noise moves the point along its ray: direction unchanged, so the
    // plane-distance residual equals the range perturbation
    const double res = p.x() - 2.0;
    CHECK(std::abs(res) < 0.05 * 6);
    sq_sum += res * res;
  }
  const double rms = std::sqrt(sq_sum / static_cast<double>(c.size()));
  CHECK(rms == doctest::Approx(0.05).epsilon(0.35));
}

TEST_CASE("scan determinism under fixed seed") {
  const SyntheticWorld w = make_room_world();
  ScanConfig cfg;
  cfg.seed = 7;
  const PointCloud a = simulate_scan(w, sensor_at(Vec3(1, 0, 1)), cfg);
  const PointCloud b = simulate_scan(w, sensor_at(Vec3(1, 0, 1)), cfg);
  REQUIRE(a.size() == b.size());
  CHECK((a.points - b.points).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sequence with zero drift matches ground truth") {
  const SyntheticWorld w = make_room_world(20, 8, 3);
  const auto path = straight_path(6.0, 0.5);
  const ScanSequence seq = simulate_sequence(w, path, 0.0, noise_free());
  REQUIRE(seq.frames.size() == path.size());
  REQUIRE(seq.ground_truth.size() == path.size());
  for (size_t i = 0; i < path.size(); ++i) {
    CHECK((seq.frames[i].odom_prior.translation - path[i].translation)
              .norm() == 0.0);
    CHECK((seq.frames[i].odom_prior.rotation - path[i].rotation)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK(is_valid_covariance(seq.frames[i].odom_covariance));
  }
}

TEST_CASE("sequence timestamps strictly increase") {
  const SyntheticWorld w = make_room_world();
  const auto path = square_loop_path(4.0, 0.5);
  const ScanSequence seq = simulate_sequence(w, path, 0.01, noise_free());
  for (size_t i = 1; i < seq.frames.size(); ++i) {
    CHECK(seq.frames[i].timestamp > seq.frames[i - 1].timestamp);
    CHECK(seq.frames[i].timestamp == seq.ground_truth[i].t);
  }
}

TEST_CASE("drift grows like rate times distance on a straight path") {
  // Monte-Carlo over 20 seeds: mean final offset of a 100 m path at
  // drift 0.015 should be about 1.5 m. Uses an empty world to skip
  // raycasting; the odometry model does not depend on the scans.
  SyntheticWorld w;
  const auto path = straight_path(100.0, 0.5);
  double sum = 0.0;
  for (int seed = 0; seed < 20; ++seed) {
    ScanConfig cfg = noise_free();
    cfg.seed = 1000 + seed;
    const ScanSequence seq = simulate_sequence(w, path, 0.015, cfg);
    const Vec3 err = seq.frames.back().odom_prior.translation -
                     path.back().translation;
    sum += err.norm();
  }
  const double mean = sum / 20.0;
  CHECK(mean > 0.75);
  CHECK(mean < 2.25);
}

TEST_CASE("drift covariance grows with distance") {
  SyntheticWorld w;
  const auto path = straight_path(50.0, 0.5);
  const ScanSequence seq = simulate_sequence(w, path, 0.015, noise_free());
  double prev = 0.0;
  for (const auto& f : seq.frames) {
    CHECK(is_valid_covariance(f.odom_covariance));
    const double horiz = f.odom_covariance(0, 0);
    CHECK(horiz >= prev);
    prev = horiz;
  }
  // Final horizontal variance tracks (rate * distance)^2.
  const double expect = std::pow(0.015 * 50.0, 2);
  CHECK(seq.frames.back().odom_covariance(0, 0) ==
        doctest::Approx(expect).epsilon(0.1));
}

TEST_CASE("sequence reproducibility under fixed seed") {
  const SyntheticWorld w = make_room_world();
  const auto path = square_loop_path(4.0, 0.5);
  ScanConfig cfg;
  cfg.seed = 99;
  const ScanSequence a = simulate_sequence(w, path, 0.02, cfg);
  const ScanSequence b = simulate_sequence(w, path, 0.02, cfg);
  REQUIRE(a.frames.size() == b.frames.size());
  for (size_t i = 0; i < a.frames.size(); ++i) {
    CHECK((a.frames[i].cloud.points - b.frames[i].cloud.points)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK((a.frames[i].odom_prior.translation -
           b.frames[i].odom_prior.translation)
              .norm() == 0.0);
  }
}

TEST_CASE("scenario builders") {
  for (const char* name : {"room", "corridor", "loop", "two-pass"}) {
    const Scenario s = make_scenario(name);
    CHECK(!s.world.rects.empty());
    CHECK(s.path.size() > 10);
    for (const Rect& r : s.world.rects)
      CHECK(r.edge_u.cross(r.edge_v).norm() > 1e-9);
  }
  CHECK_THROWS_AS((void)make_scenario("moon"), std::invalid_argument);

  // Path length of the loop scenario exceeds 100 m.
  const Scenario loop = make_scenario("loop");
  double len = 0.0;
  for (size_t i = 1; i < loop.path.size(); ++i)
    len += (loop.path[i].translation - loop.path[i - 1].translation).norm();
  CHECK(len >= 100.0);
}
