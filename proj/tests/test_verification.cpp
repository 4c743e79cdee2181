#include "pgslam/verification.hpp"

#include <cmath>
#include <random>
#include <vector>

#include <Eigen/Geometry>

#include "doctest.h"
#include "pgslam/simulate.hpp"

using namespace pgslam;

namespace {

// Elevation fan wide enough that every room face, floor and ceiling
// included, is sampled densely enough for 10-NN plane growing.
ScanConfig balanced_scan() {
  ScanConfig cfg;
  cfg.range_sigma = 0.0;
  cfg.num_rings = 61;
  cfg.zenith_start_deg = -60.0;
  cfg.zenith_step_deg = 2.0;
  cfg.azimuth_step_deg = 6.0;
  return cfg;
}

Pose sensor_at(double x, double y, double yaw) {
  Pose p;
  p.translation = Vec3(x, y, 1.5);
  p.rotation = rot_z(yaw);
  return p;
}

SyntheticWorld box_room() {
  SyntheticWorld w = make_room_world(14.0, 10.0, 3.0);
  add_box(w, Vec3(3.0, 2.0, 0.0), 1.2, 1.0, 1.4);
  add_box(w, Vec3(-3.0, -2.0, 0.0), 1.0, 1.5, 0.8);
  add_box(w, Vec3(0.5, -3.0, 0.0), 0.8, 0.8, 1.8);
  return w;
}

PointCloud noise_ball(unsigned seed, int n) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 2.0);
  PointCloud cloud;
  cloud.points.resize(n, 3);
  for (int i = 0; i < n; ++i) {
    cloud.points.row(i) << gauss(rng), gauss(rng), gauss(rng);
  }
  return cloud;
}

bool same_matches(const AlignabilityReport& a, const AlignabilityReport& b) {
  if (a.matches.size() != b.matches.size()) return false;
  for (size_t m = 0; m < a.matches.size(); ++m) {
    if (a.matches[m].query != b.matches[m].query) return false;
    if (a.matches[m].source != b.matches[m].source) return false;
    if (a.matches[m].score != b.matches[m].score) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("alignability on hand-built normal matrices") {
  Eigen::Matrix<double, Eigen::Dynamic, 3> n;

  n = Mat3::Identity();
  CHECK(alignability(n) == doctest::Approx(1.0).epsilon(1e-12));

  n.resize(2, 3);
  n << 1, 0, 0, 1, 0, 0;
  CHECK(std::isinf(alignability(n)));

  n.resize(4, 3);
  n << 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0, 0;
  CHECK(alignability(n) == doctest::Approx(2.0).epsilon(1e-12));

  n.resize(0, 3);
  CHECK_THROWS_AS(alignability(n), std::invalid_argument);
}

TEST_CASE("risk surrogate values and monotonicity") {
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(risk(1.0, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(risk(0.5, 10.0) == doctest::Approx(0.75).epsilon(1e-12));
  for (double omega : {0.0, 0.3, 0.7, 1.0}) {
    CHECK(risk(omega, inf) == 1.0);
  }

  const std::vector<double> omegas = {0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0};
  const std::vector<double> alphas = {1.0, 2.0, 10.0, 100.0, 1e6, inf};
  for (size_t a = 0; a < alphas.size(); ++a) {
    for (size_t o = 0; o < omegas.size(); ++o) {
      const double rho = risk(omegas[o], alphas[a]);
      CHECK(rho >= 0.0);
      CHECK(rho <= 1.0);
      if (o > 0) CHECK(rho <= risk(omegas[o - 1], alphas[a]) + 1e-15);
      if (a > 0) CHECK(rho >= risk(omegas[o], alphas[a - 1]) - 1e-15);
    }
  }
}

TEST_CASE("self pair in a cube room: six unit matches, alpha 1, zero risk") {
  // Centered viewpoint: every face is one connected patch. Oblique views
  // can split a wall into several coplanar patches where the ring pattern
  // stretches past the 10-NN bridging range, which is valid segmentation
  // output but a different fixture.
  const SyntheticWorld w = make_room_world(10.0, 10.0, 3.0);
  const Pose sensor = sensor_at(0.0, 0.0, 0.0);
  const PointCloud scan = simulate_scan(w, sensor, balanced_scan());

  const auto report = predict_alignment_risk(scan, scan, sensor, sensor, 1);
  REQUIRE(report.verifiable);
  REQUIRE(report.matches.size() == 6);
  for (size_t m = 0; m < report.matches.size(); ++m) {
    CHECK(report.matches[m].score == 1.0);
    // All scores tie at 1, so order falls back to query index; identical
    // clouds segment identically, so each plane matches itself.
    CHECK(report.matches[m].query == static_cast<Eigen::Index>(m));
    CHECK(report.matches[m].source == report.matches[m].query);
  }
  REQUIRE(report.normal_matrix.rows() == 6);
  for (Eigen::Index r = 0; r < 6; ++r) {
    CHECK(report.normal_matrix.row(r).norm() == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Paired +-x, +-y, +-z rows give a Gram matrix proportional to identity.
  CHECK(report.alpha == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(report.omega == 1.0);
  CHECK(report.risk == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(report.elapsed >= 0.0);
}

TEST_CASE("corridor pair is degenerate: infinite alpha, full risk") {
  const SyntheticWorld w = make_corridor_world(40.0, 4.0, 3.0);
  ScanConfig cfg = balanced_scan();
  cfg.max_range = 12.0;  // keeps ring spacing bridgeable at grazing incidence

  const Pose pose_a = sensor_at(-1.0, 0.0, 0.0);
  const Pose pose_b = sensor_at(1.0, 0.0, 0.0);
  const PointCloud scan_a = simulate_scan(w, pose_a, cfg);
  const PointCloud scan_b = simulate_scan(w, pose_b, cfg);

  const auto report = predict_alignment_risk(scan_a, scan_b, pose_a, pose_b, 1);
  REQUIRE(report.verifiable);
  CHECK(!report.matches.empty());
  // Walls, floor and ceiling constrain y and z only; nothing pins motion
  // along the corridor axis.
  CHECK(std::isinf(report.alpha));
  CHECK(report.risk == 1.0);
  CHECK(report.omega > 0.5);

  const auto oracle = brute_force_risk(scan_a, scan_b, pose_a, pose_b);
  CHECK(std::isinf(oracle.alpha));
  CHECK(oracle.risk == 1.0);
}

TEST_CASE("fast variant with all candidates reproduces the oracle") {
  const SyntheticWorld w = box_room();
  const ScanConfig cfg = balanced_scan();
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> ux(-4.0, 4.0);
  std::uniform_real_distribution<double> uy(-2.5, 2.5);
  std::uniform_real_distribution<double> uyaw(-kPi, kPi);
  std::uniform_real_distribution<double> ustep(-1.0, 1.0);

  int queries_total = 0;
  int queries_agreeing = 0;
  for (int trial = 0; trial < 12; ++trial) {
    const Pose pose_a = sensor_at(ux(rng), uy(rng), uyaw(rng));
    Pose offset;
    offset.translation = Vec3(ustep(rng), ustep(rng), 0.0);
    offset.rotation = rot_z(0.35 * ustep(rng));
    const Pose pose_b = compose(pose_a, offset);

    const PointCloud scan_a = simulate_scan(w, pose_a, cfg);
    const PointCloud scan_b = simulate_scan(w, pose_b, cfg);

    VerificationConfig vcfg;
    const auto source_planes = extract_planes(scan_a, vcfg.segmentation);
    const auto target_planes = extract_planes(scan_b, vcfg.segmentation);
    REQUIRE(!source_planes.empty());
    REQUIRE(!target_planes.empty());

    const auto oracle = brute_force_risk(scan_a, source_planes, scan_b,
                                         target_planes, pose_a, pose_b, vcfg);
    const auto fast_all = predict_alignment_risk(
        scan_a, source_planes, scan_b, target_planes, pose_a, pose_b,
        static_cast<int>(source_planes.size()), vcfg);
    // Asking for more neighbors than exist clamps to all of them.
    const auto fast_over = predict_alignment_risk(
        scan_a, source_planes, scan_b, target_planes, pose_a, pose_b,
        static_cast<int>(source_planes.size()) + 7, vcfg);

    CHECK(same_matches(oracle, fast_all));
    CHECK(same_matches(oracle, fast_over));
    if (std::isinf(oracle.alpha)) {
      CHECK(std::isinf(fast_all.alpha));
    } else {
      CHECK(fast_all.alpha == doctest::Approx(oracle.alpha).epsilon(1e-9));
    }
    CHECK(fast_all.omega == oracle.omega);
    CHECK(fast_all.risk == doctest::Approx(oracle.risk).epsilon(1e-12));

    const auto fast_one = predict_alignment_risk(
        scan_a, source_planes, scan_b, target_planes, pose_a, pose_b, 1, vcfg);
    // Per-query agreement with the oracle: same matched source plane, or
    // unmatched in both.
    std::vector<Eigen::Index> oracle_match(target_planes.size(), -1);
    std::vector<Eigen::Index> fast_match(target_planes.size(), -1);
    for (const auto& m : oracle.matches) oracle_match[m.query] = m.source;
    for (const auto& m : fast_one.matches) fast_match[m.query] = m.source;
    for (size_t q = 0; q < target_planes.size(); ++q) {
      ++queries_total;
      if (oracle_match[q] == fast_match[q]) ++queries_agreeing;
    }
  }
  REQUIRE(queries_total > 50);
  const double agreement =
      static_cast<double>(queries_agreeing) / queries_total;
  MESSAGE("K=1 per-plane agreement with oracle: " << agreement << " over "
                                                  << queries_total);
  CHECK(agreement >= 0.9);
}

TEST_CASE("alignability is invariant under co-rotation of the rows") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> gauss;
  for (int trial = 0; trial < 20; ++trial) {
    const int m = 1 + static_cast<int>(rng() % 8);
    Eigen::Matrix<double, Eigen::Dynamic, 3> n(m, 3);
    for (int r = 0; r < m; ++r) {
      Vec3 v(gauss(rng), gauss(rng), gauss(rng));
      while (v.norm() < 1e-3) v = Vec3(gauss(rng), gauss(rng), gauss(rng));
      n.row(r) = v.normalized().transpose();
    }
    Vec3 axis(gauss(rng), gauss(rng), gauss(rng));
    while (axis.norm() < 1e-3) axis = Vec3(gauss(rng), gauss(rng), gauss(rng));
    const Mat3 rot =
        Eigen::AngleAxisd(gauss(rng), axis.normalized()).toRotationMatrix();
    const Eigen::Matrix<double, Eigen::Dynamic, 3> rotated =
        n * rot.transpose();
    const double base = alignability(n);
    const double moved = alignability(rotated);
    if (std::isinf(base)) {
      CHECK(std::isinf(moved));
    } else {
      CHECK(moved == doctest::Approx(base).epsilon(1e-9));
    }
  }
}

TEST_CASE("report is invariant under a global rigid motion of the pair") {
  const SyntheticWorld w = box_room();
  const ScanConfig cfg = balanced_scan();
  const Pose pose_a = sensor_at(-1.0, 0.5, 0.3);
  const Pose pose_b = sensor_at(0.2, -0.4, -0.4);
  const PointCloud scan_a = simulate_scan(w, pose_a, cfg);
  const PointCloud scan_b = simulate_scan(w, pose_b, cfg);

  const VerificationConfig vcfg;
  const auto planes_a = extract_planes(scan_a, vcfg.segmentation);
  const auto planes_b = extract_planes(scan_b, vcfg.segmentation);
  const auto base = predict_alignment_risk(scan_a, planes_a, scan_b, planes_b,
                                           pose_a, pose_b, 2, vcfg);
  REQUIRE(base.verifiable);
  REQUIRE(std::isfinite(base.alpha));

  // Move everything by one rigid transform: cloud points, plane normals
  // and centroids, sensor poses. Re-segmenting the moved clouds instead
  // could legitimately add or drop patches that sit right at the member
  // count threshold, so the fixed segmentation is carried over.
  Twist xi;
  xi << 5.0, -3.0, 2.0, 0.3, -0.5, 0.8;
  const Pose motion = se3_exp(xi);
  auto move_planes = [&](const std::vector<Plane>& planes) {
    std::vector<Plane> out = planes;
    for (auto& p : out) {
      p.normal = motion.rotation * p.normal;
      p.centroid = apply_point(motion, p.centroid);
    }
    return out;
  };
  const PointCloud moved_a = apply(motion, scan_a);
  const PointCloud moved_b = apply(motion, scan_b);

  const auto moved = predict_alignment_risk(
      moved_a, move_planes(planes_a), moved_b, move_planes(planes_b),
      compose(pose_a, invert(motion)), compose(pose_b, invert(motion)), 2,
      vcfg);
  REQUIRE(moved.verifiable);
  REQUIRE(moved.matches.size() == base.matches.size());
  for (size_t m = 0; m < base.matches.size(); ++m) {
    CHECK(moved.matches[m].query == base.matches[m].query);
    CHECK(moved.matches[m].source == base.matches[m].source);
    CHECK(moved.matches[m].score ==
          doctest::Approx(base.matches[m].score).epsilon(1e-12));
  }
  CHECK(moved.alpha == doctest::Approx(base.alpha).epsilon(1e-6));
  CHECK(moved.omega == doctest::Approx(base.omega).epsilon(1e-6));
  CHECK(moved.risk == doctest::Approx(base.risk).epsilon(1e-9));
}

TEST_CASE("clouds without planes are unverifiable, not merely risky") {
  const PointCloud ball_a = noise_ball(7, 400);
  const PointCloud ball_b = noise_ball(8, 400);
  const Pose identity;

  const auto fast = predict_alignment_risk(ball_a, ball_b, identity, identity, 1);
  CHECK(!fast.verifiable);
  CHECK(fast.matches.empty());
  CHECK(fast.risk == 1.0);

  const auto brute = brute_force_risk(ball_a, ball_b, identity, identity);
  CHECK(!brute.verifiable);

  // One structured side does not rescue the pair.
  const SyntheticWorld w = make_room_world(10.0, 10.0, 3.0);
  const Pose sensor = sensor_at(0.0, 0.0, 0.0);
  const PointCloud room = simulate_scan(w, sensor, balanced_scan());
  CHECK(!predict_alignment_risk(room, ball_a, sensor, identity, 1).verifiable);
  CHECK(!predict_alignment_risk(ball_a, room, identity, sensor, 1).verifiable);

  PointCloud empty;
  empty.points.resize(0, 3);
  CHECK(!predict_alignment_risk(empty, empty, identity, identity, 1).verifiable);
  CHECK(!brute_force_risk(empty, empty, identity, identity).verifiable);
}

TEST_CASE("candidate count must be positive") {
  const PointCloud ball = noise_ball(9, 100);
  const Pose identity;
  CHECK_THROWS_AS(predict_alignment_risk(ball, ball, identity, identity, 0),
                  std::invalid_argument);
}
