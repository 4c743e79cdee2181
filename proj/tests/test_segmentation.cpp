#include "pgslam/segmentation.hpp"

#include <random>

#include "doctest.h"
#include "pgslam/simulate.hpp"

using namespace pgslam;

namespace {

PointCloud grid_plane(const Vec3& corner, const Vec3& eu, const Vec3& ev,
                      int nu, int nv) {
  PointCloud c;
  c.points.resize(static_cast<Eigen::Index>(nu) * nv, 3);
  Eigen::Index k = 0;
  for (int i = 0; i < nu; ++i)
    for (int j = 0; j < nv; ++j)
      c.points.row(k++) =
          (corner + eu * (double(i) / (nu - 1)) + ev * (double(j) / (nv - 1)))
              .transpose();
  return c;
}

void append(PointCloud& dst, const PointCloud& src) {
  const Eigen::Index n = dst.size();
  dst.points.conservativeResize(n + src.size(), 3);
  dst.points.bottomRows(src.size()) = src.points;
}

// Full 6-face cube surface, 11x11 points per face.
PointCloud cube_surface(const Vec3& center, double side) {
  const double h = side / 2.0;
  PointCloud c;
  auto face = [&](const Vec3& corner, const Vec3& eu, const Vec3& ev) {
    append(c, grid_plane(center + corner, eu, ev, 11, 11));
  };
  const Vec3 ex(side, 0, 0), ey(0, side, 0), ez(0, 0, side);
  face(Vec3(-h, -h, -h), ex, ey);  // bottom
  face(Vec3(-h, -h, h), ex, ey);   // top
  face(Vec3(-h, -h, -h), ex, ez);
  face(Vec3(-h, h, -h), ex, ez);
  face(Vec3(-h, -h, -h), ey, ez);
  face(Vec3(h, -h, -h), ey, ez);
  return c;
}

double brute_overlap_score(const Plane& ps, const PointCloud& ps_cloud,
                           const Plane& pt, const PointCloud& pt_cloud,
                           const Pose& t, double d, double r) {
  Eigen::Index hits = 0;
  for (Eigen::Index i : pt.member_indices) {
    const Vec3 p = apply_point(t, pt_cloud.point(i));
    if (std::abs(ps.normal.dot(p - ps.centroid)) >= d) continue;
    bool near = false;
    for (Eigen::Index j : ps.member_indices) {
      if ((ps_cloud.point(j) - p).squaredNorm() <= r * r) {
        near = true;
        break;
      }
    }
    if (near) ++hits;
  }
  return static_cast<double>(hits) / pt.member_indices.size();
}

}  // namespace

TEST_CASE("cube room yields exactly six planes with true normals") {
  const SyntheticWorld w = make_room_world(10.0, 10.0, 3.0);
  // Tall elevation fan with matched azimuth spacing so every face,
  // including floor and ceiling, is sampled densely enough for 10-NN
  // neighborhoods to bridge adjacent rings.
  ScanConfig cfg;
  cfg.range_sigma = 0.0;
  cfg.num_rings = 61;
  cfg.zenith_start_deg = -60.0;
  cfg.zenith_step_deg = 2.0;
  cfg.azimuth_step_deg = 6.0;
  Pose sensor;
  sensor.translation = Vec3(0, 0, 1.5);
  const PointCloud scan = simulate_scan(w, sensor, cfg);

  const auto planes = extract_planes(scan, SegmentationConfig{});
  REQUIRE(planes.size() == 6);

  // Truth normals in the sensor frame, oriented toward the origin.
  const std::vector<Vec3> truth = {Vec3(0, 0, 1),  Vec3(0, 0, -1),
                                   Vec3(1, 0, 0),  Vec3(-1, 0, 0),
                                   Vec3(0, 1, 0),  Vec3(0, -1, 0)};
  for (const Vec3& t : truth) {
    bool found = false;
    for (const Plane& p : planes)
      if (rad2deg(std::acos(std::clamp(p.normal.dot(t), -1.0, 1.0))) < 1.0)
        found = true;
    CHECK(found);
  }
  for (const Plane& p : planes) {
    CHECK(std::abs(p.normal.norm() - 1.0) < 1e-9);
    CHECK(static_cast<int>(p.member_indices.size()) >=
          SegmentationConfig{}.min_plane_points);
    CHECK(p.fit_rmse <= SegmentationConfig{}.plane_inlier_dist);
    CHECK(p.fit_rmse < 1e-9);  // noise-free input
  }
}

TEST_CASE("single plane comes back whole") {
  const PointCloud c =
      grid_plane(Vec3(-1, -1, 2), Vec3(2, 0, 0), Vec3(0, 2, 0), 25, 25);
  const auto planes = extract_planes(c, SegmentationConfig{});
  REQUIRE(planes.size() == 1);
  CHECK(planes[0].member_indices.size() == 625);
  CHECK(planes[0].fit_rmse < 1e-9);
  CHECK(std::abs(planes[0].normal.z()) > 1.0 - 1e-9);
}

TEST_CASE("random noise ball yields no planes") {
  for (int seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(400 + seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    PointCloud c;
    c.points.resize(1000, 3);
    Eigen::Index k = 0;
    while (k < 1000) {
      const Vec3 p(u(rng), u(rng), u(rng));
      if (p.norm() <= 1.0) c.points.row(k++) = p.transpose();
    }
    CHECK(extract_planes(c, SegmentationConfig{}).empty());
  }
}

TEST_CASE("plane extraction is deterministic") {
  const SyntheticWorld w = make_room_world();
  ScanConfig cfg;
  cfg.range_sigma = 0.03;
  cfg.seed = 5;
  Pose sensor;
  sensor.translation = Vec3(1.0, 0.5, 1.2);
  const PointCloud scan = simulate_scan(w, sensor, cfg);
  const auto a = extract_planes(scan, SegmentationConfig{});
  const auto b = extract_planes(scan, SegmentationConfig{});
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].member_indices == b[i].member_indices);
    CHECK((a[i].normal - b[i].normal).norm() == 0.0);
  }
}

TEST_CASE("two cubes on a ground plane give two segments") {
  // Ground with occlusion shadows around each cube footprint.
  PointCloud scene;
  scene.points.resize(0, 3);
  {
    PointCloud ground;
    std::vector<Vec3> pts;
    for (int i = 0; i <= 140; ++i) {
      for (int j = 0; j <= 80; ++j) {
        const Vec3 p(-7.0 + 0.1 * i, -4.0 + 0.1 * j, 0.0);
        const bool shadow_a =
            std::max(std::abs(p.x() + 2.5), std::abs(p.y())) <= 0.9;
        const bool shadow_b =
            std::max(std::abs(p.x() - 2.5), std::abs(p.y())) <= 0.9;
        if (!shadow_a && !shadow_b) pts.push_back(p);
      }
    }
    ground.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
    for (size_t i = 0; i < pts.size(); ++i)
      ground.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
    append(scene, ground);
  }
  append(scene, cube_surface(Vec3(-2.5, 0, 0.5), 1.0));
  append(scene, cube_surface(Vec3(2.5, 0, 0.5), 1.0));

  const auto segments = extract_segments(scene, SegmentationConfig{});
  REQUIRE(segments.size() == 2);
  std::vector<Vec3> expect = {Vec3(-2.5, 0, 0.5), Vec3(2.5, 0, 0.5)};
  for (const Vec3& e : expect) {
    bool found = false;
    for (const Segment& s : segments)
      if ((s.centroid - e).norm() < 0.05) found = true;
    CHECK(found);
  }
}

TEST_CASE("segment edge cases") {
  PointCloud empty;
  CHECK(extract_segments(empty, SegmentationConfig{}).empty());

  const PointCloud cube = cube_surface(Vec3(0, 0, 2.0), 1.0);
  const auto segs = extract_segments(cube, SegmentationConfig{});
  CHECK(segs.size() == 1);
}

TEST_CASE("plane overlap score basics") {
  const PointCloud patch =
      grid_plane(Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(0, 1, 0), 15, 15);
  const auto planes = extract_planes(patch, SegmentationConfig{});
  REQUIRE(planes.size() == 1);
  const Plane& p = planes[0];

  CHECK(plane_overlap_score(p, patch, p, patch, Pose{}) == 1.0);

  Pose off;
  off.translation = p.normal;  // 1 m along the normal
  CHECK(plane_overlap_score(p, patch, p, patch, off) == 0.0);
}

TEST_CASE("plane overlap score equals the exhaustive check") {
  // Two half-overlapping coplanar patches.
  const PointCloud a =
      grid_plane(Vec3(0, 0, 0.5), Vec3(2, 0, 0), Vec3(0, 2, 0), 21, 21);
  const PointCloud b =
      grid_plane(Vec3(1.03, 0.02, 0.5), Vec3(2, 0, 0), Vec3(0, 2, 0), 21, 21);
  const auto pa = extract_planes(a, SegmentationConfig{});
  const auto pb = extract_planes(b, SegmentationConfig{});
  REQUIRE(pa.size() == 1);
  REQUIRE(pb.size() == 1);

  const double got = plane_overlap_score(pa[0], a, pb[0], b, Pose{});
  const double want =
      brute_overlap_score(pa[0], a, pb[0], b, Pose{}, 0.05, 0.5);
  CHECK(got == want);
  CHECK(got > 0.2);
  CHECK(got < 0.8);
}

TEST_CASE("plane overlap score is rigid invariant") {
  const PointCloud a =
      grid_plane(Vec3(0, 0, 0.5), Vec3(2, 0, 0), Vec3(0, 2, 0), 21, 21);
  const PointCloud b =
      grid_plane(Vec3(0.8, 0.1, 0.5), Vec3(2, 0.1, 0), Vec3(0, 2, 0.1), 21, 21);
  auto pa = extract_planes(a, SegmentationConfig{});
  auto pb = extract_planes(b, SegmentationConfig{});
  REQUIRE(pa.size() == 1);
  REQUIRE(pb.size() == 1);
  Pose t;
  t.rotation = rot_z(0.1);
  t.translation = Vec3(0.05, -0.03, 0.01);
  const double base = plane_overlap_score(pa[0], a, pb[0], b, t);

  Pose g;
  g.rotation = rot_z(1.2) * Eigen::AngleAxisd(0.4, Vec3::UnitX()).toRotationMatrix();
  g.translation = Vec3(3, -2, 1);
  const PointCloud ga = apply(g, a);
  const PointCloud gb = apply(g, b);
  Plane qa = pa[0], qb = pb[0];
  qa.normal = g.rotation * qa.normal;
  qa.centroid = apply_point(g, qa.centroid);
  qb.normal = g.rotation * qb.normal;
  qb.centroid = apply_point(g, qb.centroid);
  const Pose t2 = compose(g, compose(t, invert(g)));
  const double moved = plane_overlap_score(qa, ga, qb, gb, t2);
  CHECK(moved == doctest::Approx(base).epsilon(1e-9));
}
