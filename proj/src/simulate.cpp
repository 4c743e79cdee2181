#include "pgslam/simulate.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace pgslam {

namespace {

// Distance along the ray to the rectangle, or +inf on a miss.
double ray_rect_distance(const Vec3& origin, const Vec3& dir, const Rect& r,
                         double max_range) {
  const Vec3 n = r.edge_u.cross(r.edge_v);
  const double denom = n.dot(dir);
  if (std::abs(denom) < 1e-12) return std::numeric_limits<double>::infinity();
  const double t = n.dot(r.corner - origin) / denom;
  if (t < 1e-6 || t > max_range) return std::numeric_limits<double>::infinity();
  const Vec3 local = origin + t * dir - r.corner;
  // Coordinates of the hit in the (edge_u, edge_v) basis via the Gram system.
  const double uu = r.edge_u.squaredNorm();
  const double vv = r.edge_v.squaredNorm();
  const double uv = r.edge_u.dot(r.edge_v);
  const double det = uu * vv - uv * uv;
  if (det < 1e-15) return std::numeric_limits<double>::infinity();
  const double lu = local.dot(r.edge_u);
  const double lv = local.dot(r.edge_v);
  const double a = (vv * lu - uv * lv) / det;
  const double b = (uu * lv - uv * lu) / det;
  const double eps = 1e-9;
  if (a < -eps || a > 1.0 + eps || b < -eps || b > 1.0 + eps)
    return std::numeric_limits<double>::infinity();
  return t;
}

}  // namespace

PointCloud simulate_scan(const SyntheticWorld& world, const Pose& sensor_pose,
                         const ScanConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return simulate_scan(world, sensor_pose, cfg, rng);
}

PointCloud simulate_scan(const SyntheticWorld& world, const Pose& sensor_pose,
                         const ScanConfig& cfg, std::mt19937_64& rng) {
  const int num_az =
      std::max(1, static_cast<int>(std::lround(360.0 / cfg.azimuth_step_deg)));
  std::normal_distribution<double> noise(0.0, cfg.range_sigma);
  std::vector<Vec3> pts;
  pts.reserve(static_cast<size_t>(cfg.num_rings) * num_az);

  const Vec3 origin = sensor_pose.translation;
  for (int ring = 0; ring < cfg.num_rings; ++ring) {
    const double zen =
        deg2rad(cfg.zenith_start_deg + ring * cfg.zenith_step_deg);
    const double cz = std::cos(zen), sz = std::sin(zen);
    for (int a = 0; a < num_az; ++a) {
      const double az = deg2rad(a * cfg.azimuth_step_deg);
      const Vec3 dir_sensor(cz * std::cos(az), cz * std::sin(az), sz);
      const Vec3 dir_world = sensor_pose.rotation * dir_sensor;
      double best = std::numeric_limits<double>::infinity();
      for (const Rect& r : world.rects) {
        const double t = ray_rect_distance(origin, dir_world, r, cfg.max_range);
        if (t < best) best = t;
      }
      if (!std::isfinite(best)) continue;
      const double range =
          cfg.range_sigma > 0.0 ? best + noise(rng) : best;
      pts.push_back(dir_sensor * range);
    }
  }

  PointCloud cloud;
  cloud.frame_id = "sensor";
  cloud.points.resize(static_cast<Eigen::Index>(pts.size()), 3);
  for (size_t i = 0; i < pts.size(); ++i)
    cloud.points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return cloud;
}

ScanSequence simulate_sequence(const SyntheticWorld& world,
                               const std::vector<Pose>& gt_poses,
                               double drift_rate, const ScanConfig& cfg) {
  if (drift_rate < 0.0)
    throw std::invalid_argument("simulate_sequence: drift_rate must be >= 0");

  // Independent streams so scan noise and drift noise do not interleave.
  std::mt19937_64 scan_rng(cfg.seed);
  std::mt19937_64 drift_rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> unit_gauss(0.0, 1.0);

  Vec3 bias_dir = Vec3::Zero();
  if (drift_rate > 0.0) {
    std::uniform_real_distribution<double> angle(0.0, 2.0 * kPi);
    const double th = angle(drift_rng);
    bias_dir = Vec3(std::cos(th), std::sin(th), 0.0);
  }
  const double yaw_sigma_sq = std::pow(deg2rad(0.1), 2);  // per meter
  const double var_floor_t = 1e-6;
  const double var_floor_r = 1e-8;

  ScanSequence seq;
  seq.frames.resize(gt_poses.size());
  seq.ground_truth.resize(gt_poses.size());

  Pose odom;
  double cum_dist = 0.0;
  double var_z = 0.0;
  for (size_t i = 0; i < gt_poses.size(); ++i) {
    if (i == 0) {
      odom = gt_poses[0];
    } else {
      const Pose rel = compose(invert(gt_poses[i - 1]), gt_poses[i]);
      const double dd = rel.translation.norm();
      cum_dist += dd;
      Pose rel_noisy = rel;
      Vec3 world_bias = Vec3::Zero();
      if (drift_rate > 0.0 && dd > 0.0) {
        const double sigma_t = drift_rate * dd;
        rel_noisy.translation += sigma_t * Vec3(unit_gauss(drift_rng),
                                                unit_gauss(drift_rng),
                                                unit_gauss(drift_rng));
        const double yaw = std::sqrt(yaw_sigma_sq * dd) * unit_gauss(drift_rng);
        rel_noisy.rotation = rel.rotation * rot_z(yaw);
        world_bias = bias_dir * (drift_rate * dd);
        var_z += sigma_t * sigma_t;
      }
      odom = compose(odom, rel_noisy);
      odom.translation += world_bias;
    }

    ScanFrame& f = seq.frames[i];
    f.timestamp = static_cast<double>(i) * cfg.scan_period;
    f.cloud = simulate_scan(world, gt_poses[i], cfg, scan_rng);
    f.cloud.timestamp = f.timestamp;
    f.odom_prior = odom;

    const double horiz = drift_rate * cum_dist;
    Vec6 diag;
    diag << horiz * horiz + var_z + var_floor_t,
        horiz * horiz + var_z + var_floor_t, var_z + var_floor_t, var_floor_r,
        var_floor_r, yaw_sigma_sq * cum_dist + var_floor_r;
    f.odom_covariance = diag.asDiagonal();

    seq.ground_truth[i] = {f.timestamp, gt_poses[i]};
  }
  return seq;
}

SyntheticWorld make_room_world(double size_x, double size_y, double height) {
  const double hx = size_x / 2.0, hy = size_y / 2.0;
  SyntheticWorld w;
  w.has_ground = true;
  const Vec3 ex = Vec3::UnitX() * size_x;
  const Vec3 ey = Vec3::UnitY() * size_y;
  const Vec3 ez = Vec3::UnitZ() * height;
  w.rects.push_back({Vec3(-hx, -hy, 0), ex, ey});            // floor
  w.rects.push_back({Vec3(-hx, -hy, height), ey, ex});       // ceiling
  w.rects.push_back({Vec3(-hx, -hy, 0), ex, ez});            // wall y=-hy
  w.rects.push_back({Vec3(-hx, hy, 0), ez, ex});             // wall y=+hy
  w.rects.push_back({Vec3(-hx, -hy, 0), ez, ey});            // wall x=-hx
  w.rects.push_back({Vec3(hx, -hy, 0), ey, ez});             // wall x=+hx
  return w;
}

SyntheticWorld make_corridor_world(double length, double width, double height) {
  const double hl = length / 2.0, hw = width / 2.0;
  SyntheticWorld w;
  w.has_ground = true;
  const Vec3 ex = Vec3::UnitX() * length;
  const Vec3 ey = Vec3::UnitY() * width;
  const Vec3 ez = Vec3::UnitZ() * height;
  w.rects.push_back({Vec3(-hl, -hw, 0), ex, ey});            // floor
  w.rects.push_back({Vec3(-hl, -hw, height), ey, ex});       // ceiling
  w.rects.push_back({Vec3(-hl, -hw, 0), ex, ez});            // wall y=-hw
  w.rects.push_back({Vec3(-hl, hw, 0), ez, ex});             // wall y=+hw
  return w;  // open ends: nothing constrains x
}

void add_box(SyntheticWorld& world, const Vec3& center_bottom, double size_x,
             double size_y, double height) {
  const double hx = size_x / 2.0, hy = size_y / 2.0;
  const Vec3 c = center_bottom;
  const Vec3 ex = Vec3::UnitX() * size_x;
  const Vec3 ey = Vec3::UnitY() * size_y;
  const Vec3 ez = Vec3::UnitZ() * height;
  world.rects.push_back({c + Vec3(-hx, -hy, 0), ex, ez});           // y=-hy
  world.rects.push_back({c + Vec3(-hx, hy, 0), ez, ex});            // y=+hy
  world.rects.push_back({c + Vec3(-hx, -hy, 0), ez, ey});           // x=-hx
  world.rects.push_back({c + Vec3(hx, -hy, 0), ey, ez});            // x=+hx
  world.rects.push_back({c + Vec3(-hx, -hy, height), ex, ey});      // top
}

namespace {

Pose pose_at(const Vec3& position, double yaw) {
  Pose p;
  p.rotation = rot_z(yaw);
  p.translation = position;
  return p;
}

// In-place turn from yaw_from toward yaw_from + delta in 30 degree steps.
void append_turn(std::vector<Pose>& path, const Vec3& position,
                 double yaw_from, double delta) {
  const double step = deg2rad(30.0) * (delta >= 0 ? 1.0 : -1.0);
  const int n = static_cast<int>(std::ceil(std::abs(delta) / std::abs(step)));
  for (int i = 1; i <= n; ++i) {
    const double yaw =
        yaw_from + ((i == n) ? delta : step * static_cast<double>(i));
    path.push_back(pose_at(position, yaw));
  }
}

}  // namespace

std::vector<Pose> straight_path(double length, double step, double height) {
  std::vector<Pose> path;
  const int n = static_cast<int>(std::floor(length / step));
  for (int i = 0; i <= n; ++i)
    path.push_back(pose_at(Vec3(i * step, 0, height), 0.0));
  return path;
}

std::vector<Pose> square_loop_path(double side, double step, double height) {
  const double h = side / 2.0;
  const Vec3 corners[4] = {Vec3(-h, -h, height), Vec3(h, -h, height),
                           Vec3(h, h, height), Vec3(-h, h, height)};
  std::vector<Pose> path;
  double yaw = 0.0;
  path.push_back(pose_at(corners[0], yaw));
  for (int leg = 0; leg < 4; ++leg) {
    const Vec3& from = corners[leg];
    const Vec3& to = corners[(leg + 1) % 4];
    const Vec3 dir = (to - from).normalized();
    const int n = static_cast<int>(std::round((to - from).norm() / step));
    for (int i = 1; i <= n; ++i)
      path.push_back(pose_at(from + dir * (i * step), yaw));
    if (leg < 3) {
      append_turn(path, to, yaw, kPi / 2.0);
      yaw += kPi / 2.0;
    }
  }
  return path;
}

std::vector<Pose> two_pass_path(double length, double step,
                                double lateral_offset, double height) {
  std::vector<Pose> path;
  const double hx = length / 2.0;
  const int n = static_cast<int>(std::round(length / step));
  for (int i = 0; i <= n; ++i)
    path.push_back(pose_at(Vec3(-hx + i * step, 0, height), 0.0));
  append_turn(path, Vec3(hx, 0, height), 0.0, kPi);
  // Sidestep onto the return line, then run it in reverse heading.
  if (lateral_offset != 0.0) {
    const int m = std::max(1, static_cast<int>(std::round(lateral_offset / step)));
    for (int i = 1; i <= m; ++i)
      path.push_back(
          pose_at(Vec3(hx, lateral_offset * i / m, height), kPi));
  }
  for (int i = 1; i <= n; ++i)
    path.push_back(pose_at(Vec3(hx - i * step, lateral_offset, height), kPi));
  return path;
}

Scenario make_scenario(const std::string& name) {
  Scenario s;
  if (name == "room") {
    s.world = make_room_world(12.0, 10.0, 3.0);
    add_box(s.world, Vec3(-3.5, -2.5, 0), 1.5, 1.0, 2.0);
    add_box(s.world, Vec3(3.5, 3.0, 0), 1.0, 1.8, 2.4);
    add_box(s.world, Vec3(3.0, -3.0, 0), 0.8, 0.8, 1.6);
    s.path = square_loop_path(5.0, 0.25);
    s.scan.azimuth_step_deg = 1.0;
  } else if (name == "corridor") {
    s.world = make_corridor_world(40.0, 4.0, 3.0);
    s.path = two_pass_path(32.0, 0.5, 0.0);
    for (Pose& p : s.path) p.translation.x() -= 16.0;  // center on the corridor
    s.scan.azimuth_step_deg = 1.0;
  } else if (name == "loop") {
    s.world = make_room_world(36.0, 36.0, 4.0);
    add_box(s.world, Vec3(0, 0, 0), 2.0, 1.4, 3.0);
    add_box(s.world, Vec3(-8.0, -9.0, 0), 1.6, 1.6, 2.2);
    add_box(s.world, Vec3(9.0, -8.0, 0), 1.2, 2.2, 2.8);
    add_box(s.world, Vec3(8.5, 8.5, 0), 2.4, 1.2, 2.0);
    add_box(s.world, Vec3(-9.0, 8.0, 0), 1.4, 1.4, 3.2);
    add_box(s.world, Vec3(-15.5, 0.5, 0), 1.8, 1.2, 2.6);
    add_box(s.world, Vec3(15.5, 1.0, 0), 1.2, 1.8, 2.4);
    add_box(s.world, Vec3(0.5, -15.5, 0), 2.0, 1.0, 2.2);
    add_box(s.world, Vec3(-0.5, 15.5, 0), 1.0, 2.0, 3.0);
    s.path = square_loop_path(26.0, 0.5);
    s.scan.azimuth_step_deg = 2.0;
  } else if (name == "two-pass") {
    s.world = make_room_world(46.0, 24.0, 4.0);
    const double xs[6] = {-15.0, -9.0, -3.0, 3.0, 9.0, 15.0};
    const double sx[6] = {1.6, 1.2, 2.2, 1.0, 1.8, 1.4};
    const double sy[6] = {1.2, 2.0, 1.0, 1.6, 1.2, 2.2};
    const double hz[6] = {2.6, 2.0, 3.0, 2.4, 2.8, 2.2};
    for (int i = 0; i < 6; ++i) {
      const double y = (i % 2 == 0) ? 6.0 : -6.5;
      add_box(s.world, Vec3(xs[i], y + 0.3 * i, 0), sx[i], sy[i], hz[i]);
    }
    s.path = two_pass_path(28.0, 0.5, 3.0);
    s.scan.azimuth_step_deg = 1.5;
  } else {
    throw std::invalid_argument("make_scenario: unknown world '" + name + "'");
  }
  return s;
}

}  // namespace pgslam
