#pragma once

// Synthetic LiDAR scan generation over planar-rectangle worlds, with a
// drifting odometry model for end-to-end experiments.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "pgslam/geometry.hpp"
#include "pgslam/io.hpp"

namespace pgslam {

/// Finite planar rectangle: corner plus two independent edge vectors.
struct Rect {
  Vec3 corner = Vec3::Zero();
  Vec3 edge_u = Vec3::UnitX();
  Vec3 edge_v = Vec3::UnitY();

  /// Unit normal (right-hand rule over edge_u, edge_v).
  Vec3 normal() const { return edge_u.cross(edge_v).normalized(); }
};

struct SyntheticWorld {
  std::vector<Rect> rects;
  bool has_ground = false;
};

/// Spinning-lidar ray pattern: rings at fixed elevations, uniform azimuth.
struct ScanConfig {
  int num_rings = 16;
  double zenith_start_deg = -15.0;
  double zenith_step_deg = 2.0;
  double azimuth_step_deg = 1.0;
  double max_range = 100.0;
  double range_sigma = 0.03;  // Gaussian noise along the ray, meters
  double scan_period = 0.1;   // seconds between scans in a sequence
  std::uint64_t seed = 1;
};

/// One frame of a recorded or simulated sequence.
struct ScanFrame {
  double timestamp = 0.0;
  PointCloud cloud;
  Pose odom_prior;
  Covariance6 odom_covariance = Covariance6::Identity();
};

struct ScanSequence {
  std::vector<ScanFrame> frames;
  Trajectory ground_truth;  // same length and timestamps as frames
};

/// Casts the ring/azimuth ray pattern from sensor_pose and returns the
/// nearest rectangle hits in the sensor frame. Empty cloud if nothing is in
/// range. Uses cfg.seed for range noise.
PointCloud simulate_scan(const SyntheticWorld& world, const Pose& sensor_pose,
                         const ScanConfig& cfg);

/// Same, drawing range noise from an external generator (one draw per hit;
/// no draws when range_sigma == 0).
PointCloud simulate_scan(const SyntheticWorld& world, const Pose& sensor_pose,
                         const ScanConfig& cfg, std::mt19937_64& rng);

/// Simulates scans along gt_poses and produces drifting odometry priors.
/// Per step of length d the prior accrues N(0, (drift_rate*d)^2) translation
/// noise per axis, a fixed seeded horizontal bias direction of magnitude
/// drift_rate*d (so the expected cumulative error is drift_rate times the
/// distance traveled for any path shape), and yaw noise of variance
/// (0.1 deg)^2 * d. drift_rate == 0 yields priors equal to ground truth.
/// Reported covariances are diagonal and grow with distance accordingly.
ScanSequence simulate_sequence(const SyntheticWorld& world,
                               const std::vector<Pose>& gt_poses,
                               double drift_rate, const ScanConfig& cfg);

// World builders. Boxes sit on the floor; their undersides are omitted.
SyntheticWorld make_room_world(double size_x = 10.0, double size_y = 10.0,
                               double height = 3.0);
SyntheticWorld make_corridor_world(double length = 40.0, double width = 4.0,
                                   double height = 3.0);
void add_box(SyntheticWorld& world, const Vec3& center_bottom, double size_x,
             double size_y, double height);

// Path builders. Poses face the direction of travel; turns are taken in
// place in 30 degree increments so successive scans stay easy to register.
std::vector<Pose> straight_path(double length, double step,
                                double height = 1.0);
std::vector<Pose> square_loop_path(double side, double step,
                                   double height = 1.0);
/// Out along +x at y=0, 180 degree turn, back along -x at y=lateral_offset.
std::vector<Pose> two_pass_path(double length, double step,
                                double lateral_offset, double height = 1.0);

/// Named end-to-end scenario: world, ground-truth path, scan pattern.
struct Scenario {
  SyntheticWorld world;
  std::vector<Pose> path;
  ScanConfig scan;
};

/// Builds one of "room", "corridor", "loop", "two-pass".
/// Throws std::invalid_argument for other names.
Scenario make_scenario(const std::string& name);

}  // namespace pgslam
