#pragma once

#include <string>
#include <vector>

#include "pgslam/geometry.hpp"

namespace pgslam {

struct StampedPose {
  double t = 0.0;
  Pose pose;
};
using Trajectory = std::vector<StampedPose>;

/// Loads an ASCII PLY (float x/y/z vertex properties) or whitespace-separated
/// XYZ text file, chosen by content. Malformed headers, non-finite values and
/// vertex-count mismatches raise distinct errors.
PointCloud load_cloud(const std::string& path);

void save_cloud_ply(const std::string& path, const PointCloud& cloud);

/// TUM format: `timestamp tx ty tz qx qy qz qw`, `#` comments.
/// Quaternions off unit norm by more than 1e-3 are rejected; smaller
/// deviations are renormalized.
Trajectory load_trajectory(const std::string& path);

/// Writes 9-decimal fixed point so a save/load round trip stays within 1e-9.
void save_trajectory(const std::string& path, const Trajectory& traj);

}  // namespace pgslam
