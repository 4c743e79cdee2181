#pragma once

// Planar-patch extraction (region growing) and Euclidean object segments.

#include <vector>

#include "pgslam/geometry.hpp"
#include "pgslam/kdtree.hpp"

namespace pgslam {

struct SegmentationConfig {
  double angle_thresh_deg = 10.0;    // normal agreement for region growing
  double plane_inlier_dist = 0.05;   // max point-to-plane distance, meters
  int min_plane_points = 30;
  double cluster_dist = 0.3;         // single-linkage threshold, meters
  int min_segment_points = 50;
  int normal_knn = 10;
  double ground_max_tilt_deg = 15.0;  // ground = largest plane near +z
};

/// Planar patch with its supporting points. The centroid doubles as the
/// patch keypoint.
struct Plane {
  Vec3 normal = Vec3::UnitZ();      // unit length, faces the sensor origin
  Vec3 centroid = Vec3::Zero();
  std::vector<Eigen::Index> member_indices;
  double fit_rmse = 0.0;
};

/// Euclidean cluster of points, broadly one physical object.
struct Segment {
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;
  Vec3 centroid = Vec3::Zero();
};

/// Region growing over k-NN neighborhoods seeded at the lowest-curvature
/// points. A point joins a region when its normal deviates less than
/// angle_thresh from the region normal and it lies within plane_inlier_dist
/// of the region plane. Regions are refit by PCA; normals face the origin.
/// Deterministic for fixed input and config.
std::vector<Plane> extract_planes(const PointCloud& cloud,
                                  const SegmentationConfig& cfg);

/// Removes the dominant ground plane (largest extracted plane whose normal
/// is within ground_max_tilt of +-z), then single-linkage clusters the rest
/// at cluster_dist. Clusters under min_segment_points are dropped.
std::vector<Segment> extract_segments(const PointCloud& cloud,
                                      const SegmentationConfig& cfg);

/// Matching score of plane pt (with its source cloud) against plane ps:
/// the fraction of pt's member points, mapped by t, that lie within
/// plane_inlier_dist of ps's plane and within overlap_radius of some member
/// point of ps. Returns a value in [0,1]. ps_members_tree indexes exactly
/// ps's member points.
double plane_overlap_score(const Plane& ps, const KdTree3& ps_members_tree,
                           const Plane& pt, const PointCloud& pt_cloud,
                           const Pose& t, double plane_inlier_dist,
                           double overlap_radius);

/// Convenience form that builds the member tree on the fly.
double plane_overlap_score(const Plane& ps, const PointCloud& ps_cloud,
                           const Plane& pt, const PointCloud& pt_cloud,
                           const Pose& t, double plane_inlier_dist = 0.05,
                           double overlap_radius = 0.5);

/// Members of `plane` as an M x 3 block.
Eigen::Matrix<double, Eigen::Dynamic, 3> plane_member_points(
    const Plane& plane, const PointCloud& cloud);

}  // namespace pgslam
