#pragma once

// Trimmed point-to-plane ICP whose outlier trim ratio is autotuned from the
// measured cloud overlap.

#include "pgslam/geometry.hpp"
#include "pgslam/kdtree.hpp"

namespace pgslam {

struct IcpConfig {
  int max_iterations = 60;
  double overlap_radius = 0.5;   // correspondence radius for the overlap estimate
  double min_overlap = 0.2;      // below this the pair is flagged unregistrable
  double voxel_size = 0.1;       // reference downsampling; 0 disables
  int min_points = 100;
  double convergence_twist_norm = 1e-6;
  int normal_knn = 20;
  int overlap_refresh = 5;       // iterations between overlap re-estimates
};

struct RegistrationResult {
  Pose delta;                    // maps reading into the reference frame
  double overlap = 0.0;          // final measured overlap in [0,1]
  double inlier_rmse = 0.0;      // point-to-plane RMSE over the robust inliers
  int iterations = 0;
  bool converged = false;
};

/// Grid filter: one centroid per occupied voxel, voxels ordered by first
/// appearance so output order is deterministic. voxel <= 0 returns the input.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

/// Per-point normals from PCA over the k nearest neighbors (sign arbitrary).
Eigen::Matrix<double, Eigen::Dynamic, 3> estimate_normals(const PointCloud& cloud,
                                                          const KdTree3& tree,
                                                          int knn);

/// Downsampled reference cloud with its search tree and normals, built once
/// per keyframe and reused across registrations.
struct PreparedReference {
  PointCloud cloud;
  KdTree3 tree;
  Eigen::Matrix<double, Eigen::Dynamic, 3> normals;
};

PreparedReference prepare_reference(const PointCloud& reference,
                                    const IcpConfig& cfg);

/// Symmetric overlap: mean of the fraction of transformed reading points with
/// a reference neighbor within radius and the fraction of reference points
/// with a transformed-reading neighbor within radius. T maps reading into the
/// reference frame. Throws std::invalid_argument on an empty cloud.
double compute_overlap(const PointCloud& reading, const PointCloud& reference,
                       const Pose& t, double radius);

/// Tree-reusing form: `reading_tree` indexes the untransformed reading and
/// `reference_tree` the reference.
double compute_overlap(const PointCloud& reading, const KdTree3& reading_tree,
                       const PointCloud& reference,
                       const KdTree3& reference_tree, const Pose& t,
                       double radius);

RegistrationResult icp_register(const PointCloud& reading,
                                const PointCloud& reference, const Pose& init,
                                const IcpConfig& cfg);

RegistrationResult icp_register(const PointCloud& reading,
                                const PreparedReference& reference,
                                const Pose& init, const IcpConfig& cfg);

}  // namespace pgslam
