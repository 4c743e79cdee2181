#pragma once

// Alignment-risk prediction for a candidate registration between two
// clouds: match planar patches, stack the matched normals, and score how
// well the pair constrains a rigid alignment.

#include <limits>
#include <vector>

#include "pgslam/geometry.hpp"
#include "pgslam/segmentation.hpp"

namespace pgslam {

struct VerificationConfig {
  SegmentationConfig segmentation;
  double overlap_radius = 0.5;   // proximity radius for omega and plane scores
  double min_match_score = 0.3;  // plane-overlap score admitting a match
  double max_risk = 0.6;         // acceptance threshold applied by callers
};

struct PlaneMatch {
  Eigen::Index query = -1;   // plane index in the query (target) cloud
  Eigen::Index source = -1;  // matched plane index in the source cloud
  double score = 0.0;
};

/// Verdict on a proposed registration. normal_matrix stacks the matched
/// query-plane normals (unit rows, match order); alpha is the eigenvalue
/// spread of its Gram matrix, +infinity when rank deficient.
struct AlignabilityReport {
  bool verifiable = false;          // false when either cloud has no planes
  std::vector<PlaneMatch> matches;  // descending score, ties by query index
  Eigen::Matrix<double, Eigen::Dynamic, 3> normal_matrix;
  double alpha = std::numeric_limits<double>::infinity();
  double omega = 0.0;
  double risk = 1.0;
  double elapsed = 0.0;  // seconds spent inside the call
};

/// lambda_max / lambda_min of N^T N. Returns the +infinity sentinel when
/// lambda_min < 1e-12 * lambda_max, so degenerate geometry stays loud.
/// Throws std::invalid_argument on an empty matrix.
double alignability(const Eigen::Matrix<double, Eigen::Dynamic, 3>& normals);

/// rho = 1 - omega / (1 + max(0, log10(alpha))), clamped to [0,1];
/// rho = 1 when alpha is +infinity. Monotone: non-increasing in omega,
/// non-decreasing in alpha.
double risk(double omega, double alpha);

/// Segments both clouds into planes, maps each query-plane centroid into
/// the source frame via source_pose^-1 * target_pose, and matches it
/// against the k source planes with nearest centroids, keeping the best
/// plane-overlap score per query. Scores above cfg.min_match_score
/// contribute the query normal to the stacked matrix. k >= 1. Omega is
/// estimated over evenly strided subsamples capped at 4096 points per
/// cloud, so dense clouds do not inflate the verification cost.
AlignabilityReport predict_alignment_risk(const PointCloud& source,
                                          const PointCloud& target,
                                          const Pose& source_pose,
                                          const Pose& target_pose, int k = 1,
                                          const VerificationConfig& cfg = {});

/// Same contract with pre-extracted planes, for callers that cache
/// segmentations across many candidate checks.
AlignabilityReport predict_alignment_risk(
    const PointCloud& source, const std::vector<Plane>& source_planes,
    const PointCloud& target, const std::vector<Plane>& target_planes,
    const Pose& source_pose, const Pose& target_pose, int k = 1,
    const VerificationConfig& cfg = {});

/// Oracle variant scoring every (source, query) plane pair instead of
/// k-d tree candidates. Output contract identical to
/// predict_alignment_risk; with k equal to the source plane count the two
/// agree exactly.
AlignabilityReport brute_force_risk(const PointCloud& source,
                                    const PointCloud& target,
                                    const Pose& source_pose,
                                    const Pose& target_pose,
                                    const VerificationConfig& cfg = {});

AlignabilityReport brute_force_risk(const PointCloud& source,
                                    const std::vector<Plane>& source_planes,
                                    const PointCloud& target,
                                    const std::vector<Plane>& target_planes,
                                    const Pose& source_pose,
                                    const Pose& target_pose,
                                    const VerificationConfig& cfg = {});

}  // namespace pgslam
