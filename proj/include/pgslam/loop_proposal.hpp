#pragma once

// Loop-closure candidate generation: covariance-windowed geometric search
// over historical keyframes, plus segment-descriptor matching with robust
// rigid-transform estimation.

#include <cstdint>
#include <utility>
#include <vector>

#include "pgslam/geometry.hpp"
#include "pgslam/segmentation.hpp"

namespace pgslam {

struct LoopConfig {
  double base_radius = 3.0;  // meters added before the covariance term
  int min_node_gap = 10;     // candidates must be at least this many nodes old
  int max_candidates = 3;
  double desc_thresh = 0.35;  // max descriptor l2 distance for a match
  double inlier_dist = 0.5;   // RANSAC residual bound, meters
  int min_inliers = 4;
};

/// Rigid-invariant segment signature: 7 eigenvalue shape features, a
/// 3x3x3 occupancy histogram over folded (absolute) eigenvector-aligned
/// coordinates, and a 30-bin radial histogram; l2-normalized.
using SegmentDescriptor = Eigen::Matrix<double, 64, 1>;

enum class CandidateSource { kGeometric, kDescriptor };

struct LoopCandidate {
  int query_node = -1;
  int match_node = -1;  // older than query_node by at least min_node_gap
  Pose init_transform;  // maps the query keyframe frame into the match frame
  CandidateSource source = CandidateSource::kGeometric;
  double support = 0.0;  // window margin (geometric) or inlier count
};

/// Map-frame segment centroids with their descriptors, grouped by the
/// keyframe node that observed them. Rebuilt from the node poses after
/// every graph optimization, never in between.
struct SegmentMap {
  struct Entry {
    int node = -1;
    Vec3 centroid = Vec3::Zero();  // map frame
    SegmentDescriptor descriptor = SegmentDescriptor::Zero();
  };
  std::vector<Entry> entries;
};

struct SegmentMatch {
  Eigen::Index query = -1;  // index into the query descriptor list
  Eigen::Index entry = -1;  // index into SegmentMap::entries
  double distance = 0.0;    // descriptor l2 distance
};

struct TransformEstimate {
  Pose transform;  // maps query centroids onto map centroids
  std::vector<Eigen::Index> inliers;  // correspondence indices, ascending
  bool valid = false;
};

/// Historical nodes within radius base_radius + 3*sqrt(max translational
/// covariance eigenvalue) of the current position, at least min_node_gap
/// nodes older, nearest first, at most max_candidates. init_transform is
/// the relative pose history[i]^-1 * current_pose; support is the window
/// margin r - distance.
std::vector<LoopCandidate> geometric_candidates(
    int current_node, const Pose& current_pose, const Covariance6& current_cov,
    const std::vector<Pose>& history, const LoopConfig& cfg);

/// Shape signature of one segment. Throws std::invalid_argument when the
/// point scatter is collinear (eigenvector frame undefined). Coordinates
/// are folded to absolute values per eigen-axis, so the descriptor is
/// invariant to rigid motion including the eigenvector sign ambiguity.
SegmentDescriptor describe_segment(const Segment& segment);

/// Nearest-map-descriptor match per query, kept when the distance beats
/// desc_thresh and the ratio test (ratio < 0.8) against the nearest entry
/// whose centroid lies more than 2 m from the winner's. Entries within
/// that radius are re-observations of the same segment from other
/// keyframes, not rival places, so they never veto a match; the test is
/// vacuous when no rival exists. Empty inputs give an empty result.
std::vector<SegmentMatch> match_segments(
    const std::vector<SegmentDescriptor>& queries, const SegmentMap& map,
    const LoopConfig& cfg);

/// RANSAC rigid alignment of query centroids onto map centroids:
/// 3-correspondence minimal samples, closed-form no-scale fit, adaptive
/// iteration count at 0.99 confidence capped at 1000, refit over the
/// inlier set. valid=false when no model reaches min_inliers. Throws
/// std::invalid_argument on fewer than 3 correspondences. Deterministic
/// for a fixed seed.
TransformEstimate estimate_transform(
    const std::vector<std::pair<Vec3, Vec3>>& correspondences,
    const LoopConfig& cfg, uint64_t seed);

/// Full descriptor path: match query segments against map entries old
/// enough to close a loop, estimate one rigid query-to-map transform over
/// all matched centroid pairs, and emit at most one candidate whose
/// match_node is the node most inlier observations came from (ties go to
/// the oldest). init_transform is node_poses[match]^-1 * estimated
/// map-frame pose of the query keyframe; support is the inlier count.
std::vector<LoopCandidate> descriptor_candidates(
    int query_node, const std::vector<SegmentDescriptor>& query_descriptors,
    const std::vector<Vec3>& query_centroids, const SegmentMap& map,
    const std::vector<Pose>& node_poses, const LoopConfig& cfg, uint64_t seed);

}  // namespace pgslam
