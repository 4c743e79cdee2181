#pragma once

// Full SLAM pipeline over a scan sequence: keyframe promotion, overlap-
// autotuned ICP odometry against the current reference cloud, loop
// proposal (geometric window + segment descriptors), alignment-risk
// verification gating, and batch graph optimization after every accepted
// loop factor.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "pgslam/geometry.hpp"
#include "pgslam/io.hpp"
#include "pgslam/loop_proposal.hpp"
#include "pgslam/pose_graph.hpp"
#include "pgslam/registration.hpp"
#include "pgslam/segmentation.hpp"
#include "pgslam/simulate.hpp"
#include "pgslam/verification.hpp"

namespace pgslam {

struct PipelineConfig {
  IcpConfig icp;
  SegmentationConfig segmentation;
  LoopConfig loop;
  bool use_geometric = true;
  bool use_descriptor = true;
  bool verify_enabled = true;
  int verify_k = 1;
  double verify_overlap_radius = 0.5;
  double verify_min_match_score = 0.3;
  double verify_max_risk = 0.6;
  double keyframe_dist = 1.0;       // m
  double keyframe_angle_deg = 20.0;
  double map_voxel = 0.1;           // m
  std::uint64_t seed = 1;
};

/// Parses `key = value` lines (# starts a comment) into a PipelineConfig.
/// Unknown keys, unparsable values, and out-of-range values all throw
/// std::invalid_argument naming the offending line or key.
PipelineConfig parse_config(const std::string& text);
PipelineConfig load_config(const std::string& path);

struct RunReport {
  int loops_proposed = 0;
  int loops_accepted = 0;
  int loops_rejected = 0;
  double register_ms = 0.0;
  double segment_ms = 0.0;
  double verify_ms = 0.0;
  double optimize_ms = 0.0;
  bool has_metrics = false;  // set when ground truth was available
  double ate_m = std::numeric_limits<double>::quiet_NaN();
  double rpe_t_m = std::numeric_limits<double>::quiet_NaN();
  double rpe_r_deg = std::numeric_limits<double>::quiet_NaN();
  double drift_pct = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> accepted_risks;   // audit: risk of each accepted loop
  std::vector<double> accepted_alphas;  // alignability per accepted loop; NaN
                                        // when verification was disabled
  std::vector<std::string> warnings;   // registration fallbacks
};

struct SlamResult {
  Trajectory trajectory;  // every scan timestamp, after final optimization
  PointCloud map;
  PoseGraph graph;  // one node per keyframe
  RunReport report;
};

/// Runs the pipeline over the sequence. Needs at least 2 frames.
/// Registration failure against the reference falls back to the raw
/// odometry prior for that stretch with inflated factor noise (logged in
/// report.warnings); the run never aborts. Deterministic for a fixed
/// config and seed.
SlamResult run_slam(const ScanSequence& sequence, const PipelineConfig& cfg);

/// Keyframe clouds transformed by their node estimates, concatenated and
/// voxel-downsampled. clouds[i] belongs to node i. Throws
/// std::invalid_argument on an empty graph or a size mismatch.
PointCloud export_map(const PoseGraph& graph,
                      const std::vector<PointCloud>& keyframe_clouds,
                      double voxel);

}  // namespace pgslam
