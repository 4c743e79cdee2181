#pragma once

// Trajectory accuracy metrics over timestamp-associated pose pairs: ATE
// after rigid alignment, relative pose error over a fixed step, and drift
// as a percentage of distance traveled.

#include <cstddef>
#include <utility>
#include <vector>

#include "pgslam/io.hpp"

namespace pgslam {

/// Greedy nearest-timestamp pairing: candidate pairs within max_dt are
/// taken in order of increasing |dt|, each pose used at most once. Returns
/// (est index, gt index) pairs sorted by est index. Throws
/// std::runtime_error when no pair qualifies.
std::vector<std::pair<size_t, size_t>> associate(const Trajectory& est,
                                                 const Trajectory& gt,
                                                 double max_dt = 0.05);

/// RMSE of point distances after rigid no-scale alignment of the
/// associated est positions onto gt. Throws when fewer than 2 pairs
/// associate.
double ate(const Trajectory& est, const Trajectory& gt, double max_dt = 0.05);

struct RpeResult {
  double trans_rmse = 0.0;
  double rot_rmse_deg = 0.0;  // NaN when the ground truth carries no rotation
  bool has_rotation = true;
};

/// Relative pose error over a window of `delta` associated pairs: for each
/// i the error is (gt_i^-1 gt_{i+d})^-1 (est_i^-1 est_{i+d}); RMSE of the
/// translation norms and rotation angles. Ground truth with identity
/// rotations throughout is treated as position-only and the rotational
/// component is skipped. Throws when fewer than delta+1 pairs associate.
RpeResult rpe(const Trajectory& est, const Trajectory& gt, int delta,
              double max_dt = 0.05);

/// Same error, but the window for each i is the smallest j whose ground
/// truth path distance from i reaches `meters`.
RpeResult rpe_distance(const Trajectory& est, const Trajectory& gt,
                       double meters, double max_dt = 0.05);

/// 100 * final-position error / ground-truth path length, after aligning
/// the first associated pose only. Position-only ground truth aligns the
/// starting position without touching the heading. Throws on zero path
/// length.
double drift_percent(const Trajectory& est, const Trajectory& gt,
                     double max_dt = 0.05);

}  // namespace pgslam
