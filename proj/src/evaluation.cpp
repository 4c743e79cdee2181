#include "pgslam/evaluation.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <tuple>

#include "pgslam/geometry.hpp"

namespace pgslam {

namespace {

using Pairs = std::vector<std::pair<size_t, size_t>>;

bool rotation_free(const Trajectory& gt) {
  for (const auto& sp : gt) {
    if ((sp.pose.rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > 1e-12) {
      return false;
    }
  }
  return true;
}

Pairs associated_or_throw(const Trajectory& est, const Trajectory& gt,
                          double max_dt, size_t min_pairs, const char* what) {
  const Pairs pairs = associate(est, gt, max_dt);
  if (pairs.size() < min_pairs) {
    throw std::runtime_error(std::string(what) + ": need at least " +
                             std::to_string(min_pairs) +
                             " associated pairs, got " +
                             std::to_string(pairs.size()));
  }
  return pairs;
}

RpeResult rpe_over_windows(const Trajectory& est, const Trajectory& gt,
                           const Pairs& pairs,
                           const std::vector<size_t>& window_end) {
  const bool with_rotation = !rotation_free(gt);
  double sq_t = 0.0;
  double sq_r = 0.0;
  size_t count = 0;
  for (size_t i = 0; i < window_end.size(); ++i) {
    const size_t j = window_end[i];
    if (j >= pairs.size()) continue;
    const Pose& est_i = est[pairs[i].first].pose;
    const Pose& est_j = est[pairs[j].first].pose;
    const Pose& gt_i = gt[pairs[i].second].pose;
    const Pose& gt_j = gt[pairs[j].second].pose;
    const Pose error = compose(invert(compose(invert(gt_i), gt_j)),
                               compose(invert(est_i), est_j));
    sq_t += error.translation.squaredNorm();
    if (with_rotation) {
      const double a = rotation_angle(error.rotation);
      sq_r += a * a;
    }
    ++count;
  }
  if (count == 0) {
    throw std::runtime_error("rpe: trajectory shorter than the window");
  }
  RpeResult out;
  out.trans_rmse = std::sqrt(sq_t / static_cast<double>(count));
  out.has_rotation = with_rotation;
  out.rot_rmse_deg =
      with_rotation ? rad2deg(std::sqrt(sq_r / static_cast<double>(count)))
                    : std::numeric_limits<double>::quiet_NaN();
  return out;
}

}  // namespace

std::vector<std::pair<size_t, size_t>> associate(const Trajectory& est,
                                                 const Trajectory& gt,
                                                 double max_dt) {
  if (est.empty() || gt.empty()) {
    throw std::runtime_error("associate: empty trajectory");
  }
  std::vector<std::tuple<double, size_t, size_t>> candidates;
  for (size_t i = 0; i < est.size(); ++i) {
    for (size_t j = 0; j < gt.size(); ++j) {
      const double dt = std::abs(est[i].t - gt[j].t);
      if (dt <= max_dt) candidates.emplace_back(dt, i, j);
    }
  }
  std::sort(candidates.begin(), candidates.end());
  std::vector<bool> est_used(est.size(), false), gt_used(gt.size(), false);
  Pairs pairs;
  for (const auto& [dt, i, j] : candidates) {
    if (est_used[i] || gt_used[j]) continue;
    est_used[i] = true;
    gt_used[j] = true;
    pairs.emplace_back(i, j);
  }
  if (pairs.empty()) {
    throw std::runtime_error("associate: no timestamp pairs within max_dt");
  }
  std::sort(pairs.begin(), pairs.end());
  return pairs;
}

double ate(const Trajectory& est, const Trajectory& gt, double max_dt) {
  const Pairs pairs = associated_or_throw(est, gt, max_dt, 2, "ate");
  const Eigen::Index n = static_cast<Eigen::Index>(pairs.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    src.col(k) = est[pairs[static_cast<size_t>(k)].first].pose.translation;
    dst.col(k) = gt[pairs[static_cast<size_t>(k)].second].pose.translation;
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
  const Eigen::Matrix3Xd aligned =
      (t.topLeftCorner<3, 3>() * src).colwise() + t.topRightCorner<3, 1>();
  return std::sqrt((aligned - dst).colwise().squaredNorm().mean());
}

RpeResult rpe(const Trajectory& est, const Trajectory& gt, int delta,
              double max_dt) {
  if (delta < 1) throw std::invalid_argument("rpe: delta must be positive");
  const Pairs pairs = associated_or_throw(
      est, gt, max_dt, static_cast<size_t>(delta) + 1, "rpe");
  std::vector<size_t> window_end(pairs.size());
  for (size_t i = 0; i < pairs.size(); ++i) {
    window_end[i] = i + static_cast<size_t>(delta);
  }
  return rpe_over_windows(est, gt, pairs, window_end);
}

RpeResult rpe_distance(const Trajectory& est, const Trajectory& gt,
                       double meters, double max_dt) {
  if (!(meters > 0.0)) {
    throw std::invalid_argument("rpe_distance: window must be positive");
  }
  const Pairs pairs = associated_or_throw(est, gt, max_dt, 2, "rpe");
  std::vector<double> cumulative(pairs.size(), 0.0);
  for (size_t i = 1; i < pairs.size(); ++i) {
    cumulative[i] = cumulative[i - 1] +
                    (gt[pairs[i].second].pose.translation -
                     gt[pairs[i - 1].second].pose.translation)
                        .norm();
  }
  std::vector<size_t> window_end(pairs.size(), pairs.size());
  size_t j = 0;
  for (size_t i = 0; i < pairs.size(); ++i) {
    if (j < i + 1) j = i + 1;
    while (j < pairs.size() && cumulative[j] - cumulative[i] < meters) ++j;
    if (j < pairs.size()) window_end[i] = j;
  }
  return rpe_over_windows(est, gt, pairs, window_end);
}

double drift_percent(const Trajectory& est, const Trajectory& gt,
                     double max_dt) {
  const Pairs pairs = associated_or_throw(est, gt, max_dt, 2, "drift_percent");
  double length = 0.0;
  for (size_t i = 1; i < pairs.size(); ++i) {
    length += (gt[pairs[i].second].pose.translation -
               gt[pairs[i - 1].second].pose.translation)
                  .norm();
  }
  if (!(length > 0.0)) {
    throw std::runtime_error("drift_percent: zero-length ground-truth path");
  }
  const Pose& est_first = est[pairs.front().first].pose;
  const Pose& gt_first = gt[pairs.front().second].pose;
  Pose align;
  if (rotation_free(gt)) {
    align.translation = gt_first.translation - est_first.translation;
  } else {
    align = compose(gt_first, invert(est_first));
  }
  const Vec3 final_est =
      apply_point(align, est[pairs.back().first].pose.translation);
  const double err =
      (final_est - gt[pairs.back().second].pose.translation).norm();
  return 100.0 * err / length;
}

}  // namespace pgslam
