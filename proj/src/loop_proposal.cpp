#include "pgslam/loop_proposal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <stdexcept>

#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

namespace pgslam {

namespace {

constexpr double kRatioThresh = 0.8;
// Map entries within this distance of a match winner count as
// re-observations of the same physical segment, not as rival places.
constexpr double kSameObjectRadius = 2.0;
constexpr double kRansacConfidence = 0.99;
constexpr int kRansacCap = 1000;

Pose pose_from_matrix(const Eigen::Matrix4d& m) {
  Pose p;
  p.rotation = m.topLeftCorner<3, 3>();
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

std::vector<Eigen::Index> inliers_of(
    const std::vector<std::pair<Vec3, Vec3>>& correspondences, const Pose& t,
    double inlier_dist) {
  std::vector<Eigen::Index> inliers;
  for (size_t i = 0; i < correspondences.size(); ++i) {
    const Vec3 mapped = apply_point(t, correspondences[i].first);
    if ((mapped - correspondences[i].second).norm() < inlier_dist) {
      inliers.push_back(static_cast<Eigen::Index>(i));
    }
  }
  return inliers;
}

Pose fit_correspondences(
    const std::vector<std::pair<Vec3, Vec3>>& correspondences,
    const std::vector<Eigen::Index>& subset) {
  Eigen::Matrix3Xd src(3, subset.size());
  Eigen::Matrix3Xd dst(3, subset.size());
  for (size_t k = 0; k < subset.size(); ++k) {
    src.col(k) = correspondences[static_cast<size_t>(subset[k])].first;
    dst.col(k) = correspondences[static_cast<size_t>(subset[k])].second;
  }
  return pose_from_matrix(Eigen::umeyama(src, dst, false));
}

}  // namespace

std::vector<LoopCandidate> geometric_candidates(
    int current_node, const Pose& current_pose, const Covariance6& current_cov,
    const std::vector<Pose>& history, const LoopConfig& cfg) {
  Eigen::SelfAdjointEigenSolver<Mat3> solver;
  solver.computeDirect(current_cov.topLeftCorner<3, 3>());
  const double spread = std::sqrt(std::max(0.0, solver.eigenvalues()(2)));
  const double radius = cfg.base_radius + 3.0 * spread;

  std::vector<std::pair<double, int>> eligible;
  for (size_t i = 0; i < history.size(); ++i) {
    const int node = static_cast<int>(i);
    if (current_node - node < cfg.min_node_gap) continue;
    const double dist =
        (history[i].translation - current_pose.translation).norm();
    if (dist <= radius) eligible.emplace_back(dist, node);
  }
  std::sort(eligible.begin(), eligible.end());

  std::vector<LoopCandidate> candidates;
  const size_t keep =
      std::min(eligible.size(), static_cast<size_t>(cfg.max_candidates));
  for (size_t k = 0; k < keep; ++k) {
    LoopCandidate c;
    c.query_node = current_node;
    c.match_node = eligible[k].second;
    c.init_transform =
        compose(invert(history[static_cast<size_t>(c.match_node)]),
                current_pose);
    c.source = CandidateSource::kGeometric;
    c.support = radius - eligible[k].first;
    candidates.push_back(c);
  }
  return candidates;
}

SegmentDescriptor describe_segment(const Segment& segment) {
  const Eigen::Index n = segment.points.rows();
  if (n < 3) {
    throw std::invalid_argument("describe_segment: fewer than 3 points");
  }
  const Eigen::RowVector3d mean = segment.points.colwise().mean();
  const Eigen::Matrix<double, Eigen::Dynamic, 3> centered =
      segment.points.rowwise() - mean;
  const Mat3 covariance =
      centered.transpose() * centered / static_cast<double>(n);

  Eigen::SelfAdjointEigenSolver<Mat3> solver;
  solver.computeDirect(covariance);
  const double l1 = solver.eigenvalues()(2);
  const double l2 = solver.eigenvalues()(1);
  const double l3 = solver.eigenvalues()(0);
  if (l1 <= 0.0 || l2 < 1e-9 * l1) {
    throw std::invalid_argument("describe_segment: collinear segment");
  }

  SegmentDescriptor d = SegmentDescriptor::Zero();

  const double sum = l1 + l2 + l3;
  const Vec3 e(l1 / sum, l2 / sum, l3 / sum);
  double entropy = 0.0;
  for (int i = 0; i < 3; ++i) {
    if (e(i) > 0.0) entropy -= e(i) * std::log(e(i));
  }
  d(0) = (l1 - l2) / l1;                      // linearity
  d(1) = (l2 - l3) / l1;                      // planarity
  d(2) = l3 / l1;                             // sphericity
  d(3) = std::cbrt(e(0) * e(1) * e(2));       // omnivariance
  d(4) = (l1 - l3) / l1;                      // anisotropy
  d(5) = entropy;                             // eigenentropy
  d(6) = l3 / sum;                            // change of curvature

  // Eigen-aligned coordinates folded to absolute values: the histogram
  // cannot depend on the solver's eigenvector sign choices.
  Mat3 axes;
  axes.col(0) = solver.eigenvectors().col(2);
  axes.col(1) = solver.eigenvectors().col(1);
  axes.col(2) = solver.eigenvectors().col(0);
  const Eigen::Matrix<double, Eigen::Dynamic, 3> folded =
      (centered * axes).cwiseAbs();
  const Eigen::RowVector3d extent = folded.colwise().maxCoeff();
  for (Eigen::Index i = 0; i < n; ++i) {
    int index = 0;
    for (int a = 0; a < 3; ++a) {
      int bin = 0;
      if (extent(a) > 0.0) {
        bin = std::min(2, static_cast<int>(3.0 * folded(i, a) / extent(a)));
      }
      index = index * 3 + bin;
    }
    d(7 + index) += 1.0;
  }
  d.segment<27>(7) /= static_cast<double>(n);

  const Eigen::VectorXd radii = centered.rowwise().norm();
  const double max_radius = radii.maxCoeff();
  for (Eigen::Index i = 0; i < n; ++i) {
    const int bin =
        std::min(29, static_cast<int>(30.0 * radii(i) / max_radius));
    d(34 + bin) += 1.0;
  }
  d.segment<30>(34) /= static_cast<double>(n);

  d /= d.norm();
  return d;
}

std::vector<SegmentMatch> match_segments(
    const std::vector<SegmentDescriptor>& queries, const SegmentMap& map,
    const LoopConfig& cfg) {
  std::vector<SegmentMatch> matches;
  if (queries.empty() || map.entries.empty()) return matches;

  std::vector<double> dist(map.entries.size());
  for (size_t q = 0; q < queries.size(); ++q) {
    Eigen::Index best = -1;
    double best_dist = std::numeric_limits<double>::infinity();
    for (size_t e = 0; e < map.entries.size(); ++e) {
      dist[e] = (map.entries[e].descriptor - queries[q]).norm();
      if (dist[e] < best_dist) {
        best_dist = dist[e];
        best = static_cast<Eigen::Index>(e);
      }
    }
    if (best_dist >= cfg.desc_thresh) continue;
    // Ambiguity is measured against entries that cannot be re-observations
    // of the winner; successive keyframes store near-identical copies of
    // every segment, and those must not veto the match.
    const Vec3 winner = map.entries[static_cast<size_t>(best)].centroid;
    double second_dist = std::numeric_limits<double>::infinity();
    for (size_t e = 0; e < map.entries.size(); ++e) {
      if ((map.entries[e].centroid - winner).norm() <= kSameObjectRadius)
        continue;
      second_dist = std::min(second_dist, dist[e]);
    }
    if (std::isfinite(second_dist)) {
      // Equal first and second distances read as ambiguity, not a match.
      const double ratio =
          second_dist > 0.0 ? best_dist / second_dist : 1.0;
      if (ratio >= kRatioThresh) continue;
    }
    matches.push_back({static_cast<Eigen::Index>(q), best, best_dist});
  }
  return matches;
}

TransformEstimate estimate_transform(
    const std::vector<std::pair<Vec3, Vec3>>& correspondences,
    const LoopConfig& cfg, uint64_t seed) {
  const size_t n = correspondences.size();
  if (n < 3) {
    throw std::invalid_argument(
        "estimate_transform: need at least 3 correspondences");
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<size_t> pick(0, n - 1);

  TransformEstimate best;
  int max_iters = kRansacCap;
  for (int iter = 0; iter < max_iters; ++iter) {
    size_t a = pick(rng);
    size_t b = pick(rng);
    while (b == a) b = pick(rng);
    size_t c = pick(rng);
    while (c == a || c == b) c = pick(rng);

    const Pose model = fit_correspondences(
        correspondences, {static_cast<Eigen::Index>(a),
                          static_cast<Eigen::Index>(b),
                          static_cast<Eigen::Index>(c)});
    auto inliers = inliers_of(correspondences, model, cfg.inlier_dist);
    if (inliers.size() > best.inliers.size()) {
      best.transform = model;
      best.inliers = std::move(inliers);
      const double w =
          static_cast<double>(best.inliers.size()) / static_cast<double>(n);
      const double miss = 1.0 - w * w * w;
      if (miss <= 0.0) {
        max_iters = iter + 1;
      } else {
        const double needed =
            std::log(1.0 - kRansacConfidence) / std::log(miss);
        max_iters = std::min(
            kRansacCap,
            std::max(iter + 1, static_cast<int>(std::ceil(needed))));
      }
    }
  }

  if (best.inliers.size() < static_cast<size_t>(cfg.min_inliers)) {
    return TransformEstimate{};
  }
  const Pose refined = fit_correspondences(correspondences, best.inliers);
  auto final_inliers = inliers_of(correspondences, refined, cfg.inlier_dist);
  if (final_inliers.size() < static_cast<size_t>(cfg.min_inliers)) {
    return TransformEstimate{};
  }
  TransformEstimate result;
  result.transform = refined;
  result.inliers = std::move(final_inliers);
  result.valid = true;
  return result;
}

std::vector<LoopCandidate> descriptor_candidates(
    int query_node, const std::vector<SegmentDescriptor>& query_descriptors,
    const std::vector<Vec3>& query_centroids, const SegmentMap& map,
    const std::vector<Pose>& node_poses, const LoopConfig& cfg,
    uint64_t seed) {
  if (query_descriptors.size() != query_centroids.size()) {
    throw std::invalid_argument(
        "descriptor_candidates: descriptor/centroid count mismatch");
  }

  // Recent nodes are excluded before matching so that freshly observed
  // copies of the same segments cannot poison the ratio test.
  SegmentMap old_enough;
  for (const auto& entry : map.entries) {
    if (query_node - entry.node >= cfg.min_node_gap) {
      old_enough.entries.push_back(entry);
    }
  }

  const auto matches = match_segments(query_descriptors, old_enough, cfg);

  // One rigid fit over every matched centroid pair: re-observations of a
  // segment share their map-frame centroid, so correspondences from
  // different historical keyframes reinforce the same transform instead of
  // being fragmented into per-node groups too small to estimate from.
  std::vector<std::pair<Vec3, Vec3>> correspondences;
  std::vector<int> entry_nodes;
  for (const auto& m : matches) {
    const auto& entry = old_enough.entries[static_cast<size_t>(m.entry)];
    correspondences.emplace_back(
        query_centroids[static_cast<size_t>(m.query)], entry.centroid);
    entry_nodes.push_back(entry.node);
  }

  std::vector<LoopCandidate> candidates;
  if (correspondences.size() < 3) return candidates;
  const auto estimate = estimate_transform(correspondences, cfg, seed);
  if (!estimate.valid) return candidates;

  // The revisited node is the one most inlier observations came from;
  // std::map iteration keeps ties on the oldest node.
  std::map<int, int> votes;
  for (const Eigen::Index idx : estimate.inliers) {
    ++votes[entry_nodes[static_cast<size_t>(idx)]];
  }
  int match_node = -1;
  int best_votes = 0;
  for (const auto& [node, v] : votes) {
    if (v > best_votes) {
      match_node = node;
      best_votes = v;
    }
  }

  LoopCandidate c;
  c.query_node = query_node;
  c.match_node = match_node;
  c.init_transform = compose(
      invert(node_poses[static_cast<size_t>(match_node)]), estimate.transform);
  c.source = CandidateSource::kDescriptor;
  c.support = static_cast<double>(estimate.inliers.size());
  candidates.push_back(c);
  return candidates;
}

}  // namespace pgslam
