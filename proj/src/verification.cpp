#include "pgslam/verification.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "pgslam/kdtree.hpp"
#include "pgslam/registration.hpp"

namespace pgslam {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Omega is a fraction estimate, so an even stride over dense clouds keeps
// the estimator cost bounded without biasing it.
constexpr Eigen::Index kOmegaSampleCap = 4096;

PointCloud strided_sample(const PointCloud& cloud, Eigen::Index cap) {
  const Eigen::Index n = cloud.size();
  const Eigen::Index stride = (n + cap - 1) / cap;
  PointCloud out;
  out.timestamp = cloud.timestamp;
  out.frame_id = cloud.frame_id;
  out.points.resize((n + stride - 1) / stride, 3);
  Eigen::Index m = 0;
  for (Eigen::Index i = 0; i < n; i += stride) {
    out.points.row(m++) = cloud.points.row(i);
  }
  return out;
}

// Shared scoring core. candidates[j] lists the source planes evaluated for
// query plane j; the fast and brute-force variants differ only in how that
// list is produced. Member trees are built lazily so the fast path never
// pays for source planes it does not probe.
AlignabilityReport evaluate(
    const PointCloud& source, const std::vector<Plane>& source_planes,
    const PointCloud& target, const std::vector<Plane>& target_planes,
    const Pose& t_rel, const std::vector<std::vector<Eigen::Index>>& candidates,
    const VerificationConfig& cfg) {
  AlignabilityReport report;
  report.verifiable = true;

  std::vector<std::unique_ptr<KdTree3>> member_trees(source_planes.size());
  auto tree_for = [&](Eigen::Index i) -> const KdTree3& {
    auto& slot = member_trees[static_cast<size_t>(i)];
    if (!slot) {
      slot = std::make_unique<KdTree3>(
          plane_member_points(source_planes[static_cast<size_t>(i)], source));
    }
    return *slot;
  };

  for (size_t j = 0; j < target_planes.size(); ++j) {
    double best_score = -1.0;
    Eigen::Index best_source = -1;
    for (Eigen::Index i : candidates[j]) {
      const double score = plane_overlap_score(
          source_planes[static_cast<size_t>(i)], tree_for(i),
          target_planes[j], target, t_rel, cfg.segmentation.plane_inlier_dist,
          cfg.overlap_radius);
      if (score > best_score ||
          (score == best_score && i < best_source)) {
        best_score = score;
        best_source = i;
      }
    }
    if (best_score > cfg.min_match_score) {
      report.matches.push_back(
          {static_cast<Eigen::Index>(j), best_source, best_score});
    }
  }

  std::sort(report.matches.begin(), report.matches.end(),
            [](const PlaneMatch& a, const PlaneMatch& b) {
              if (a.score != b.score) return a.score > b.score;
              return a.query < b.query;
            });

  report.normal_matrix.resize(static_cast<Eigen::Index>(report.matches.size()),
                              3);
  for (size_t m = 0; m < report.matches.size(); ++m) {
    report.normal_matrix.row(static_cast<Eigen::Index>(m)) =
        target_planes[static_cast<size_t>(report.matches[m].query)]
            .normal.transpose();
  }

  report.alpha = report.matches.empty()
                     ? std::numeric_limits<double>::infinity()
                     : alignability(report.normal_matrix);
  const PointCloud* tgt = &target;
  const PointCloud* src = &source;
  PointCloud tgt_sub, src_sub;
  if (target.size() > kOmegaSampleCap) {
    tgt_sub = strided_sample(target, kOmegaSampleCap);
    tgt = &tgt_sub;
  }
  if (source.size() > kOmegaSampleCap) {
    src_sub = strided_sample(source, kOmegaSampleCap);
    src = &src_sub;
  }
  report.omega = compute_overlap(*tgt, *src, t_rel, cfg.overlap_radius);
  report.risk = risk(report.omega, report.alpha);
  return report;
}

AlignabilityReport unverifiable_report(double elapsed) {
  AlignabilityReport report;
  report.verifiable = false;
  report.elapsed = elapsed;
  return report;
}

std::vector<std::vector<Eigen::Index>> all_pairs_candidates(
    size_t num_source, size_t num_target) {
  std::vector<Eigen::Index> all(num_source);
  for (size_t i = 0; i < num_source; ++i) all[i] = static_cast<Eigen::Index>(i);
  return std::vector<std::vector<Eigen::Index>>(num_target, all);
}

}  // namespace

double alignability(const Eigen::Matrix<double, Eigen::Dynamic, 3>& normals) {
  if (normals.rows() == 0) {
    throw std::invalid_argument("alignability: empty normal matrix");
  }
  const Mat3 gram = normals.transpose() * normals;
  Eigen::SelfAdjointEigenSolver<Mat3> solver;
  solver.computeDirect(gram);
  const double lambda_min = solver.eigenvalues()(0);
  const double lambda_max = solver.eigenvalues()(2);
  if (lambda_min < 1e-12 * lambda_max) {
    return std::numeric_limits<double>::infinity();
  }
  return lambda_max / lambda_min;
}

double risk(double omega, double alpha) {
  if (std::isinf(alpha)) return 1.0;
  const double rho = 1.0 - omega / (1.0 + std::max(0.0, std::log10(alpha)));
  return std::clamp(rho, 0.0, 1.0);
}

AlignabilityReport predict_alignment_risk(const PointCloud& source,
                                          const PointCloud& target,
                                          const Pose& source_pose,
                                          const Pose& target_pose, int k,
                                          const VerificationConfig& cfg) {
  const auto start = Clock::now();
  const auto source_planes = extract_planes(source, cfg.segmentation);
  const auto target_planes = extract_planes(target, cfg.segmentation);
  auto report = predict_alignment_risk(source, source_planes, target,
                                       target_planes, source_pose, target_pose,
                                       k, cfg);
  report.elapsed = seconds_since(start);
  return report;
}

AlignabilityReport predict_alignment_risk(
    const PointCloud& source, const std::vector<Plane>& source_planes,
    const PointCloud& target, const std::vector<Plane>& target_planes,
    const Pose& source_pose, const Pose& target_pose, int k,
    const VerificationConfig& cfg) {
  if (k < 1) throw std::invalid_argument("predict_alignment_risk: k < 1");
  const auto start = Clock::now();
  if (source_planes.empty() || target_planes.empty()) {
    return unverifiable_report(seconds_since(start));
  }
  const Pose t_rel = compose(invert(source_pose), target_pose);

  Eigen::Matrix<double, Eigen::Dynamic, 3> centroids(
      static_cast<Eigen::Index>(source_planes.size()), 3);
  for (size_t i = 0; i < source_planes.size(); ++i) {
    centroids.row(static_cast<Eigen::Index>(i)) =
        source_planes[i].centroid.transpose();
  }
  const KdTree3 centroid_tree(centroids);

  std::vector<std::vector<Eigen::Index>> candidates(target_planes.size());
  for (size_t j = 0; j < target_planes.size(); ++j) {
    const Vec3 query = apply_point(t_rel, target_planes[j].centroid);
    for (const auto& [index, sq_dist] : centroid_tree.knn(query, k)) {
      candidates[j].push_back(index);
    }
  }

  auto report = evaluate(source, source_planes, target, target_planes, t_rel,
                         candidates, cfg);
  report.elapsed = seconds_since(start);
  return report;
}

AlignabilityReport brute_force_risk(const PointCloud& source,
                                    const PointCloud& target,
                                    const Pose& source_pose,
                                    const Pose& target_pose,
                                    const VerificationConfig& cfg) {
  const auto start = Clock::now();
  const auto source_planes = extract_planes(source, cfg.segmentation);
  const auto target_planes = extract_planes(target, cfg.segmentation);
  auto report = brute_force_risk(source, source_planes, target, target_planes,
                                 source_pose, target_pose, cfg);
  report.elapsed = seconds_since(start);
  return report;
}

AlignabilityReport brute_force_risk(const PointCloud& source,
                                    const std::vector<Plane>& source_planes,
                                    const PointCloud& target,
                                    const std::vector<Plane>& target_planes,
                                    const Pose& source_pose,
                                    const Pose& target_pose,
                                    const VerificationConfig& cfg) {
  const auto start = Clock::now();
  if (source_planes.empty() || target_planes.empty()) {
    return unverifiable_report(seconds_since(start));
  }
  const Pose t_rel = compose(invert(source_pose), target_pose);
  auto report =
      evaluate(source, source_planes, target, target_planes, t_rel,
               all_pairs_candidates(source_planes.size(), target_planes.size()),
               cfg);
  report.elapsed = seconds_since(start);
  return report;
}

}  // namespace pgslam
