#include "pgslam/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

namespace pgslam {

namespace {

struct LocalFrame {
  Vec3 normal;
  double curvature;
};

// Normal and surface-variation curvature from a k-NN PCA.
std::vector<LocalFrame> local_frames(const PointCloud& cloud,
                                     const KdTree3& tree, int knn) {
  std::vector<LocalFrame> out(static_cast<size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const auto nbrs = tree.knn(cloud.point(i), knn);
    Vec3 mean = Vec3::Zero();
    for (const auto& [j, d2] : nbrs) mean += tree.point(j);
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& [j, d2] : nbrs) {
      const Vec3 d = tree.point(j) - mean;
      cov += d * d.transpose();
    }
    Eigen::SelfAdjointEigenSolver<Mat3> es;
    es.computeDirect(cov);
    const Vec3 ev = es.eigenvalues();
    const double sum = ev.sum();
    out[static_cast<size_t>(i)] = {es.eigenvectors().col(0),
                                   sum > 0.0 ? ev[0] / sum : 1.0};
  }
  return out;
}

struct PlaneFit {
  Vec3 normal;
  Vec3 centroid;
  double rmse;
};

PlaneFit fit_plane(const PointCloud& cloud,
                   const std::vector<Eigen::Index>& members) {
  Vec3 mean = Vec3::Zero();
  for (Eigen::Index i : members) mean += cloud.point(i);
  mean /= static_cast<double>(members.size());
  Mat3 cov = Mat3::Zero();
  for (Eigen::Index i : members) {
    const Vec3 d = cloud.point(i) - mean;
    cov += d * d.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> es;
  es.computeDirect(cov);
  const Vec3 n = es.eigenvectors().col(0);
  double sq = 0.0;
  for (Eigen::Index i : members) {
    const double r = n.dot(cloud.point(i) - mean);
    sq += r * r;
  }
  return {n, mean, std::sqrt(sq / static_cast<double>(members.size()))};
}

// Points toward the sensor origin; ties resolved by a fixed sign rule.
Vec3 orient_normal(const Vec3& n, const Vec3& centroid) {
  const double toward = n.dot(-centroid);
  if (toward > 1e-12) return n;
  if (toward < -1e-12) return -n;
  for (int k = 2; k >= 0; --k) {
    if (std::abs(n[k]) > 1e-12) return n[k] > 0 ? n : -n;
  }
  return n;
}

}  // namespace

std::vector<Plane> extract_planes(const PointCloud& cloud,
                                  const SegmentationConfig& cfg) {
  std::vector<Plane> planes;
  if (cloud.size() < cfg.min_plane_points) return planes;

  const KdTree3 tree(cloud.points);
  const auto frames = local_frames(cloud, tree, cfg.normal_knn);
  const double cos_thresh = std::cos(deg2rad(cfg.angle_thresh_deg));

  std::vector<Eigen::Index> seeds(static_cast<size_t>(cloud.size()));
  std::iota(seeds.begin(), seeds.end(), 0);
  std::sort(seeds.begin(), seeds.end(), [&](Eigen::Index a, Eigen::Index b) {
    const double ca = frames[static_cast<size_t>(a)].curvature;
    const double cb = frames[static_cast<size_t>(b)].curvature;
    return ca != cb ? ca < cb : a < b;
  });

  std::vector<char> assigned(static_cast<size_t>(cloud.size()), 0);
  std::vector<char> seed_spent(static_cast<size_t>(cloud.size()), 0);
  for (const Eigen::Index seed : seeds) {
    if (assigned[static_cast<size_t>(seed)] ||
        seed_spent[static_cast<size_t>(seed)])
      continue;

    std::vector<Eigen::Index> members{seed};
    assigned[static_cast<size_t>(seed)] = 1;
    Vec3 region_normal = frames[static_cast<size_t>(seed)].normal;
    Vec3 region_point = cloud.point(seed);
    size_t next_refit = 32;

    std::deque<Eigen::Index> queue{seed};
    while (!queue.empty()) {
      const Eigen::Index cur = queue.front();
      queue.pop_front();
      for (const auto& [nbr, d2] : tree.knn(cloud.point(cur), cfg.normal_knn)) {
        if (assigned[static_cast<size_t>(nbr)]) continue;
        const Vec3& n = frames[static_cast<size_t>(nbr)].normal;
        if (std::abs(n.dot(region_normal)) < cos_thresh) continue;
        const double dist =
            std::abs(region_normal.dot(cloud.point(nbr) - region_point));
        if (dist >= cfg.plane_inlier_dist) continue;
        assigned[static_cast<size_t>(nbr)] = 1;
        members.push_back(nbr);
        queue.push_back(nbr);
        if (members.size() >= next_refit) {
          const PlaneFit fit = fit_plane(cloud, members);
          region_normal = fit.normal;
          region_point = fit.centroid;
          next_refit *= 2;
        }
      }
    }

    if (members.size() < static_cast<size_t>(cfg.min_plane_points)) {
      // Too small to be a plane; release the points so later regions can
      // absorb them, but never reseed from this point.
      for (Eigen::Index i : members) assigned[static_cast<size_t>(i)] = 0;
      seed_spent[static_cast<size_t>(seed)] = 1;
      continue;
    }

    const PlaneFit fit = fit_plane(cloud, members);
    if (fit.rmse > cfg.plane_inlier_dist) continue;  // not planar after all
    Plane p;
    p.normal = orient_normal(fit.normal, fit.centroid);
    p.centroid = fit.centroid;
    p.member_indices = std::move(members);
    std::sort(p.member_indices.begin(), p.member_indices.end());
    p.fit_rmse = fit.rmse;
    planes.push_back(std::move(p));
  }
  return planes;
}

std::vector<Segment> extract_segments(const PointCloud& cloud,
                                      const SegmentationConfig& cfg) {
  std::vector<Segment> segments;
  if (cloud.empty()) return segments;

  // Dominant ground plane: largest plane whose oriented normal is within
  // ground_max_tilt of +z.
  std::vector<char> removed(static_cast<size_t>(cloud.size()), 0);
  const double cos_tilt = std::cos(deg2rad(cfg.ground_max_tilt_deg));
  const auto planes = extract_planes(cloud, cfg);
  const Plane* ground = nullptr;
  for (const Plane& p : planes) {
    if (p.normal.z() < cos_tilt) continue;
    if (!ground || p.member_indices.size() > ground->member_indices.size())
      ground = &p;
  }
  if (ground)
    for (Eigen::Index i : ground->member_indices)
      removed[static_cast<size_t>(i)] = 1;

  const KdTree3 tree(cloud.points);
  std::vector<char> visited = removed;
  for (Eigen::Index start = 0; start < cloud.size(); ++start) {
    if (visited[static_cast<size_t>(start)]) continue;
    std::vector<Eigen::Index> cluster{start};
    visited[static_cast<size_t>(start)] = 1;
    std::deque<Eigen::Index> queue{start};
    while (!queue.empty()) {
      const Eigen::Index cur = queue.front();
      queue.pop_front();
      for (Eigen::Index nbr :
           tree.radius_indices(cloud.point(cur), cfg.cluster_dist)) {
        if (visited[static_cast<size_t>(nbr)]) continue;
        visited[static_cast<size_t>(nbr)] = 1;
        cluster.push_back(nbr);
        queue.push_back(nbr);
      }
    }
    if (cluster.size() < static_cast<size_t>(cfg.min_segment_points)) continue;
    std::sort(cluster.begin(), cluster.end());
    Segment s;
    s.points.resize(static_cast<Eigen::Index>(cluster.size()), 3);
    Vec3 sum = Vec3::Zero();
    for (size_t k = 0; k < cluster.size(); ++k) {
      s.points.row(static_cast<Eigen::Index>(k)) = cloud.points.row(cluster[k]);
      sum += cloud.point(cluster[k]);
    }
    s.centroid = sum / static_cast<double>(cluster.size());
    segments.push_back(std::move(s));
  }
  return segments;
}

double plane_overlap_score(const Plane& ps, const KdTree3& ps_members_tree,
                           const Plane& pt, const PointCloud& pt_cloud,
                           const Pose& t, double plane_inlier_dist,
                           double overlap_radius) {
  if (pt.member_indices.empty()) return 0.0;
  Eigen::Index hits = 0;
  for (const Eigen::Index i : pt.member_indices) {
    const Vec3 p = apply_point(t, pt_cloud.point(i));
    if (std::abs(ps.normal.dot(p - ps.centroid)) >= plane_inlier_dist) continue;
    if (!ps_members_tree.has_neighbor_within(p, overlap_radius)) continue;
    ++hits;
  }
  return static_cast<double>(hits) /
         static_cast<double>(pt.member_indices.size());
}

double plane_overlap_score(const Plane& ps, const PointCloud& ps_cloud,
                           const Plane& pt, const PointCloud& pt_cloud,
                           const Pose& t, double plane_inlier_dist,
                           double overlap_radius) {
  const KdTree3 members(plane_member_points(ps, ps_cloud));
  return plane_overlap_score(ps, members, pt, pt_cloud, t, plane_inlier_dist,
                             overlap_radius);
}

Eigen::Matrix<double, Eigen::Dynamic, 3> plane_member_points(
    const Plane& plane, const PointCloud& cloud) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts(
      static_cast<Eigen::Index>(plane.member_indices.size()), 3);
  for (size_t k = 0; k < plane.member_indices.size(); ++k)
    pts.row(static_cast<Eigen::Index>(k)) =
        cloud.points.row(plane.member_indices[k]);
  return pts;
}

}  // namespace pgslam
