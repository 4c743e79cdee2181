#include "pgslam/registration.hpp"

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace pgslam {

namespace {

struct VoxelKey {
  int64_t x, y, z;
  bool operator==(const VoxelKey&) const = default;
};

struct VoxelKeyHash {
  size_t operator()(const VoxelKey& k) const {
    uint64_t h = 1469598103934665603ull;
    for (int64_t v : {k.x, k.y, k.z}) {
      h ^= static_cast<uint64_t>(v);
      h *= 1099511628211ull;
    }
    return static_cast<size_t>(h);
  }
};

}  // namespace

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (voxel <= 0.0 || cloud.empty()) return cloud;
  std::unordered_map<VoxelKey, size_t, VoxelKeyHash> slot;
  std::vector<Vec3> sums;
  std::vector<int> counts;
  slot.reserve(static_cast<size_t>(cloud.size()));
  for (Eigen::Index i = 0; i < cloud.size(); ++i) {
    const Vec3 p = cloud.point(i);
    const VoxelKey key{static_cast<int64_t>(std::floor(p.x() / voxel)),
                       static_cast<int64_t>(std::floor(p.y() / voxel)),
                       static_cast<int64_t>(std::floor(p.z() / voxel))};
    auto [it, inserted] = slot.try_emplace(key, sums.size());
    if (inserted) {
      sums.push_back(p);
      counts.push_back(1);
    } else {
      sums[it->second] += p;
      ++counts[it->second];
    }
  }
  PointCloud out;
  out.timestamp = cloud.timestamp;
  out.frame_id = cloud.frame_id;
  out.points.resize(static_cast<Eigen::Index>(sums.size()), 3);
  for (size_t i = 0; i < sums.size(); ++i)
    out.points.row(static_cast<Eigen::Index>(i)) =
        (sums[i] / counts[i]).transpose();
  return out;
}

Eigen::Matrix<double, Eigen::Dynamic, 3> estimate_normals(
    const PointCloud& cloud, const KdTree3& tree, int knn) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> normals(cloud.size(), 3);
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
    // A neighborhood that is not locally planar (ring gaps, edges, sparse
    // regions) yields a meaningless smallest-eigenvector direction; such rows
    // are zeroed so downstream consumers can skip them.
    if (es.eigenvalues()(0) > 0.1 * es.eigenvalues()(1)) {
      normals.row(i).setZero();
    } else {
      normals.row(i) = es.eigenvectors().col(0).transpose();
    }
  }
  return normals;
}

PreparedReference prepare_reference(const PointCloud& reference,
                                    const IcpConfig& cfg) {
  PreparedReference ref;
  ref.cloud = voxel_downsample(reference, cfg.voxel_size);
  ref.tree.build(ref.cloud.points);
  ref.normals = estimate_normals(ref.cloud, ref.tree, cfg.normal_knn);
  return ref;
}

double compute_overlap(const PointCloud& reading, const KdTree3& reading_tree,
                       const PointCloud& reference,
                       const KdTree3& reference_tree, const Pose& t,
                       double radius) {
  if (reading.empty() || reference.empty())
    throw std::invalid_argument("compute_overlap: empty cloud");
  const Pose t_inv = invert(t);
  Eigen::Index hits_read = 0;
  for (Eigen::Index i = 0; i < reading.size(); ++i)
    if (reference_tree.has_neighbor_within(apply_point(t, reading.point(i)),
                                           radius))
      ++hits_read;
  // ||T*p - q|| == ||p - T^-1*q||, so the untransformed reading tree serves
  // the reverse direction.
  Eigen::Index hits_ref = 0;
  for (Eigen::Index j = 0; j < reference.size(); ++j)
    if (reading_tree.has_neighbor_within(apply_point(t_inv, reference.point(j)),
                                         radius))
      ++hits_ref;
  const double f_read =
      static_cast<double>(hits_read) / static_cast<double>(reading.size());
  const double f_ref =
      static_cast<double>(hits_ref) / static_cast<double>(reference.size());
  return 0.5 * (f_read + f_ref);
}

double compute_overlap(const PointCloud& reading, const PointCloud& reference,
                       const Pose& t, double radius) {
  if (reading.empty() || reference.empty())
    throw std::invalid_argument("compute_overlap: empty cloud");
  const KdTree3 reading_tree(reading.points);
  const KdTree3 reference_tree(reference.points);
  return compute_overlap(reading, reading_tree, reference, reference_tree, t,
                         radius);
}

RegistrationResult icp_register(const PointCloud& reading,
                                const PointCloud& reference, const Pose& init,
                                const IcpConfig& cfg) {
  if (reference.size() < cfg.min_points)
    throw std::invalid_argument("icp_register: reference below min_points");
  return icp_register(reading, prepare_reference(reference, cfg), init, cfg);
}

RegistrationResult icp_register(const PointCloud& reading,
                                const PreparedReference& reference,
                                const Pose& init, const IcpConfig& cfg) {
  if (reading.size() < cfg.min_points)
    throw std::invalid_argument("icp_register: reading below min_points");
  if (reference.cloud.size() < 3)
    throw std::invalid_argument("icp_register: reference too small");
  if (!is_finite_pose(init) || !is_rotation<double>(init.rotation, 1e-6))
    throw std::invalid_argument("icp_register: non-finite or invalid init");

  const KdTree3 reading_tree(reading.points);
  const Eigen::Index n = reading.size();

  RegistrationResult result;
  result.delta = init;

  struct Corr {
    Eigen::Index read_idx;
    Eigen::Index ref_idx;
    double dist2;
  };
  std::vector<Corr> corrs;
  corrs.reserve(static_cast<size_t>(n));
  std::vector<size_t> kept;
  const double gate2 = cfg.overlap_radius * cfg.overlap_radius;

  double omega = 0.0;
  double best_step = std::numeric_limits<double>::infinity();
  int stall = 0;
  int iter = 0;
  for (; iter < cfg.max_iterations; ++iter) {
    if (iter % cfg.overlap_refresh == 0) {
      omega = compute_overlap(reading, reading_tree, reference.cloud,
                              reference.tree, result.delta,
                              cfg.overlap_radius);
      if (omega < cfg.min_overlap) {
        result.overlap = omega;
        result.iterations = iter;
        result.converged = false;
        return result;
      }
    }

    // Pairs beyond the overlap radius sit in non-overlapping volume, and
    // zeroed normals mark unusable reference neighborhoods; both would bias
    // the solve and are dropped before trimming.
    corrs.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vec3 x = apply_point(result.delta, reading.point(i));
      const auto [j, d2] = reference.tree.nearest(x);
      if (d2 <= gate2 && reference.normals.row(j).squaredNorm() > 0.5)
        corrs.push_back({i, j, d2});
    }
    if (corrs.size() < 6) {
      result.overlap = omega;
      result.iterations = iter;
      result.converged = false;
      return result;
    }

    // Trim to the overlap fraction of closest pairs.
    const auto n_keep = static_cast<size_t>(std::max<double>(
        6.0, std::ceil(omega * static_cast<double>(n))));
    kept.resize(corrs.size());
    for (size_t i = 0; i < corrs.size(); ++i) kept[i] = i;
    if (n_keep < corrs.size()) {
      std::nth_element(kept.begin(),
                       kept.begin() + static_cast<std::ptrdiff_t>(n_keep),
                       kept.end(), [&](size_t a, size_t b) {
                         const auto& ca = corrs[a];
                         const auto& cb = corrs[b];
                         return ca.dist2 != cb.dist2 ? ca.dist2 < cb.dist2
                                                     : a < b;
                       });
      kept.resize(n_keep);
    }

    // Tukey weights from the MAD-scaled plane residuals. Distance trimming
    // cannot see cross-surface pairs (close in space, far from the plane);
    // the residual scale separates them cleanly.
    std::vector<double> resid(kept.size());
    std::vector<double> scratch(kept.size());
    for (size_t k = 0; k < kept.size(); ++k) {
      const auto& c = corrs[kept[k]];
      const Vec3 x = apply_point(result.delta, reading.point(c.read_idx));
      const Vec3 q = reference.cloud.point(c.ref_idx);
      const Vec3 nrm = reference.normals.row(c.ref_idx).transpose();
      resid[k] = nrm.dot(x - q);
      scratch[k] = std::abs(resid[k]);
    }
    const auto mid = scratch.begin() + static_cast<std::ptrdiff_t>(scratch.size() / 2);
    std::nth_element(scratch.begin(), mid, scratch.end());
    const double tukey_c = std::max(4.685 * 1.4826 * *mid, 1e-3);

    // Gauss-Newton step on the right perturbation: residual per pair is
    // n . (T exp(xi) p - q) with row [R^T n ; p x (R^T n)].
    Mat6 a = Mat6::Zero();
    Vec6 b = Vec6::Zero();
    for (size_t k = 0; k < kept.size(); ++k) {
      const double r = resid[k];
      const double u = r / tukey_c;
      if (std::abs(u) >= 1.0) continue;
      const double w = (1.0 - u * u) * (1.0 - u * u);
      const auto& c = corrs[kept[k]];
      const Vec3 p = reading.point(c.read_idx);
      const Vec3 nrm = reference.normals.row(c.ref_idx).transpose();
      const Vec3 rn = result.delta.rotation.transpose() * nrm;
      Vec6 row;
      row.head<3>() = rn;
      row.tail<3>() = p.cross(rn);
      a += w * row * row.transpose();
      b -= w * row * r;
    }
    a += (1e-9 * a.trace() / 6.0 + 1e-12) * Mat6::Identity();  // degenerate-scene guard
    const Vec6 xi = a.ldlt().solve(b);

    result.delta = boxplus(result.delta, xi);
    const double step = xi.norm();
    if (step < cfg.convergence_twist_norm) {
      ++iter;
      break;
    }
    // Correspondence flips and robust reweighting keep the update from ever
    // reaching the twist tolerance on noisy pairs; a persistent plateau of
    // small steps is the noise floor, so stop early. Growing steps are
    // progress toward the target, never a plateau.
    if (step < 1e-2 && step > 0.999 * best_step) {
      if (++stall >= 5) {
        ++iter;
        break;
      }
    } else {
      stall = 0;
    }
    best_step = std::min(best_step, step);
  }
  result.iterations = iter;
  // Termination by tolerance, plateau, or the iteration cap all count as
  // convergence; false is reserved for the overlap failure paths above.
  result.converged = true;

  result.overlap =
      compute_overlap(reading, reading_tree, reference.cloud, reference.tree,
                      result.delta, cfg.overlap_radius);

  // Point-to-plane RMSE over the robust inliers at the final pose, using the
  // same MAD scale as the solve so rejected rows do not inflate the figure.
  if (!kept.empty()) {
    std::vector<double> resid(kept.size());
    std::vector<double> scratch(kept.size());
    for (size_t k = 0; k < kept.size(); ++k) {
      const auto& c = corrs[kept[k]];
      const Vec3 x = apply_point(result.delta, reading.point(c.read_idx));
      const Vec3 q = reference.cloud.point(c.ref_idx);
      const Vec3 nrm = reference.normals.row(c.ref_idx).transpose();
      resid[k] = nrm.dot(x - q);
      scratch[k] = std::abs(resid[k]);
    }
    const auto mid =
        scratch.begin() + static_cast<std::ptrdiff_t>(scratch.size() / 2);
    std::nth_element(scratch.begin(), mid, scratch.end());
    const double cutoff = std::max(4.685 * 1.4826 * *mid, 1e-3);
    double sq = 0.0;
    size_t used = 0;
    for (const double r : resid) {
      if (std::abs(r) >= cutoff) continue;
      sq += r * r;
      ++used;
    }
    if (used > 0) result.inlier_rmse = std::sqrt(sq / static_cast<double>(used));
  }
  return result;
}

}  // namespace pgslam
