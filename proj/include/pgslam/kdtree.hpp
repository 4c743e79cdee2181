#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "pgslam/geometry.hpp"

namespace pgslam {

/// Static k-d tree over 3D points. Built once, queried many times; immutable
/// after construction and safe to share across concurrent readers.
///
/// Ties in distance are broken toward the smaller point index so queries are
/// deterministic for any input, including duplicate points.
class KdTree3 {
 public:
  KdTree3() = default;
  explicit KdTree3(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points) { build(points); }
  explicit KdTree3(const std::vector<Vec3>& points);

  void build(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points);

  Eigen::Index size() const { return pts_.rows(); }
  bool empty() const { return pts_.rows() == 0; }
  Vec3 point(Eigen::Index i) const { return pts_.row(i).transpose(); }

  /// Index and squared distance of the nearest point. Tree must be non-empty.
  std::pair<Eigen::Index, double> nearest(const Vec3& query) const;

  /// Up to k nearest points, ordered by ascending distance (ties by index).
  std::vector<std::pair<Eigen::Index, double>> knn(const Vec3& query, int k) const;

  /// True when some point lies within `radius` of the query.
  bool has_neighbor_within(const Vec3& query, double radius) const;

  /// Indices of all points within `radius`, ascending by index.
  std::vector<Eigen::Index> radius_indices(const Vec3& query, double radius) const;

 private:
  struct Node {
    double split_value = 0.0;
    int32_t axis = -1;  // -1 marks a leaf
    int32_t left = -1;
    int32_t right = -1;
    int32_t begin = 0;  // leaf payload range into order_
    int32_t end = 0;
  };

  std::vector<int32_t> order_;
  std::vector<Node> nodes_;
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts_;

  int32_t build_recursive(int32_t begin, int32_t end);
};

}  // namespace pgslam
