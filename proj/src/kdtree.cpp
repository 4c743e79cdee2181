#include "pgslam/kdtree.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

namespace pgslam {

namespace {
constexpr int32_t kLeafSize = 16;
}

KdTree3::KdTree3(const std::vector<Vec3>& points) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> m(points.size(), 3);
  for (size_t i = 0; i < points.size(); ++i) m.row(i) = points[i].transpose();
  build(m);
}

void KdTree3::build(const Eigen::Matrix<double, Eigen::Dynamic, 3>& points) {
  if (!points.allFinite()) throw std::invalid_argument("kdtree: non-finite point");
  pts_ = points;
  order_.resize(points.rows());
  std::iota(order_.begin(), order_.end(), 0);
  nodes_.clear();
  nodes_.reserve(static_cast<size_t>(2 * points.rows() / kLeafSize + 8));
  if (points.rows() > 0) build_recursive(0, static_cast<int32_t>(points.rows()));
}

int32_t KdTree3::build_recursive(int32_t begin, int32_t end) {
  const int32_t id = static_cast<int32_t>(nodes_.size());
  nodes_.emplace_back();
  if (end - begin <= kLeafSize) {
    nodes_[id].begin = begin;
    nodes_[id].end = end;
    return id;
  }

  Vec3 lo = pts_.row(order_[begin]).transpose();
  Vec3 hi = lo;
  for (int32_t i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(pts_.row(order_[i]).transpose());
    hi = hi.cwiseMax(pts_.row(order_[i]).transpose());
  }
  int axis;
  (hi - lo).maxCoeff(&axis);

  const int32_t mid = begin + (end - begin) / 2;
  // Tie-break on index for a deterministic partition with duplicate points.
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](int32_t a, int32_t b) {
                     const double pa = pts_(a, axis), pb = pts_(b, axis);
                     return pa < pb || (pa == pb && a < b);
                   });

  nodes_[id].axis = axis;
  nodes_[id].split_value = pts_(order_[mid], axis);
  const int32_t left = build_recursive(begin, mid);
  const int32_t right = build_recursive(mid, end);
  nodes_[id].left = left;
  nodes_[id].right = right;
  return id;
}

namespace {

struct StackEntry {
  int32_t node;
  double plane_dist2;  // squared distance from query to the split plane path
};

// Median splits keep the depth near log2(n) and descents leave at most one
// pending far branch per level, so 64 entries cover any representable cloud.
constexpr int kMaxStack = 64;

}  // namespace

std::pair<Eigen::Index, double> KdTree3::nearest(const Vec3& query) const {
  if (empty()) throw std::logic_error("kdtree: nearest on empty tree");
  StackEntry stack[kMaxStack];
  int top = 0;
  stack[top++] = {0, 0.0};
  Eigen::Index best = -1;
  double best_d2 = std::numeric_limits<double>::infinity();
  while (top > 0) {
    const StackEntry e = stack[--top];
    if (e.plane_dist2 > best_d2) continue;
    const Node& n = nodes_[e.node];
    if (n.axis < 0) {
      for (int32_t i = n.begin; i < n.end; ++i) {
        const int32_t idx = order_[i];
        const double d2 = (pts_.row(idx).transpose() - query).squaredNorm();
        // Ties go to the smaller index, matching knn's heap ordering.
        if (d2 < best_d2 || (d2 == best_d2 && idx < best)) {
          best_d2 = d2;
          best = idx;
        }
      }
      continue;
    }
    const double delta = query[n.axis] - n.split_value;
    const int32_t near = delta < 0 ? n.left : n.right;
    const int32_t far = delta < 0 ? n.right : n.left;
    stack[top++] = {far, std::max(e.plane_dist2, delta * delta)};
    stack[top++] = {near, e.plane_dist2};
  }
  return {best, best_d2};
}

std::vector<std::pair<Eigen::Index, double>> KdTree3::knn(const Vec3& query, int k) const {
  std::vector<std::pair<Eigen::Index, double>> heap;  // max-heap on (dist2, index)
  if (empty() || k <= 0) return heap;
  const size_t want = static_cast<size_t>(std::min<Eigen::Index>(k, size()));

  auto heap_less = [](const std::pair<Eigen::Index, double>& a,
                      const std::pair<Eigen::Index, double>& b) {
    // "less" for a max-heap: worst candidate on top; larger index is worse on ties.
    return a.second < b.second || (a.second == b.second && a.first < b.first);
  };

  double worst = std::numeric_limits<double>::infinity();
  StackEntry stack[kMaxStack];
  int top = 0;
  stack[top++] = {0, 0.0};
  while (top > 0) {
    const StackEntry e = stack[--top];
    if (heap.size() == want && e.plane_dist2 > worst) continue;
    const Node& n = nodes_[e.node];
    if (n.axis < 0) {
      for (int32_t i = n.begin; i < n.end; ++i) {
        const int32_t idx = order_[i];
        const double d2 = (pts_.row(idx).transpose() - query).squaredNorm();
        const std::pair<Eigen::Index, double> cand(idx, d2);
        if (heap.size() < want) {
          heap.push_back(cand);
          std::push_heap(heap.begin(), heap.end(), heap_less);
        } else if (heap_less(cand, heap.front())) {
          std::pop_heap(heap.begin(), heap.end(), heap_less);
          heap.back() = cand;
          std::push_heap(heap.begin(), heap.end(), heap_less);
        }
        if (heap.size() == want) worst = heap.front().second;
      }
      continue;
    }
    const double delta = query[n.axis] - n.split_value;
    const double plane2 = delta * delta;
    const int32_t near = delta < 0 ? n.left : n.right;
    const int32_t far = delta < 0 ? n.right : n.left;
    // Far side first on the stack so the near side is explored first.
    stack[top++] = {far, std::max(e.plane_dist2, plane2)};
    stack[top++] = {near, e.plane_dist2};
  }

  std::sort_heap(heap.begin(), heap.end(), heap_less);
  return heap;
}

bool KdTree3::has_neighbor_within(const Vec3& query, double radius) const {
  if (empty()) return false;
  const double r2 = radius * radius;
  int32_t stack[kMaxStack];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& n = nodes_[stack[--top]];
    if (n.axis < 0) {
      for (int32_t i = n.begin; i < n.end; ++i)
        if ((pts_.row(order_[i]).transpose() - query).squaredNorm() <= r2) return true;
      continue;
    }
    const double delta = query[n.axis] - n.split_value;
    const int32_t near = delta < 0 ? n.left : n.right;
    const int32_t far = delta < 0 ? n.right : n.left;
    if (delta * delta <= r2) stack[top++] = far;
    stack[top++] = near;
  }
  return false;
}

std::vector<Eigen::Index> KdTree3::radius_indices(const Vec3& query, double radius) const {
  std::vector<Eigen::Index> out;
  if (empty()) return out;
  const double r2 = radius * radius;
  std::vector<int32_t> stack{0};
  while (!stack.empty()) {
    const Node& n = nodes_[stack.back()];
    stack.pop_back();
    if (n.axis < 0) {
      for (int32_t i = n.begin; i < n.end; ++i)
        if ((pts_.row(order_[i]).transpose() - query).squaredNorm() <= r2)
          out.push_back(order_[i]);
      continue;
    }
    const double delta = query[n.axis] - n.split_value;
    const int32_t near = delta < 0 ? n.left : n.right;
    const int32_t far = delta < 0 ? n.right : n.left;
    stack.push_back(near);
    if (delta * delta <= r2) stack.push_back(far);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace pgslam
