#pragma once

// SE(3) factor graph: prior, odometry, and loop-closure factors over
// keyframe poses, optimized by Levenberg-Marquardt on the manifold, plus
// Dijkstra path queries and g2o text import/export.

#include <string>
#include <vector>

#include "pgslam/geometry.hpp"

namespace pgslam {

struct GraphNode {
  int id = -1;
  Pose estimate;
  double timestamp = 0.0;
};

enum class FactorKind { kPrior, kOdometry, kLoop };

struct Factor {
  FactorKind kind = FactorKind::kOdometry;
  int node_a = -1;
  int node_b = -1;  // unused for priors
  Pose measurement;  // prior: global pose; otherwise relative a -> b
  Covariance6 noise = Covariance6::Identity();
};

/// Whitened residual: L^-1 * se3_log(measurement^-1 * (T_a^-1 * T_b)) with
/// L the lower Cholesky factor of the noise, so the squared norm is the
/// Mahalanobis distance. Priors use T_a alone in place of the relative.
Vec6 factor_residual(const Factor& factor, const std::vector<Pose>& estimates);

/// Whitened residual Jacobians with respect to right perturbations of the
/// factor endpoints (j_b stays untouched for priors). Closed-form up to a
/// truncated inverse-right-Jacobian series: accurate to better than 1e-5
/// relative while the residual stays moderate (rotation under ~2 rad),
/// which holds for factors built from accepted registrations.
void factor_jacobians(const Factor& factor, const std::vector<Pose>& estimates,
                      Mat6* j_a, Mat6* j_b);

struct OptimizeConfig {
  int max_iterations = 100;
  double rel_cost_tol = 1e-9;  // relative cost decrease per accepted step
  double update_tol = 1e-8;    // accepted step norm
  bool analytic_jacobians = false;  // central differences by default
};

struct OptimizeSummary {
  int iterations = 0;  // accepted steps
  double initial_cost = 0.0;
  double final_cost = 0.0;
  bool converged = false;
};

class PoseGraph {
 public:
  /// Appends a node; ids are issued contiguously from 0.
  int add_node(const Pose& estimate, double timestamp = 0.0);

  void add_prior(int node, const Pose& pose, const Covariance6& noise);
  /// Odometry factors connect consecutive nodes only.
  void add_odometry_factor(int from, int to, const Pose& relative,
                           const Covariance6& noise);
  /// Loop factors must span at least min_node_gap ids.
  void add_loop_factor(int from, int to, const Pose& relative,
                       const Covariance6& noise, int min_node_gap = 10);

  size_t num_nodes() const { return nodes_.size(); }
  size_t num_factors() const { return factors_.size(); }
  const std::vector<GraphNode>& nodes() const { return nodes_; }
  const std::vector<Factor>& factors() const { return factors_; }
  const Pose& estimate(int node) const;
  void set_estimate(int node, const Pose& pose);
  std::vector<Pose> estimates() const;

  /// Half the sum of squared whitened residuals.
  double total_cost() const;

  /// Levenberg-Marquardt with boxplus retraction and sparse Cholesky
  /// normal equations. Accepted steps never increase the cost. Throws
  /// std::runtime_error when no prior anchors the gauge or the graph is
  /// disconnected.
  OptimizeSummary optimize(const OptimizeConfig& cfg = {});

  /// Dijkstra over odometry and loop edges weighted by the translational
  /// distance between current endpoint estimates. Returns the node
  /// sequence starting at `from`. Throws std::runtime_error when `to` is
  /// unreachable.
  std::vector<int> shortest_path_home(int from, int to) const;

  /// g2o text format: VERTEX_SE3:QUAT, EDGE_SE3:QUAT with 21-entry
  /// upper-triangular information, FIX lines for priors. Saving after a
  /// load reproduces the file byte for byte. A prior is exported as a FIX
  /// of its node and re-imported as a tight prior at the stored vertex
  /// estimate; its own pose and noise do not survive the trip.
  void save_g2o(const std::string& path) const;
  static PoseGraph load_g2o(const std::string& path);

 private:
  void check_node(int node, const char* what) const;
  void append_factor(const Factor& factor, const char* what);

  std::vector<GraphNode> nodes_;
  std::vector<Factor> factors_;
};

}  // namespace pgslam
