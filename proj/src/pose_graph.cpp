#include "pgslam/pose_graph.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace pgslam {

namespace {

// Lower-triangular inverse Cholesky factor of the noise; maps raw
// residuals to whitened ones.
Mat6 whitener(const Covariance6& noise) {
  Eigen::LLT<Mat6> llt(noise);
  return llt.matrixL().solve(Mat6::Identity());
}

Vec6 raw_residual(const Factor& f, const std::vector<Pose>& estimates) {
  Pose rel;
  if (f.kind == FactorKind::kPrior) {
    rel = estimates[static_cast<size_t>(f.node_a)];
  } else {
    rel = compose(invert(estimates[static_cast<size_t>(f.node_a)]),
                  estimates[static_cast<size_t>(f.node_b)]);
  }
  return se3_log(compose(invert(f.measurement), rel));
}

// Adjoint of a twist (rho, phi) acting on twists in the same ordering.
Mat6 twist_ad(const Vec6& xi) {
  Mat6 ad = Mat6::Zero();
  const Mat3 phi_hat = skew(Vec3(xi.tail<3>()));
  ad.topLeftCorner<3, 3>() = phi_hat;
  ad.bottomRightCorner<3, 3>() = phi_hat;
  ad.topRightCorner<3, 3>() = skew(Vec3(xi.head<3>()));
  return ad;
}

// Inverse right Jacobian of se3_log at r: d/dxi log(exp(r) * exp(xi)) at 0.
// Bernoulli series in the twist adjoint, truncated after ad^14; the tail
// is below 1e-6 for |r| up to about 2.
Mat6 jr_inv(const Vec6& r) {
  static const struct {
    int power;
    double coeff;
  } kTerms[] = {
      {1, 0.5},
      {2, 1.0 / 12.0},
      {4, -1.0 / 720.0},
      {6, 1.0 / 30240.0},
      {8, -1.0 / 1209600.0},
      {10, 1.0 / 47900160.0},
      {12, -691.0 / 1307674368000.0},
      {14, 1.0 / 74724249600.0},
  };
  const Mat6 ad = twist_ad(r);
  Mat6 sum = Mat6::Identity();
  Mat6 power = Mat6::Identity();
  int have = 0;
  for (const auto& term : kTerms) {
    while (have < term.power) {
      power = (power * ad).eval();
      ++have;
    }
    sum += term.coeff * power;
  }
  return sum;
}

double factor_cost(const Factor& f, const std::vector<Pose>& estimates,
                   const Mat6& white) {
  const Vec6 r = white * raw_residual(f, estimates);
  return 0.5 * r.squaredNorm();
}

}  // namespace

Vec6 factor_residual(const Factor& factor, const std::vector<Pose>& estimates) {
  return whitener(factor.noise) * raw_residual(factor, estimates);
}

void factor_jacobians(const Factor& factor, const std::vector<Pose>& estimates,
                      Mat6* j_a, Mat6* j_b) {
  const Vec6 r = raw_residual(factor, estimates);
  const Mat6 white = whitener(factor.noise);
  const Mat6 jri = jr_inv(r);
  if (factor.kind == FactorKind::kPrior) {
    if (j_a) *j_a = white * jri;
    return;
  }
  // r(xi_b) = log(E exp(xi_b)); r(xi_a) = log(E exp(-Adj(T_b^-1 T_a) xi_a)).
  const Pose b_to_a =
      compose(invert(estimates[static_cast<size_t>(factor.node_b)]),
              estimates[static_cast<size_t>(factor.node_a)]);
  if (j_a) *j_a = -white * jri * adjoint(b_to_a);
  if (j_b) *j_b = white * jri;
}

int PoseGraph::add_node(const Pose& estimate, double timestamp) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({id, estimate, timestamp});
  return id;
}

void PoseGraph::check_node(int node, const char* what) const {
  if (node < 0 || node >= static_cast<int>(nodes_.size())) {
    throw std::invalid_argument(std::string(what) + ": unknown node " +
                                std::to_string(node));
  }
}

void PoseGraph::append_factor(const Factor& factor, const char* what) {
  check_node(factor.node_a, what);
  if (factor.kind != FactorKind::kPrior) check_node(factor.node_b, what);
  if (!is_valid_covariance(factor.noise)) {
    throw std::invalid_argument(std::string(what) +
                                ": noise must be symmetric positive definite");
  }
  factors_.push_back(factor);
}

void PoseGraph::add_prior(int node, const Pose& pose,
                          const Covariance6& noise) {
  Factor f;
  f.kind = FactorKind::kPrior;
  f.node_a = node;
  f.measurement = pose;
  f.noise = noise;
  append_factor(f, "add_prior");
}

void PoseGraph::add_odometry_factor(int from, int to, const Pose& relative,
                                    const Covariance6& noise) {
  if (to != from + 1) {
    throw std::invalid_argument(
        "add_odometry_factor: endpoints must be consecutive, got " +
        std::to_string(from) + " -> " + std::to_string(to));
  }
  Factor f;
  f.kind = FactorKind::kOdometry;
  f.node_a = from;
  f.node_b = to;
  f.measurement = relative;
  f.noise = noise;
  append_factor(f, "add_odometry_factor");
}

void PoseGraph::add_loop_factor(int from, int to, const Pose& relative,
                                const Covariance6& noise, int min_node_gap) {
  if (std::abs(to - from) < min_node_gap) {
    throw std::invalid_argument(
        "add_loop_factor: endpoints " + std::to_string(from) + " and " +
        std::to_string(to) + " are closer than min_node_gap " +
        std::to_string(min_node_gap));
  }
  Factor f;
  f.kind = FactorKind::kLoop;
  f.node_a = from;
  f.node_b = to;
  f.measurement = relative;
  f.noise = noise;
  append_factor(f, "add_loop_factor");
}

const Pose& PoseGraph::estimate(int node) const {
  check_node(node, "estimate");
  return nodes_[static_cast<size_t>(node)].estimate;
}

void PoseGraph::set_estimate(int node, const Pose& pose) {
  check_node(node, "set_estimate");
  nodes_[static_cast<size_t>(node)].estimate = pose;
}

std::vector<Pose> PoseGraph::estimates() const {
  std::vector<Pose> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.estimate);
  return out;
}

double PoseGraph::total_cost() const {
  const std::vector<Pose> est = estimates();
  double cost = 0.0;
  for (const auto& f : factors_) {
    cost += factor_cost(f, est, whitener(f.noise));
  }
  return cost;
}

OptimizeSummary PoseGraph::optimize(const OptimizeConfig& cfg) {
  const int n = static_cast<int>(nodes_.size());
  if (n == 0) throw std::runtime_error("optimize: empty graph");

  bool has_prior = false;
  std::vector<int> component(static_cast<size_t>(n), -1);
  std::vector<std::vector<int>> adjacency(static_cast<size_t>(n));
  for (const auto& f : factors_) {
    if (f.kind == FactorKind::kPrior) {
      has_prior = true;
    } else {
      adjacency[static_cast<size_t>(f.node_a)].push_back(f.node_b);
      adjacency[static_cast<size_t>(f.node_b)].push_back(f.node_a);
    }
  }
  if (!has_prior) {
    throw std::runtime_error("optimize: graph has no prior to fix the gauge");
  }
  std::vector<int> stack = {0};
  component[0] = 0;
  while (!stack.empty()) {
    const int v = stack.back();
    stack.pop_back();
    for (int w : adjacency[static_cast<size_t>(v)]) {
      if (component[static_cast<size_t>(w)] < 0) {
        component[static_cast<size_t>(w)] = 0;
        stack.push_back(w);
      }
    }
  }
  if (std::count(component.begin(), component.end(), 0) != n) {
    throw std::runtime_error("optimize: graph is disconnected");
  }

  std::vector<Mat6> whites;
  whites.reserve(factors_.size());
  for (const auto& f : factors_) whites.push_back(whitener(f.noise));

  std::vector<Pose> est = estimates();
  // Residual rotations can hit the logarithm singularity on wild trial
  // steps; such a trial is rejected instead of aborting the solve.
  const auto eval_cost =
      [&](const std::vector<Pose>& poses) -> std::optional<double> {
    double cost = 0.0;
    try {
      for (size_t i = 0; i < factors_.size(); ++i) {
        cost += factor_cost(factors_[i], poses, whites[i]);
      }
    } catch (const std::domain_error&) {
      return std::nullopt;
    }
    return cost;
  };

  const std::optional<double> initial = eval_cost(est);
  if (!initial) {
    throw std::runtime_error(
        "optimize: initial residual rotation at the logarithm singularity");
  }

  const int rows = 6 * static_cast<int>(factors_.size());
  const int cols = 6 * n;
  const double fd_eps = 1e-6;

  OptimizeSummary summary;
  summary.initial_cost = *initial;
  double cost = *initial;
  double lambda = 1e-4;

  Eigen::SparseMatrix<double> jac(rows, cols);
  Eigen::VectorXd res(rows);
  std::vector<Eigen::Triplet<double>> triplets;

  for (int iter = 0; iter < cfg.max_iterations; ++iter) {
    triplets.clear();
    for (size_t fi = 0; fi < factors_.size(); ++fi) {
      const Factor& f = factors_[fi];
      const int row0 = 6 * static_cast<int>(fi);
      res.segment<6>(row0) = whites[fi] * raw_residual(f, est);

      const bool binary = f.kind != FactorKind::kPrior;
      Mat6 j_a, j_b;
      if (cfg.analytic_jacobians) {
        factor_jacobians(f, est, &j_a, binary ? &j_b : nullptr);
      } else {
        const int endpoints[2] = {f.node_a, binary ? f.node_b : -1};
        Mat6* blocks[2] = {&j_a, &j_b};
        for (int e = 0; e < (binary ? 2 : 1); ++e) {
          const size_t node = static_cast<size_t>(endpoints[e]);
          const Pose saved = est[node];
          for (int k = 0; k < 6; ++k) {
            Vec6 delta = Vec6::Zero();
            delta[k] = fd_eps;
            est[node] = boxplus(saved, delta);
            const Vec6 plus = whites[fi] * raw_residual(f, est);
            delta[k] = -fd_eps;
            est[node] = boxplus(saved, delta);
            const Vec6 minus = whites[fi] * raw_residual(f, est);
            blocks[e]->col(k) = (plus - minus) / (2.0 * fd_eps);
          }
          est[node] = saved;
        }
      }
      for (int r = 0; r < 6; ++r) {
        for (int c = 0; c < 6; ++c) {
          triplets.emplace_back(row0 + r, 6 * f.node_a + c, j_a(r, c));
          if (binary) {
            triplets.emplace_back(row0 + r, 6 * f.node_b + c, j_b(r, c));
          }
        }
      }
    }
    jac.setFromTriplets(triplets.begin(), triplets.end());

    const Eigen::SparseMatrix<double> hess =
        Eigen::SparseMatrix<double>(jac.transpose()) * jac;
    const Eigen::VectorXd grad = jac.transpose() * res;

    bool accepted = false;
    double step_norm = 0.0;
    for (int attempt = 0; attempt < 25 && !accepted; ++attempt) {
      Eigen::SparseMatrix<double> damped = hess;
      for (int i = 0; i < cols; ++i) {
        damped.coeffRef(i, i) += lambda * std::max(hess.coeff(i, i), 1e-12);
      }
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd delta = solver.solve(-grad);
      std::vector<Pose> trial = est;
      for (int i = 0; i < n; ++i) {
        trial[static_cast<size_t>(i)] =
            boxplus(est[static_cast<size_t>(i)], delta.segment<6>(6 * i));
      }
      const std::optional<double> trial_cost = eval_cost(trial);
      if (trial_cost && *trial_cost <= cost) {
        est = std::move(trial);
        step_norm = delta.norm();
        const double drop = cost - *trial_cost;
        cost = *trial_cost;
        lambda = std::max(lambda / 3.0, 1e-12);
        accepted = true;
        ++summary.iterations;
        if (drop < cfg.rel_cost_tol * std::max(cost, 1e-300) ||
            step_norm < cfg.update_tol) {
          summary.converged = true;
        }
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) {
      // Damping grew without producing a usable step: local minimum.
      summary.converged = true;
      break;
    }
    if (summary.converged) break;
  }

  summary.final_cost = cost;
  for (int i = 0; i < n; ++i) {
    nodes_[static_cast<size_t>(i)].estimate = est[static_cast<size_t>(i)];
  }
  return summary;
}

std::vector<int> PoseGraph::shortest_path_home(int from, int to) const {
  check_node(from, "shortest_path_home");
  check_node(to, "shortest_path_home");
  if (from == to) return {from};

  const size_t n = nodes_.size();
  std::vector<std::vector<std::pair<int, double>>> adjacency(n);
  for (const auto& f : factors_) {
    if (f.kind == FactorKind::kPrior) continue;
    const double w = (nodes_[static_cast<size_t>(f.node_a)].estimate.translation -
                      nodes_[static_cast<size_t>(f.node_b)].estimate.translation)
                         .norm();
    adjacency[static_cast<size_t>(f.node_a)].emplace_back(f.node_b, w);
    adjacency[static_cast<size_t>(f.node_b)].emplace_back(f.node_a, w);
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> dist(n, inf);
  std::vector<int> parent(n, -1);
  using Entry = std::pair<double, int>;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<Entry>> queue;
  dist[static_cast<size_t>(from)] = 0.0;
  queue.emplace(0.0, from);
  while (!queue.empty()) {
    const auto [d, v] = queue.top();
    queue.pop();
    if (d > dist[static_cast<size_t>(v)]) continue;
    if (v == to) break;
    for (const auto& [w, weight] : adjacency[static_cast<size_t>(v)]) {
      const double cand = d + weight;
      if (cand < dist[static_cast<size_t>(w)]) {
        dist[static_cast<size_t>(w)] = cand;
        parent[static_cast<size_t>(w)] = v;
        queue.emplace(cand, w);
      }
    }
  }
  if (dist[static_cast<size_t>(to)] == inf) {
    throw std::runtime_error("shortest_path_home: node " + std::to_string(to) +
                             " unreachable from " + std::to_string(from));
  }
  std::vector<int> path;
  for (int v = to; v != -1; v = parent[static_cast<size_t>(v)]) {
    path.push_back(v);
  }
  std::reverse(path.begin(), path.end());
  return path;
}

void PoseGraph::save_g2o(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("g2o: cannot write " + path);
  char buf[64];
  const auto num = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.9f", v);
    return std::string(buf);
  };
  for (const auto& node : nodes_) {
    const Eigen::Quaterniond q = to_quaternion(node.estimate);
    out << "VERTEX_SE3:QUAT " << node.id << ' '
        << num(node.estimate.translation.x()) << ' '
        << num(node.estimate.translation.y()) << ' '
        << num(node.estimate.translation.z()) << ' ' << num(q.x()) << ' '
        << num(q.y()) << ' ' << num(q.z()) << ' ' << num(q.w()) << '\n';
  }
  for (const auto& f : factors_) {
    if (f.kind == FactorKind::kPrior) out << "FIX " << f.node_a << '\n';
  }
  for (const auto& f : factors_) {
    if (f.kind == FactorKind::kPrior) continue;
    const Eigen::Quaterniond q = to_quaternion(f.measurement);
    const Mat6 info = f.noise.inverse();
    out << "EDGE_SE3:QUAT " << f.node_a << ' ' << f.node_b << ' '
        << num(f.measurement.translation.x()) << ' '
        << num(f.measurement.translation.y()) << ' '
        << num(f.measurement.translation.z()) << ' ' << num(q.x()) << ' '
        << num(q.y()) << ' ' << num(q.z()) << ' ' << num(q.w());
    for (int i = 0; i < 6; ++i) {
      for (int j = i; j < 6; ++j) {
        out << ' ' << num(info(i, j));
      }
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("g2o: write failed for " + path);
}

PoseGraph PoseGraph::load_g2o(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("g2o: cannot read " + path);

  struct Vertex {
    Pose pose;
  };
  struct Edge {
    int a, b;
    Pose measurement;
    Covariance6 noise;
  };
  std::map<int, Vertex> vertices;
  std::vector<int> fixes;
  std::vector<Edge> edges;

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream ss(line);
    std::string tag;
    if (!(ss >> tag) || tag[0] == '#') continue;
    const auto fail = [&](const std::string& why) {
      throw std::runtime_error("g2o: " + why + " at line " +
                               std::to_string(line_no));
    };
    if (tag == "VERTEX_SE3:QUAT") {
      int id;
      double x, y, z, qx, qy, qz, qw;
      if (!(ss >> id >> x >> y >> z >> qx >> qy >> qz >> qw)) {
        fail("malformed vertex");
      }
      if (!vertices
               .emplace(id, Vertex{pose_from_quaternion(Vec3(x, y, z), qx, qy,
                                                        qz, qw)})
               .second) {
        fail("duplicate vertex " + std::to_string(id));
      }
    } else if (tag == "EDGE_SE3:QUAT") {
      Edge e;
      double x, y, z, qx, qy, qz, qw;
      if (!(ss >> e.a >> e.b >> x >> y >> z >> qx >> qy >> qz >> qw)) {
        fail("malformed edge");
      }
      Mat6 info;
      for (int i = 0; i < 6; ++i) {
        for (int j = i; j < 6; ++j) {
          double v;
          if (!(ss >> v)) fail("edge information matrix truncated");
          info(i, j) = v;
          info(j, i) = v;
        }
      }
      e.measurement = pose_from_quaternion(Vec3(x, y, z), qx, qy, qz, qw);
      Covariance6 noise = info.inverse();
      e.noise = 0.5 * (noise + noise.transpose());
      edges.push_back(e);
    } else if (tag == "FIX") {
      int id;
      if (!(ss >> id)) fail("malformed FIX");
      fixes.push_back(id);
    } else {
      fail("unknown tag " + tag);
    }
  }

  PoseGraph graph;
  int expected = 0;
  for (const auto& [id, v] : vertices) {
    if (id != expected++) {
      throw std::runtime_error("g2o: vertex ids not contiguous from 0");
    }
    graph.add_node(v.pose);
  }
  for (int id : fixes) {
    graph.check_node(id, "g2o FIX");
    Factor f;
    f.kind = FactorKind::kPrior;
    f.node_a = id;
    f.measurement = graph.estimate(id);
    f.noise = 1e-12 * Covariance6::Identity();
    graph.append_factor(f, "g2o FIX");
  }
  for (const auto& e : edges) {
    Factor f;
    f.kind = std::abs(e.b - e.a) == 1 ? FactorKind::kOdometry : FactorKind::kLoop;
    f.node_a = e.a;
    f.node_b = e.b;
    f.measurement = e.measurement;
    f.noise = e.noise;
    graph.append_factor(f, "g2o edge");
  }
  return graph;
}

}  // namespace pgslam
