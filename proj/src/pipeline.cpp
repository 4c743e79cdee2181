#include "pgslam/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <utility>

#include "pgslam/evaluation.hpp"

namespace pgslam {

namespace {

class StageTimer {
  using Clock = std::chrono::steady_clock;

 public:
  explicit StageTimer(double& acc_ms) : acc_ms_(acc_ms), start_(Clock::now()) {}
  ~StageTimer() {
    acc_ms_ +=
        std::chrono::duration<double, std::milli>(Clock::now() - start_).count();
  }

 private:
  double& acc_ms_;
  Clock::time_point start_;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const char* why) {
  throw std::invalid_argument("config: key '" + key + "' " + why + ": '" +
                              value + "'");
}

double to_double(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const double v = std::stod(value, &pos);
    if (pos != value.size()) bad_value(key, value, "has trailing characters");
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value, "is not a number");
  } catch (const std::out_of_range&) {
    bad_value(key, value, "is out of range");
  }
}

int to_int(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const long v = std::stol(value, &pos);
    if (pos != value.size()) bad_value(key, value, "has trailing characters");
    return static_cast<int>(v);
  } catch (const std::invalid_argument&) {
    bad_value(key, value, "is not an integer");
  } catch (const std::out_of_range&) {
    bad_value(key, value, "is out of range");
  }
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, value, "is not a boolean (true/false/1/0)");
}

std::uint64_t to_seed(const std::string& key, const std::string& value) {
  try {
    size_t pos = 0;
    const unsigned long long v = std::stoull(value, &pos);
    if (pos != value.size()) bad_value(key, value, "has trailing characters");
    return v;
  } catch (const std::invalid_argument&) {
    bad_value(key, value, "is not an unsigned integer");
  } catch (const std::out_of_range&) {
    bad_value(key, value, "is out of range");
  }
}

void require(bool ok, const std::string& key, const std::string& value,
             const char* range) {
  if (!ok) bad_value(key, value, range);
}

std::string trim(const std::string& s) {
  const size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

using Setter =
    std::function<void(PipelineConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& key_table() {
  static const auto* table = new std::map<std::string, Setter>{
      {"icp.max_iterations",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.icp.max_iterations = to_int(k, v);
         require(c.icp.max_iterations >= 1, k, v, "must be >= 1");
       }},
      {"icp.overlap_radius",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.icp.overlap_radius = to_double(k, v);
         require(c.icp.overlap_radius > 0, k, v, "must be > 0");
       }},
      {"icp.min_overlap",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.icp.min_overlap = to_double(k, v);
         require(c.icp.min_overlap >= 0 && c.icp.min_overlap <= 1, k, v,
                 "must be in [0,1]");
       }},
      {"icp.voxel_size",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.icp.voxel_size = to_double(k, v);
         require(c.icp.voxel_size >= 0, k, v, "must be >= 0");
       }},
      {"icp.min_points",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.icp.min_points = to_int(k, v);
         require(c.icp.min_points >= 6, k, v, "must be >= 6");
       }},
      {"icp.convergence_twist_norm",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.icp.convergence_twist_norm = to_double(k, v);
         require(c.icp.convergence_twist_norm > 0, k, v, "must be > 0");
       }},
      {"icp.normal_knn",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.icp.normal_knn = to_int(k, v);
         require(c.icp.normal_knn >= 3, k, v, "must be >= 3");
       }},
      {"icp.overlap_refresh",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.icp.overlap_refresh = to_int(k, v);
         require(c.icp.overlap_refresh >= 1, k, v, "must be >= 1");
       }},
      {"seg.angle_thresh_deg",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmentation.angle_thresh_deg = to_double(k, v);
         require(c.segmentation.angle_thresh_deg > 0 &&
                     c.segmentation.angle_thresh_deg <= 90,
                 k, v, "must be in (0,90]");
       }},
      {"seg.plane_inlier_dist",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmentation.plane_inlier_dist = to_double(k, v);
         require(c.segmentation.plane_inlier_dist > 0, k, v, "must be > 0");
       }},
      {"seg.min_plane_points",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmentation.min_plane_points = to_int(k, v);
         require(c.segmentation.min_plane_points >= 3, k, v, "must be >= 3");
       }},
      {"seg.cluster_dist",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmentation.cluster_dist = to_double(k, v);
         require(c.segmentation.cluster_dist > 0, k, v, "must be > 0");
       }},
      {"seg.min_segment_points",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmentation.min_segment_points = to_int(k, v);
         require(c.segmentation.min_segment_points >= 1, k, v, "must be >= 1");
       }},
      {"seg.normal_knn",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmentation.normal_knn = to_int(k, v);
         require(c.segmentation.normal_knn >= 3, k, v, "must be >= 3");
       }},
      {"seg.ground_max_tilt_deg",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.segmentation.ground_max_tilt_deg = to_double(k, v);
         require(c.segmentation.ground_max_tilt_deg >= 0 &&
                     c.segmentation.ground_max_tilt_deg < 90,
                 k, v, "must be in [0,90)");
       }},
      {"loop.base_radius",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.base_radius = to_double(k, v);
         require(c.loop.base_radius > 0, k, v, "must be > 0");
       }},
      {"loop.min_node_gap",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.min_node_gap = to_int(k, v);
         require(c.loop.min_node_gap >= 1, k, v, "must be >= 1");
       }},
      {"loop.max_candidates",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.max_candidates = to_int(k, v);
         require(c.loop.max_candidates >= 1, k, v, "must be >= 1");
       }},
      {"loop.desc_thresh",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.desc_thresh = to_double(k, v);
         require(c.loop.desc_thresh > 0, k, v, "must be > 0");
       }},
      {"loop.inlier_dist",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.inlier_dist = to_double(k, v);
         require(c.loop.inlier_dist > 0, k, v, "must be > 0");
       }},
      {"loop.min_inliers",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.loop.min_inliers = to_int(k, v);
         require(c.loop.min_inliers >= 3, k, v, "must be >= 3");
       }},
      {"loop.use_geometric",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.use_geometric = to_bool(k, v);
       }},
      {"loop.use_descriptor",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.use_descriptor = to_bool(k, v);
       }},
      {"verify.enabled",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.verify_enabled = to_bool(k, v);
       }},
      {"verify.k",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.verify_k = to_int(k, v);
         require(c.verify_k >= 1, k, v, "must be >= 1");
       }},
      {"verify.overlap_radius",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.verify_overlap_radius = to_double(k, v);
         require(c.verify_overlap_radius > 0, k, v, "must be > 0");
       }},
      {"verify.min_match_score",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.verify_min_match_score = to_double(k, v);
         require(c.verify_min_match_score >= 0 && c.verify_min_match_score <= 1,
                 k, v, "must be in [0,1]");
       }},
      {"verify.max_risk",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.verify_max_risk = to_double(k, v);
         require(c.verify_max_risk >= 0 && c.verify_max_risk <= 1, k, v,
                 "must be in [0,1]");
       }},
      {"keyframe.dist",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.keyframe_dist = to_double(k, v);
         require(c.keyframe_dist > 0, k, v, "must be > 0");
       }},
      {"keyframe.angle",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.keyframe_angle_deg = to_double(k, v);
         require(c.keyframe_angle_deg > 0 && c.keyframe_angle_deg <= 180, k, v,
                 "must be in (0,180]");
       }},
      {"map.voxel",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.map_voxel = to_double(k, v);
         require(c.map_voxel > 0, k, v, "must be > 0");
       }},
      {"seed",
       [](PipelineConfig& c, const std::string& k, const std::string& v) {
         c.seed = to_seed(k, v);
       }},
  };
  return *table;
}

Covariance6 make_noise(double sigma_t, double sigma_r) {
  Vec6 d;
  d << sigma_t * sigma_t, sigma_t * sigma_t, sigma_t * sigma_t,
      sigma_r * sigma_r, sigma_r * sigma_r, sigma_r * sigma_r;
  return d.asDiagonal();
}

}  // namespace

PipelineConfig parse_config(const std::string& text) {
  PipelineConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string stripped = trim(line);
    if (stripped.empty()) continue;
    const size_t eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(line_no) +
                                  " is not a 'key = value' pair: '" + stripped +
                                  "'");
    }
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    const auto it = key_table().find(key);
    if (it == key_table().end()) {
      throw std::invalid_argument("config: unknown key '" + key + "' at line " +
                                  std::to_string(line_no));
    }
    it->second(cfg, key, value);
  }
  return cfg;
}

PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot read " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

PointCloud export_map(const PoseGraph& graph,
                      const std::vector<PointCloud>& keyframe_clouds,
                      double voxel) {
  if (graph.num_nodes() == 0) {
    throw std::invalid_argument("export_map: empty graph");
  }
  if (keyframe_clouds.size() != graph.num_nodes()) {
    throw std::invalid_argument("export_map: cloud count does not match nodes");
  }
  Eigen::Index total = 0;
  for (const auto& c : keyframe_clouds) total += c.points.rows();
  PointCloud map;
  map.frame_id = "map";
  map.points.resize(total, 3);
  Eigen::Index row = 0;
  for (size_t i = 0; i < keyframe_clouds.size(); ++i) {
    const PointCloud moved =
        apply(graph.estimate(static_cast<int>(i)), keyframe_clouds[i]);
    map.points.middleRows(row, moved.points.rows()) = moved.points;
    row += moved.points.rows();
  }
  return voxel_downsample(map, voxel);
}

SlamResult run_slam(const ScanSequence& sequence, const PipelineConfig& cfg) {
  const auto& frames = sequence.frames;
  if (frames.size() < 2) {
    throw std::invalid_argument("run_slam: need at least 2 frames");
  }

  VerificationConfig vcfg;
  vcfg.segmentation = cfg.segmentation;
  vcfg.overlap_radius = cfg.verify_overlap_radius;
  vcfg.min_match_score = cfg.verify_min_match_score;
  vcfg.max_risk = cfg.verify_max_risk;

  OptimizeConfig ocfg;
  ocfg.analytic_jacobians = true;  // FD-gated elsewhere; residuals stay small

  SlamResult out;
  PoseGraph& graph = out.graph;
  RunReport& report = out.report;

  std::vector<PointCloud> kf_clouds;
  std::vector<std::vector<Vec3>> kf_centroids;  // node frame
  std::vector<std::vector<SegmentDescriptor>> kf_descriptors;
  std::map<int, PreparedReference> prepared;  // by node
  std::map<int, std::vector<Plane>> planes;   // by node, for verification

  const auto prepared_for = [&](int node) -> const PreparedReference& {
    auto it = prepared.find(node);
    if (it == prepared.end()) {
      StageTimer timer(report.register_ms);
      it = prepared
               .emplace(node, prepare_reference(
                                  kf_clouds[static_cast<size_t>(node)], cfg.icp))
               .first;
    }
    return it->second;
  };
  const auto planes_for = [&](int node) -> const std::vector<Plane>& {
    auto it = planes.find(node);
    if (it == planes.end()) {
      StageTimer timer(report.segment_ms);
      it = planes
               .emplace(node, extract_planes(kf_clouds[static_cast<size_t>(node)],
                                             cfg.segmentation))
               .first;
    }
    return it->second;
  };
  // Segment descriptors for one keyframe scan; degenerate segments are
  // skipped (a collinear scatter has no eigenvector frame).
  const auto describe_keyframe = [&](const PointCloud& cloud,
                                     std::vector<Vec3>& centroids,
                                     std::vector<SegmentDescriptor>& descs) {
    StageTimer timer(report.segment_ms);
    std::vector<Segment> segments;
    try {
      segments = extract_segments(cloud, cfg.segmentation);
    } catch (const std::exception&) {
      return;  // degenerate scan: no descriptor entries
    }
    for (const Segment& seg : segments) {
      try {
        SegmentDescriptor d = describe_segment(seg);
        centroids.push_back(seg.centroid);
        descs.push_back(std::move(d));
      } catch (const std::invalid_argument&) {
      }
    }
  };

  struct ScanRecord {
    int node;
    Pose rel;  // scan pose in its reference keyframe's frame
    double timestamp;
  };
  std::vector<ScanRecord> records;
  records.reserve(frames.size());

  SegmentMap seg_map;
  const auto rebuild_segment_map = [&]() {
    seg_map.entries.clear();
    for (size_t node = 0; node < kf_centroids.size(); ++node) {
      const Pose& est = graph.estimate(static_cast<int>(node));
      for (size_t s = 0; s < kf_centroids[node].size(); ++s) {
        seg_map.entries.push_back({static_cast<int>(node),
                                   apply_point(est, kf_centroids[node][s]),
                                   kf_descriptors[node][s]});
      }
    }
  };

  // Frame 0 anchors the graph.
  graph.add_node(frames[0].odom_prior, frames[0].timestamp);
  graph.add_prior(0, frames[0].odom_prior, make_noise(1e-3, 1e-3));
  kf_clouds.push_back(frames[0].cloud);
  {
    std::vector<Vec3> centroids;
    std::vector<SegmentDescriptor> descs;
    if (cfg.use_descriptor) {
      describe_keyframe(frames[0].cloud, centroids, descs);
    }
    kf_centroids.push_back(std::move(centroids));
    kf_descriptors.push_back(std::move(descs));
  }
  rebuild_segment_map();
  records.push_back({0, Pose{}, frames[0].timestamp});

  int ref_node = 0;
  Pose t_ref_cur;
  Pose prev_odom = frames[0].odom_prior;
  Vec6 anchor_cov = frames[0].odom_covariance.diagonal();

  for (size_t i = 1; i < frames.size(); ++i) {
    const ScanFrame& frame = frames[i];
    const Pose odom_delta = compose(invert(prev_odom), frame.odom_prior);
    prev_odom = frame.odom_prior;
    const Pose init = compose(t_ref_cur, odom_delta);

    RegistrationResult reg;
    bool reg_ok = true;
    try {
      StageTimer timer(report.register_ms);
      reg = icp_register(frame.cloud, prepared_for(ref_node), init, cfg.icp);
      reg_ok = reg.converged && reg.overlap >= cfg.icp.min_overlap;
    } catch (const std::exception&) {
      reg_ok = false;
    }
    if (reg_ok) {
      t_ref_cur = reg.delta;
    } else {
      t_ref_cur = init;
      report.warnings.push_back(
          "scan " + std::to_string(i) +
          ": registration to reference failed, using odometry prior");
    }
    records.push_back({ref_node, t_ref_cur, frame.timestamp});

    const bool promote =
        t_ref_cur.translation.norm() >= cfg.keyframe_dist ||
        rotation_angle(t_ref_cur.rotation) >= deg2rad(cfg.keyframe_angle_deg);
    if (!promote) continue;

    const int node =
        graph.add_node(compose(graph.estimate(ref_node), t_ref_cur),
                       frame.timestamp);
    const double sigma_t = reg_ok ? std::max(reg.inlier_rmse, 0.02) : 0.2;
    const double sigma_r = reg_ok ? deg2rad(0.5) : deg2rad(5.0);
    graph.add_odometry_factor(ref_node, node, t_ref_cur,
                              make_noise(sigma_t, sigma_r));
    kf_clouds.push_back(frame.cloud);

    std::vector<Vec3> cur_centroids;
    std::vector<SegmentDescriptor> cur_descs;
    if (cfg.use_descriptor) {
      describe_keyframe(frame.cloud, cur_centroids, cur_descs);
    }

    // Candidate collection: descriptor proposals first (their inits carry
    // RANSAC support), then geometric window, one candidate per node.
    std::vector<LoopCandidate> candidates;
    if (cfg.use_descriptor && !cur_descs.empty()) {
      for (auto& c : descriptor_candidates(node, cur_descs, cur_centroids,
                                           seg_map, graph.estimates(), cfg.loop,
                                           cfg.seed)) {
        candidates.push_back(std::move(c));
      }
    }
    if (cfg.use_geometric) {
      const Covariance6 drift_cov =
          (frame.odom_covariance.diagonal() - anchor_cov)
              .cwiseMax(0.0)
              .asDiagonal();
      for (auto& c : geometric_candidates(node, graph.estimate(node), drift_cov,
                                          graph.estimates(), cfg.loop)) {
        const bool seen =
            std::any_of(candidates.begin(), candidates.end(),
                        [&](const LoopCandidate& have) {
                          return have.match_node == c.match_node;
                        });
        if (!seen) candidates.push_back(std::move(c));
      }
    }
    if (candidates.size() > static_cast<size_t>(cfg.loop.max_candidates)) {
      candidates.resize(static_cast<size_t>(cfg.loop.max_candidates));
    }

    for (const LoopCandidate& cand : candidates) {
      ++report.loops_proposed;
      RegistrationResult lreg;
      try {
        StageTimer timer(report.register_ms);
        lreg = icp_register(frame.cloud, prepared_for(cand.match_node),
                            cand.init_transform, cfg.icp);
      } catch (const std::exception&) {
        ++report.loops_rejected;
        continue;
      }
      if (!lreg.converged) {
        ++report.loops_rejected;
        continue;
      }

      double risk_value = 0.0;
      double alpha_value = std::numeric_limits<double>::quiet_NaN();
      bool accept;
      if (cfg.verify_enabled) {
        try {
          const Pose match_pose = graph.estimate(cand.match_node);
          const std::vector<Plane>& src = planes_for(cand.match_node);
          const std::vector<Plane>& tgt = planes_for(node);
          AlignabilityReport ver;
          {
            StageTimer timer(report.verify_ms);
            ver = predict_alignment_risk(
                kf_clouds[static_cast<size_t>(cand.match_node)], src,
                frame.cloud, tgt, match_pose, compose(match_pose, lreg.delta),
                cfg.verify_k, vcfg);
          }
          risk_value = ver.risk;
          alpha_value = ver.alpha;
          accept = ver.verifiable && ver.risk <= cfg.verify_max_risk &&
                   ver.omega >= cfg.icp.min_overlap;
        } catch (const std::exception&) {
          accept = false;
        }
      } else {
        accept = lreg.overlap >= cfg.icp.min_overlap;
      }

      if (!accept) {
        ++report.loops_rejected;
        continue;
      }
      graph.add_loop_factor(cand.match_node, node, lreg.delta,
                            make_noise(std::max(lreg.inlier_rmse, 0.02),
                                       deg2rad(0.5)),
                            cfg.loop.min_node_gap);
      ++report.loops_accepted;
      report.accepted_risks.push_back(risk_value);
      report.accepted_alphas.push_back(alpha_value);
      {
        StageTimer timer(report.optimize_ms);
        graph.optimize(ocfg);
      }
      anchor_cov = frame.odom_covariance.diagonal();
    }

    kf_centroids.push_back(std::move(cur_centroids));
    kf_descriptors.push_back(std::move(cur_descs));
    rebuild_segment_map();

    records.back() = {node, Pose{}, frame.timestamp};
    ref_node = node;
    t_ref_cur = Pose{};
  }

  for (const ScanRecord& rec : records) {
    StampedPose sp;
    sp.t = rec.timestamp;
    sp.pose = compose(graph.estimate(rec.node), rec.rel);
    out.trajectory.push_back(sp);
  }
  out.map = export_map(graph, kf_clouds, cfg.map_voxel);

  if (!sequence.ground_truth.empty()) {
    try {
      out.report.ate_m = ate(out.trajectory, sequence.ground_truth);
      const RpeResult r = rpe(out.trajectory, sequence.ground_truth, 1);
      out.report.rpe_t_m = r.trans_rmse;
      out.report.rpe_r_deg = r.rot_rmse_deg;
      out.report.drift_pct = drift_percent(out.trajectory, sequence.ground_truth);
      out.report.has_metrics = true;
    } catch (const std::exception& e) {
      out.report.warnings.push_back(std::string("metrics skipped: ") + e.what());
    }
  }
  return out;
}

}  // namespace pgslam
