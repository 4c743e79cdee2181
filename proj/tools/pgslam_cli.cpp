// Command line front end: full SLAM runs, the synthetic simulator, and
// standalone registration / verification / evaluation / graph queries.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pgslam/evaluation.hpp"
#include "pgslam/pipeline.hpp"
#include "pgslam/pose_graph.hpp"

namespace fs = std::filesystem;
using namespace pgslam;

namespace {

Pose pose_from_seven(const std::vector<double>& v) {
  return pose_from_quaternion(Vec3(v[0], v[1], v[2]), v[3], v[4], v[5], v[6]);
}

std::vector<fs::path> list_scan_files(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension().string();
    if (ext == ".ply" || ext == ".xyz") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty())
    throw std::runtime_error("no .ply or .xyz scans found in " + dir);
  return files;
}

// Sidecar rows: timestamp then the six odometry covariance diagonal entries
// (translation xyz, then rotation). One row per scan, # comments allowed.
std::vector<Vec6> load_cov_sidecar(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<Vec6> rows;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream ss(line);
    double t = 0.0;
    Vec6 d;
    if (!(ss >> t)) continue;  // blank line
    for (int i = 0; i < 6; ++i) {
      if (!(ss >> d(i)))
        throw std::runtime_error(path + ": row needs timestamp + 6 values");
    }
    rows.push_back(d.cwiseMax(1e-12));
  }
  return rows;
}

// Without recorded covariances the geometric loop search still needs a
// drift proxy: diagonal variances grown with traveled distance, 1.5%
// translational drift and 0.1 deg per sqrt-meter of heading noise.
std::vector<Vec6> synthesize_covariances(const Trajectory& odom) {
  std::vector<Vec6> rows(odom.size());
  double dist = 0.0;
  for (size_t i = 0; i < odom.size(); ++i) {
    if (i > 0)
      dist += (odom[i].pose.translation - odom[i - 1].pose.translation).norm();
    const double var_t = 1e-4 + (0.015 * dist) * (0.015 * dist);
    const double var_r = deg2rad(0.1) * deg2rad(0.1) * (1.0 + dist);
    Vec6 d;
    d << var_t, var_t, var_t, var_r, var_r, var_r;
    rows[i] = d;
  }
  return rows;
}

int cmd_run(const std::string& config_path, const std::string& scans_dir,
            const std::string& odom_path, const std::string& gt_path,
            const std::string& out_dir) {
  const PipelineConfig cfg = load_config(config_path);
  const auto scan_files = list_scan_files(scans_dir);
  const Trajectory odom = load_trajectory(odom_path);
  if (odom.size() != scan_files.size())
    throw std::runtime_error("scan/odometry count mismatch: " +
                             std::to_string(scan_files.size()) + " scans vs " +
                             std::to_string(odom.size()) + " poses");

  const fs::path sidecar = fs::path(odom_path).parent_path() / "odom_cov.txt";
  std::vector<Vec6> cov_rows;
  if (fs::exists(sidecar)) {
    cov_rows = load_cov_sidecar(sidecar.string());
    if (cov_rows.size() != odom.size())
      throw std::runtime_error("odom_cov.txt row count mismatch");
  } else {
    cov_rows = synthesize_covariances(odom);
    std::fprintf(stderr, "note: %s not found, synthesizing covariances\n",
                 sidecar.string().c_str());
  }

  ScanSequence seq;
  seq.frames.resize(scan_files.size());
  for (size_t i = 0; i < scan_files.size(); ++i) {
    ScanFrame& f = seq.frames[i];
    f.timestamp = odom[i].t;
    f.cloud = load_cloud(scan_files[i].string());
    f.cloud.timestamp = odom[i].t;
    f.odom_prior = odom[i].pose;
    f.odom_covariance = cov_rows[i].asDiagonal();
  }
  if (!gt_path.empty()) seq.ground_truth = load_trajectory(gt_path);

  const SlamResult result = run_slam(seq, cfg);

  fs::create_directories(out_dir);
  const fs::path out(out_dir);
  save_trajectory((out / "trajectory.tum").string(), result.trajectory);
  save_cloud_ply((out / "map.ply").string(), result.map);
  result.graph.save_g2o((out / "graph.g2o").string());

  const RunReport& rep = result.report;
  nlohmann::json j;
  j["ate_m"] = rep.ate_m;
  j["rpe_t_m"] = rep.rpe_t_m;
  j["rpe_r_deg"] = rep.rpe_r_deg;
  j["drift_pct"] = rep.drift_pct;
  j["loops_proposed"] = rep.loops_proposed;
  j["loops_accepted"] = rep.loops_accepted;
  j["loops_rejected"] = rep.loops_rejected;
  j["stage_ms"] = {{"register", rep.register_ms},
                   {"segment", rep.segment_ms},
                   {"verify", rep.verify_ms},
                   {"optimize", rep.optimize_ms}};
  std::ofstream(out / "report.json") << j.dump(2) << '\n';

  for (const auto& w : rep.warnings)
    std::fprintf(stderr, "warning: %s\n", w.c_str());
  std::printf("nodes=%zu loops_accepted=%d loops_rejected=%d\n",
              result.graph.num_nodes(), rep.loops_accepted, rep.loops_rejected);
  if (rep.has_metrics)
    std::printf("ate=%.6f rpe_t=%.6f rpe_r=%.6f drift=%.6f\n", rep.ate_m,
                rep.rpe_t_m, rep.rpe_r_deg, rep.drift_pct);
  return 0;
}

int cmd_simulate(const std::string& world, const std::string& out_dir,
                 double drift, std::uint64_t seed) {
  Scenario sc = make_scenario(world);
  sc.scan.seed = seed;
  const ScanSequence seq = simulate_sequence(sc.world, sc.path, drift, sc.scan);

  const fs::path out(out_dir);
  fs::create_directories(out / "scans");
  Trajectory odom;
  std::ofstream cov(out / "odom_cov.txt");
  cov << "# timestamp var_tx var_ty var_tz var_rx var_ry var_rz\n";
  char name[32];
  for (size_t i = 0; i < seq.frames.size(); ++i) {
    const ScanFrame& f = seq.frames[i];
    std::snprintf(name, sizeof(name), "scan_%05zu.ply", i);
    save_cloud_ply((out / "scans" / name).string(), f.cloud);
    odom.push_back({f.timestamp, f.odom_prior});
    char row[256];
    const Vec6 d = f.odom_covariance.diagonal();
    std::snprintf(row, sizeof(row), "%.9f %.9e %.9e %.9e %.9e %.9e %.9e\n",
                  f.timestamp, d(0), d(1), d(2), d(3), d(4), d(5));
    cov << row;
  }
  save_trajectory((out / "odom.tum").string(), odom);
  save_trajectory((out / "gt.tum").string(), seq.ground_truth);
  std::printf("world=%s frames=%zu drift=%g seed=%llu\n", world.c_str(),
              seq.frames.size(), drift,
              static_cast<unsigned long long>(seed));
  return 0;
}

int cmd_register(const std::string& reading_path,
                 const std::string& reference_path,
                 const std::vector<double>& init7,
                 const std::string& config_path) {
  IcpConfig icp;
  if (!config_path.empty()) icp = load_config(config_path).icp;
  const PointCloud reading = load_cloud(reading_path);
  const PointCloud reference = load_cloud(reference_path);
  const Pose init = pose_from_seven(init7);
  const RegistrationResult r = icp_register(reading, reference, init, icp);
  const Eigen::Quaterniond q = to_quaternion(r.delta);
  std::printf(
      "delta=%.9f %.9f %.9f %.9f %.9f %.9f %.9f omega=%.6f rmse=%.6f "
      "iters=%d converged=%d\n",
      r.delta.translation.x(), r.delta.translation.y(),
      r.delta.translation.z(), q.x(), q.y(), q.z(), q.w(), r.overlap,
      r.inlier_rmse, r.iterations, r.converged ? 1 : 0);
  return r.converged ? 0 : 2;
}

int cmd_verify(const std::string& cloud_a, const std::string& cloud_b,
               const std::vector<double>& pose_a7,
               const std::vector<double>& pose_b7, bool brute, int k,
               const std::string& config_path) {
  VerificationConfig vcfg;
  double max_risk = vcfg.max_risk;
  if (!config_path.empty()) {
    const PipelineConfig cfg = load_config(config_path);
    vcfg.segmentation = cfg.segmentation;
    vcfg.overlap_radius = cfg.verify_overlap_radius;
    vcfg.min_match_score = cfg.verify_min_match_score;
    vcfg.max_risk = cfg.verify_max_risk;
    max_risk = cfg.verify_max_risk;
  }
  const PointCloud a = load_cloud(cloud_a);
  const PointCloud b = load_cloud(cloud_b);
  const Pose pa = pose_from_seven(pose_a7);
  const Pose pb = pose_from_seven(pose_b7);
  const AlignabilityReport rep =
      brute ? brute_force_risk(a, b, pa, pb, vcfg)
            : predict_alignment_risk(a, b, pa, pb, k, vcfg);
  std::printf("M=%ld alpha=%g omega=%g risk=%g time=%g\n",
              static_cast<long>(rep.normal_matrix.rows()), rep.alpha,
              rep.omega, rep.risk, rep.elapsed);
  if (!rep.verifiable) return 3;
  return rep.risk <= max_risk ? 0 : 2;
}

int cmd_eval(const std::string& est_path, const std::string& gt_path,
             int delta, const std::string& csv_path) {
  const Trajectory est = load_trajectory(est_path);
  const Trajectory gt = load_trajectory(gt_path);
  const double a = ate(est, gt);
  const RpeResult r = rpe(est, gt, delta);
  const double d = drift_percent(est, gt);
  std::printf("ate=%.6f rpe_t=%.6f rpe_r=%.6f drift=%.6f delta=%d\n", a,
              r.trans_rmse, r.rot_rmse_deg, d, delta);

  if (!csv_path.empty()) {
    const auto pairs = associate(est, gt);
    Eigen::Matrix3Xd src(3, pairs.size()), dst(3, pairs.size());
    for (size_t i = 0; i < pairs.size(); ++i) {
      src.col(static_cast<Eigen::Index>(i)) =
          est[pairs[i].first].pose.translation;
      dst.col(static_cast<Eigen::Index>(i)) =
          gt[pairs[i].second].pose.translation;
    }
    const Eigen::Matrix4d align = Eigen::umeyama(src, dst, false);
    std::ofstream csv(csv_path);
    csv << "t,err_m\n";
    char row[64];
    for (size_t i = 0; i < pairs.size(); ++i) {
      const Eigen::Vector3d p =
          align.topLeftCorner<3, 3>() * src.col(static_cast<Eigen::Index>(i)) +
          align.topRightCorner<3, 1>();
      const double err = (p - dst.col(static_cast<Eigen::Index>(i))).norm();
      std::snprintf(row, sizeof(row), "%.9f,%.9f\n", est[pairs[i].first].t,
                    err);
      csv << row;
    }
  }
  return 0;
}

int cmd_path(const std::string& graph_path, int from, int to) {
  const PoseGraph graph = PoseGraph::load_g2o(graph_path);
  const std::vector<int> path = graph.shortest_path_home(from, to);
  for (size_t i = 0; i < path.size(); ++i)
    std::printf(i + 1 < path.size() ? "%d " : "%d\n", path[i]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pose-graph lidar SLAM with alignment-risk loop verification"};
  app.require_subcommand(1);

  std::string config_path, scans_dir, odom_path, gt_path, out_dir;
  auto* run = app.add_subcommand("run", "Run SLAM over a scan directory");
  run->add_option("--config", config_path, "pipeline config file")->required();
  run->add_option("--scans", scans_dir, "directory of .ply/.xyz scans")
      ->required();
  run->add_option("--odom", odom_path, "odometry priors, TUM format")
      ->required();
  run->add_option("--gt", gt_path, "ground truth trajectory, TUM format");
  run->add_option("--out", out_dir, "output directory")->required();

  std::string world;
  std::string sim_out;
  double drift = 0.01;
  std::uint64_t seed = 1;
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic sequence");
  sim->add_option("--world", world, "room|corridor|loop|two-pass")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--drift", drift, "odometry drift rate");
  sim->add_option("--seed", seed, "simulation seed");

  std::string reading_path, reference_path, reg_config;
  std::vector<double> init7{0, 0, 0, 0, 0, 0, 1};
  auto* reg = app.add_subcommand("register", "Align a reading to a reference");
  reg->add_option("reading", reading_path, "reading cloud")->required();
  reg->add_option("reference", reference_path, "reference cloud")->required();
  reg->add_option("--init", init7, "initial guess tx ty tz qx qy qz qw")
      ->expected(7);
  reg->add_option("--config", reg_config, "pipeline config file");

  std::string cloud_a, cloud_b, ver_config;
  std::vector<double> pose_a7{0, 0, 0, 0, 0, 0, 1};
  std::vector<double> pose_b7{0, 0, 0, 0, 0, 0, 1};
  bool brute = false;
  int k = 1;
  auto* ver = app.add_subcommand(
      "verify", "Predict alignment risk for a candidate registration");
  ver->add_option("cloud_a", cloud_a, "source cloud")->required();
  ver->add_option("cloud_b", cloud_b, "query cloud")->required();
  ver->add_option("--pose-a", pose_a7, "source pose tx ty tz qx qy qz qw")
      ->expected(7);
  ver->add_option("--pose-b", pose_b7, "query pose tx ty tz qx qy qz qw")
      ->expected(7);
  ver->add_flag("--brute-force", brute, "score all plane pairs");
  ver->add_option("-K,--k", k, "candidate planes per query");
  ver->add_option("--config", ver_config, "pipeline config file");

  std::string est_path, eval_gt_path, csv_path;
  int delta = 1;
  auto* ev = app.add_subcommand("eval", "Trajectory metrics against truth");
  ev->add_option("--est", est_path, "estimated trajectory, TUM")->required();
  ev->add_option("--gt", eval_gt_path, "ground truth, TUM")->required();
  ev->add_option("--delta", delta, "RPE window, associated pairs");
  ev->add_option("--csv", csv_path, "per-pose aligned error CSV");

  std::string graph_path;
  int from = 0, to = 0;
  auto* pathcmd = app.add_subcommand("path", "Shortest factor path in a graph");
  pathcmd->add_option("--graph", graph_path, "g2o graph file")->required();
  pathcmd->add_option("--from", from, "start node id")->required();
  pathcmd->add_option("--to", to, "end node id")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(config_path, scans_dir, odom_path, gt_path, out_dir);
    if (sim->parsed()) return cmd_simulate(world, sim_out, drift, seed);
    if (reg->parsed())
      return cmd_register(reading_path, reference_path, init7, reg_config);
    if (ver->parsed())
      return cmd_verify(cloud_a, cloud_b, pose_a7, pose_b7, brute, k,
                        ver_config);
    if (ev->parsed()) return cmd_eval(est_path, eval_gt_path, delta, csv_path);
    if (pathcmd->parsed()) return cmd_path(graph_path, from, to);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
