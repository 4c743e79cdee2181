#include "pgslam/io.hpp"

#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace pgslam {

namespace {

std::vector<std::string> tokenize(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream ss(line);
  std::string tok;
  while (ss >> tok) out.push_back(tok);
  return out;
}

double parse_double(const std::string& tok, const char* ctx) {
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(tok, &pos);
  } catch (const std::exception&) {
    throw std::runtime_error(std::string(ctx) + ": malformed number '" + tok + "'");
  }
  if (pos != tok.size())
    throw std::runtime_error(std::string(ctx) + ": malformed number '" + tok + "'");
  return v;
}

PointCloud load_ply(std::istream& in) {
  std::string line;
  std::getline(in, line);  // "ply" magic, already checked by caller

  bool ascii = false;
  bool in_vertex_element = false;
  bool saw_vertex_element = false;
  bool header_done = false;
  long vertex_count = -1;
  long trailing_element_rows = 0;  // rows of non-vertex elements after vertices
  int xi = -1, yi = -1, zi = -1;
  int vertex_props = 0;

  while (std::getline(in, line)) {
    auto tok = tokenize(line);
    if (tok.empty()) continue;
    if (tok[0] == "comment") continue;
    if (tok[0] == "format") {
      if (tok.size() < 2 || tok[1] != "ascii")
        throw std::runtime_error("ply: unsupported format (ascii 1.0 only)");
      ascii = true;
    } else if (tok[0] == "element") {
      if (tok.size() != 3) throw std::runtime_error("ply: malformed element line");
      long count = 0;
      try {
        count = std::stol(tok[2]);
      } catch (const std::exception&) {
        throw std::runtime_error("ply: malformed element count");
      }
      if (tok[1] == "vertex") {
        if (saw_vertex_element) throw std::runtime_error("ply: duplicate vertex element");
        saw_vertex_element = true;
        in_vertex_element = true;
        vertex_count = count;
      } else {
        in_vertex_element = false;
        if (saw_vertex_element) trailing_element_rows += count;
      }
    } else if (tok[0] == "property") {
      if (in_vertex_element) {
        if (tok.size() >= 2 && tok[1] == "list")
          throw std::runtime_error("ply: list property on vertex element unsupported");
        if (tok.size() != 3) throw std::runtime_error("ply: malformed property line");
        if (tok[2] == "x") xi = vertex_props;
        if (tok[2] == "y") yi = vertex_props;
        if (tok[2] == "z") zi = vertex_props;
        ++vertex_props;
      }
    } else if (tok[0] == "end_header") {
      header_done = true;
      break;
    } else {
      throw std::runtime_error("ply: unexpected header line '" + tok[0] + "'");
    }
  }
  if (!header_done) throw std::runtime_error("ply: missing end_header");
  if (!ascii) throw std::runtime_error("ply: missing format line");
  if (vertex_count < 0) throw std::runtime_error("ply: missing vertex element");
  if (xi < 0 || yi < 0 || zi < 0) throw std::runtime_error("ply: missing x/y/z properties");

  PointCloud cloud;
  cloud.points.resize(vertex_count, 3);
  long row = 0;
  long extra_rows_seen = 0;
  while (std::getline(in, line)) {
    auto tok = tokenize(line);
    if (tok.empty()) continue;
    if (row < vertex_count) {
      if (static_cast<int>(tok.size()) != vertex_props)
        throw std::runtime_error("ply: malformed vertex row");
      const double x = parse_double(tok[xi], "ply");
      const double y = parse_double(tok[yi], "ply");
      const double z = parse_double(tok[zi], "ply");
      if (!std::isfinite(x) || !std::isfinite(y) || !std::isfinite(z))
        throw std::runtime_error("ply: non-finite value");
      cloud.points.row(row) << x, y, z;
      ++row;
    } else {
      ++extra_rows_seen;
    }
  }
  if (row != vertex_count)
    throw std::runtime_error("ply: vertex count mismatch (header " +
                             std::to_string(vertex_count) + ", rows " + std::to_string(row) + ")");
  if (extra_rows_seen > trailing_element_rows)
    throw std::runtime_error("ply: vertex count mismatch (unexpected extra rows)");
  return cloud;
}

PointCloud load_xyz(std::istream& in) {
  std::vector<Vec3> pts;
  std::string line;
  while (std::getline(in, line)) {
    auto tok = tokenize(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() != 3) throw std::runtime_error("xyz: expected 3 values per line");
    Vec3 p(parse_double(tok[0], "xyz"), parse_double(tok[1], "xyz"),
           parse_double(tok[2], "xyz"));
    if (!p.allFinite()) throw std::runtime_error("xyz: non-finite value");
    pts.push_back(p);
  }
  PointCloud cloud;
  cloud.points.resize(pts.size(), 3);
  for (size_t i = 0; i < pts.size(); ++i) cloud.points.row(i) = pts[i].transpose();
  return cloud;
}

}  // namespace

PointCloud load_cloud(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_cloud: cannot open " + path);

  // Peek the first non-empty line to pick the format.
  std::string first;
  std::streampos start = in.tellg();
  while (std::getline(in, first)) {
    if (!tokenize(first).empty()) break;
  }
  in.clear();
  in.seekg(start);

  PointCloud cloud;
  if (tokenize(first).size() == 1 && tokenize(first)[0] == "ply")
    cloud = load_ply(in);
  else
    cloud = load_xyz(in);
  return cloud;
}

void save_cloud_ply(const std::string& path, const PointCloud& cloud) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("save_cloud_ply: cannot open " + path);
  std::fprintf(f, "ply\nformat ascii 1.0\nelement vertex %ld\n", static_cast<long>(cloud.size()));
  std::fprintf(f, "property float x\nproperty float y\nproperty float z\nend_header\n");
  for (Eigen::Index i = 0; i < cloud.size(); ++i)
    std::fprintf(f, "%.9f %.9f %.9f\n", cloud.points(i, 0), cloud.points(i, 1),
                 cloud.points(i, 2));
  std::fclose(f);
}

Trajectory load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_trajectory: cannot open " + path);
  Trajectory traj;
  std::string line;
  while (std::getline(in, line)) {
    auto tok = tokenize(line);
    if (tok.empty() || tok[0][0] == '#') continue;
    if (tok.size() != 8) throw std::runtime_error("tum: expected 8 values per line");
    double v[8];
    for (int i = 0; i < 8; ++i) v[i] = parse_double(tok[i], "tum");
    const Eigen::Vector4d q(v[4], v[5], v[6], v[7]);  // qx qy qz qw
    if (!std::isfinite(v[0]) || !q.allFinite() || !std::isfinite(v[1]) ||
        !std::isfinite(v[2]) || !std::isfinite(v[3]))
      throw std::runtime_error("tum: non-finite value");
    if (std::abs(q.norm() - 1.0) > 1e-3)
      throw std::runtime_error("tum: non-unit quaternion (norm " + std::to_string(q.norm()) + ")");
    StampedPose sp;
    sp.t = v[0];
    sp.pose = pose_from_quaternion(Vec3(v[1], v[2], v[3]), v[4], v[5], v[6], v[7]);
    traj.push_back(sp);
  }
  return traj;
}

void save_trajectory(const std::string& path, const Trajectory& traj) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("save_trajectory: cannot open " + path);
  for (const auto& sp : traj) {
    const auto q = to_quaternion(sp.pose);
    std::fprintf(f, "%.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f\n", sp.t, sp.pose.translation.x(),
                 sp.pose.translation.y(), sp.pose.translation.z(), q.x(), q.y(), q.z(), q.w());
  }
  std::fclose(f);
}

}  // namespace pgslam
