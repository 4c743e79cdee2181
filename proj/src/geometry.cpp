#include "pgslam/geometry.hpp"

namespace pgslam {

PointCloud apply(const Pose& t, const PointCloud& cloud) {
  PointCloud out = cloud;
  if (cloud.size() > 0)
    out.points = (cloud.points * t.rotation.transpose()).rowwise() + t.translation.transpose();
  return out;
}

}  // namespace pgslam
