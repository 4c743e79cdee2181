#pragma once

#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace pgslam {

inline constexpr double kPi = 3.14159265358979323846;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

template <class Scalar> using Mat3T = Eigen::Matrix<Scalar, 3, 3>;
template <class Scalar> using Vec3T = Eigen::Matrix<Scalar, 3, 1>;
template <class Scalar> using Vec6T = Eigen::Matrix<Scalar, 6, 1>;
template <class Scalar> using Mat6T = Eigen::Matrix<Scalar, 6, 6>;

using Mat3 = Mat3T<double>;
using Vec3 = Vec3T<double>;
using Vec6 = Vec6T<double>;
using Mat6 = Mat6T<double>;

/// Tangent-space coordinates of SE(3): translation (m) first, rotation (rad) second.
template <class Scalar>
using TwistT = Vec6T<Scalar>;
using Twist = TwistT<double>;

/// 6x6 covariance over Twist coordinates.
using Covariance6 = Mat6;

template <class Derived>
Mat3T<typename Derived::Scalar> skew(const Eigen::MatrixBase<Derived>& v) {
  using S = typename Derived::Scalar;
  Mat3T<S> m;
  m << S(0), -v[2], v[1],
       v[2], S(0), -v[0],
      -v[1], v[0], S(0);
  return m;
}

/// Rigid transform on SE(3). Maps points of its "child" frame into its "parent" frame.
template <class Scalar>
struct PoseT {
  Mat3T<Scalar> rotation = Mat3T<Scalar>::Identity();
  Vec3T<Scalar> translation = Vec3T<Scalar>::Zero();

  static PoseT identity() { return PoseT{}; }
};
using Pose = PoseT<double>;

template <class Scalar>
bool is_rotation(const Mat3T<Scalar>& r, Scalar tol = Scalar(1e-9)) {
  return ((r * r.transpose() - Mat3T<Scalar>::Identity()).cwiseAbs().maxCoeff() <= tol) &&
         (std::abs(r.determinant() - Scalar(1)) <= tol);
}

template <class Scalar>
bool is_finite_pose(const PoseT<Scalar>& p) {
  return p.rotation.allFinite() && p.translation.allFinite();
}

template <class Scalar>
PoseT<Scalar> compose(const PoseT<Scalar>& a, const PoseT<Scalar>& b) {
  return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
}

template <class Scalar>
PoseT<Scalar> invert(const PoseT<Scalar>& p) {
  Mat3T<Scalar> rt = p.rotation.transpose();
  return {rt, -(rt * p.translation)};
}

template <class Scalar, class Derived>
Vec3T<Scalar> apply_point(const PoseT<Scalar>& p, const Eigen::MatrixBase<Derived>& x) {
  return p.rotation * x + p.translation;
}

/// Rotation angle of R in [0, pi].
template <class Derived>
typename Derived::Scalar rotation_angle(const Eigen::MatrixBase<Derived>& r) {
  using S = typename Derived::Scalar;
  S c = (r.trace() - S(1)) / S(2);
  c = std::min(S(1), std::max(S(-1), c));
  return std::acos(c);
}

template <class Derived>
PoseT<typename Derived::Scalar> se3_exp(const Eigen::MatrixBase<Derived>& xi_expr) {
  using Scalar = typename Derived::Scalar;
  const TwistT<Scalar> xi = xi_expr;
  const Vec3T<Scalar> rho = xi.template head<3>();
  const Vec3T<Scalar> phi = xi.template tail<3>();
  const Scalar theta2 = phi.squaredNorm();
  const Mat3T<Scalar> k = skew(phi);
  Mat3T<Scalar> r, v;
  if (theta2 < Scalar(1e-16)) {
    r = Mat3T<Scalar>::Identity() + k + k * k / Scalar(2);
    v = Mat3T<Scalar>::Identity() + k / Scalar(2) + k * k / Scalar(6);
  } else {
    const Scalar theta = std::sqrt(theta2);
    const Scalar s = std::sin(theta);
    const Scalar c = std::cos(theta);
    r = Mat3T<Scalar>::Identity() + (s / theta) * k + ((Scalar(1) - c) / theta2) * (k * k);
    v = Mat3T<Scalar>::Identity() + ((Scalar(1) - c) / theta2) * k +
        ((theta - s) / (theta2 * theta)) * (k * k);
  }
  return {r, v * rho};
}

/// Inverse of se3_exp. Throws std::domain_error when the rotation angle is
/// within 1e-6 of pi, where the axis is ambiguous.
template <class Scalar>
TwistT<Scalar> se3_log(const PoseT<Scalar>& p) {
  const Mat3T<Scalar>& r = p.rotation;
  Vec3T<Scalar> w;
  w << r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1);
  w /= Scalar(2);  // = sin(theta) * axis
  const Scalar s = w.norm();
  const Scalar c = (r.trace() - Scalar(1)) / Scalar(2);
  const Scalar theta = std::atan2(s, c);
  if (theta > kPi - Scalar(1e-6))
    throw std::domain_error("se3_log: rotation angle within 1e-6 of pi, axis ambiguous");

  Vec3T<Scalar> phi;
  const Scalar theta2 = theta * theta;
  if (theta < Scalar(1e-6)) {
    phi = w * (Scalar(1) + theta2 / Scalar(6));
  } else {
    phi = w * (theta / s);
  }

  const Mat3T<Scalar> k = skew(phi);
  Mat3T<Scalar> vinv;
  if (theta < Scalar(1e-6)) {
    vinv = Mat3T<Scalar>::Identity() - k / Scalar(2) + k * k / Scalar(12);
  } else {
    const Scalar coef = (Scalar(1) / theta2) -
                        (Scalar(1) + std::cos(theta)) / (Scalar(2) * theta * std::sin(theta));
    vinv = Mat3T<Scalar>::Identity() - k / Scalar(2) + coef * (k * k);
  }

  TwistT<Scalar> xi;
  xi.template head<3>() = vinv * p.translation;
  xi.template tail<3>() = phi;
  return xi;
}

/// Right-perturbation retraction: T * exp(xi).
template <class Scalar, class Derived>
PoseT<Scalar> boxplus(const PoseT<Scalar>& t, const Eigen::MatrixBase<Derived>& xi) {
  return compose(t, se3_exp(xi));
}

/// Adjoint of T for the (translation, rotation) twist ordering.
template <class Scalar>
Mat6T<Scalar> adjoint(const PoseT<Scalar>& t) {
  Mat6T<Scalar> ad = Mat6T<Scalar>::Zero();
  ad.template block<3, 3>(0, 0) = t.rotation;
  ad.template block<3, 3>(0, 3) = skew(t.translation) * t.rotation;
  ad.template block<3, 3>(3, 3) = t.rotation;
  return ad;
}

// Quaternion boundary helpers (file formats store qx qy qz qw).

template <class Scalar>
Eigen::Quaternion<Scalar> to_quaternion(const PoseT<Scalar>& p) {
  return Eigen::Quaternion<Scalar>(p.rotation);
}

template <class Scalar>
PoseT<Scalar> pose_from_quaternion(const Vec3T<Scalar>& t, Scalar qx, Scalar qy, Scalar qz,
                                   Scalar qw) {
  Eigen::Quaternion<Scalar> q(qw, qx, qy, qz);
  return {q.normalized().toRotationMatrix(), t};
}

inline Mat3 rot_z(double yaw) {
  return Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
}

inline bool is_valid_covariance(const Covariance6& c, double sym_tol = 1e-12) {
  if (!c.allFinite()) return false;
  if ((c - c.transpose()).cwiseAbs().maxCoeff() > sym_tol) return false;
  Eigen::SelfAdjointEigenSolver<Mat6> es(c);
  return es.eigenvalues().minCoeff() > 0.0;
}

/// Ordered set of 3D points with frame label and timestamp. Points are rows.
struct PointCloud {
  Eigen::Matrix<double, Eigen::Dynamic, 3> points;
  double timestamp = 0.0;
  std::string frame_id;

  Eigen::Index size() const { return points.rows(); }
  bool empty() const { return points.rows() == 0; }
  Vec3 point(Eigen::Index i) const { return points.row(i).transpose(); }
  bool all_finite() const { return points.allFinite(); }
};

/// Each point mapped p' = R p + t; metadata preserved.
PointCloud apply(const Pose& t, const PointCloud& cloud);

}  // namespace pgslam
