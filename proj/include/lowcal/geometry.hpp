#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>

namespace lowcal {

using Vec3 = Eigen::Vector3d;
using Quaternion = Eigen::Quaterniond;

/// Euler angles in degrees, intrinsic ZYX: yaw about z, then pitch about the
/// rotated y, then roll about the twice-rotated x. Each angle lies in
/// (-180, 180].
struct EulerAngles {
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
};

/// Rigid transform acting as x' = R x + t, translation in meters.
struct RigidTransform {
  Quaternion rotation = Quaternion::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
};

/// Points are columns, in the sensor frame, meters. Intensities, when
/// present, are one value in [0, 1] per point.
struct PointCloud {
  Eigen::Matrix3Xd points;
  std::optional<Eigen::VectorXd> intensity;

  Eigen::Index size() const { return points.cols(); }
};

/// Unit norm with the canonical sign: w >= 0, and for w == 0 the first
/// nonzero of (x, y, z) is positive. Idempotent.
Quaternion quat_normalize(const Quaternion& q);

/// Rotation a then... a applied after b: result acts as a * (b * p).
Quaternion quat_compose(const Quaternion& a, const Quaternion& b);

/// Geodesic angle between two rotations, degrees in [0, 180]. Symmetric and
/// invariant under sign flips of either argument.
double quat_angle_deg(const Quaternion& a, const Quaternion& b);

Vec3 transform_apply(const RigidTransform& t, const Vec3& p);
PointCloud transform_apply(const RigidTransform& t, const PointCloud& pc);

/// apply(compose(outer, inner), p) == apply(outer, apply(inner, p)).
RigidTransform transform_compose(const RigidTransform& outer, const RigidTransform& inner);
RigidTransform transform_inverse(const RigidTransform& t);

Quaternion euler_to_quat(const EulerAngles& e);

/// Inverse of euler_to_quat away from gimbal lock. At |pitch| = 90 deg the
/// decomposition collapses to the canonical form roll = 0 with yaw carrying
/// the remaining twist.
EulerAngles quat_to_euler(const Quaternion& q);

/// Keeps every rate-th point starting at index 0; order preserved.
PointCloud subsample_uniform(const PointCloud& pc, int rate);

}  // namespace lowcal
