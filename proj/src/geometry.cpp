#include "lowcal/geometry.hpp"

#include <cmath>
#include <stdexcept>

namespace lowcal {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kDegToRad = kPi / 180.0;
constexpr double kRadToDeg = 180.0 / kPi;

bool quat_finite(const Quaternion& q) {
  return std::isfinite(q.w()) && std::isfinite(q.x()) && std::isfinite(q.y()) &&
         std::isfinite(q.z());
}

double wrap_half_open_deg(double deg) {
  // into (-180, 180]
  deg = std::fmod(deg, 360.0);
  if (deg <= -180.0) deg += 360.0;
  if (deg > 180.0) deg -= 360.0;
  return deg;
}

}  // namespace

Quaternion quat_normalize(const Quaternion& q) {
  if (!quat_finite(q)) throw std::invalid_argument("quat_normalize: non-finite quaternion");
  const double n = q.norm();
  if (n < 1e-300) throw std::invalid_argument("quat_normalize: zero-norm quaternion");
  Quaternion r(q.w() / n, q.x() / n, q.y() / n, q.z() / n);
  bool flip = r.w() < 0.0;
  if (r.w() == 0.0) {
    if (r.x() != 0.0) {
      flip = r.x() < 0.0;
    } else if (r.y() != 0.0) {
      flip = r.y() < 0.0;
    } else {
      flip = r.z() < 0.0;
    }
  }
  if (flip) r.coeffs() = -r.coeffs();
  return r;
}

Quaternion quat_compose(const Quaternion& a, const Quaternion& b) {
  if (!quat_finite(a) || !quat_finite(b)) {
    throw std::invalid_argument("quat_compose: non-finite quaternion");
  }
  return quat_normalize(a * b);
}

double quat_angle_deg(const Quaternion& a, const Quaternion& b) {
  if (!quat_finite(a) || !quat_finite(b)) {
    throw std::invalid_argument("quat_angle_deg: non-finite quaternion");
  }
  const Quaternion r = a.conjugate() * b;
  // atan2 form stays accurate near 0 and 180 degrees.
  const double angle = 2.0 * std::atan2(r.vec().norm(), std::abs(r.w()));
  return angle * kRadToDeg;
}

Vec3 transform_apply(const RigidTransform& t, const Vec3& p) {
  return t.rotation * p + t.translation;
}

PointCloud transform_apply(const RigidTransform& t, const PointCloud& pc) {
  PointCloud out;
  out.points = (t.rotation.toRotationMatrix() * pc.points).colwise() + t.translation;
  out.intensity = pc.intensity;
  return out;
}

RigidTransform transform_compose(const RigidTransform& outer, const RigidTransform& inner) {
  RigidTransform out;
  out.rotation = quat_compose(outer.rotation, inner.rotation);
  out.translation = outer.rotation * inner.translation + outer.translation;
  return out;
}

RigidTransform transform_inverse(const RigidTransform& t) {
  RigidTransform out;
  out.rotation = quat_normalize(t.rotation.conjugate());
  out.translation = -(out.rotation * t.translation);
  return out;
}

Quaternion euler_to_quat(const EulerAngles& e) {
  if (!std::isfinite(e.roll) || !std::isfinite(e.pitch) || !std::isfinite(e.yaw)) {
    throw std::invalid_argument("euler_to_quat: non-finite angles");
  }
  const Quaternion q = Eigen::AngleAxisd(e.yaw * kDegToRad, Vec3::UnitZ()) *
                       Eigen::AngleAxisd(e.pitch * kDegToRad, Vec3::UnitY()) *
                       Eigen::AngleAxisd(e.roll * kDegToRad, Vec3::UnitX());
  return quat_normalize(q);
}

EulerAngles quat_to_euler(const Quaternion& q) {
  const Eigen::Matrix3d r = quat_normalize(q).toRotationMatrix();
  EulerAngles e;
  double sp = -r(2, 0);
  sp = std::min(1.0, std::max(-1.0, sp));
  if (std::abs(sp) > 1.0 - 1e-9) {
    // Gimbal lock: fold the full twist into yaw.
    e.pitch = std::copysign(90.0, sp);
    e.roll = 0.0;
    e.yaw = wrap_half_open_deg(std::atan2(-r(0, 1), r(1, 1)) * kRadToDeg);
  } else {
    e.pitch = wrap_half_open_deg(std::asin(sp) * kRadToDeg);
    e.roll = wrap_half_open_deg(std::atan2(r(2, 1), r(2, 2)) * kRadToDeg);
    e.yaw = wrap_half_open_deg(std::atan2(r(1, 0), r(0, 0)) * kRadToDeg);
  }
  return e;
}

PointCloud subsample_uniform(const PointCloud& pc, int rate) {
  if (rate < 1) throw std::invalid_argument("subsample_uniform: rate must be >= 1");
  if (rate == 1) return pc;
  const Eigen::Index n = pc.size();
  const Eigen::Index m = (n + rate - 1) / rate;
  PointCloud out;
  out.points.resize(3, m);
  if (pc.intensity) out.intensity = Eigen::VectorXd(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    out.points.col(i) = pc.points.col(i * rate);
    if (pc.intensity) (*out.intensity)(i) = (*pc.intensity)(i * rate);
  }
  return out;
}

}  // namespace lowcal
