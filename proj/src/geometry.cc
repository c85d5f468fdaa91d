#include "imloc/geometry.h"

#include <cmath>
#include <numbers>

#include "imloc/errors.h"

namespace imloc {

void CameraIntrinsics::Validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) {
    throw ValidationError("camera focal lengths must be positive");
  }
  if (width <= 0 || height <= 0) {
    throw ValidationError("camera image size must be positive");
  }
  if (!(cx >= 0.0 && cx < width) || !(cy >= 0.0 && cy < height)) {
    throw ValidationError("camera principal point lies outside the image");
  }
}

Eigen::Matrix3d CameraIntrinsics::K() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

CameraIntrinsics CameraIntrinsics::Resized(int new_width, int new_height) const {
  const double sx = static_cast<double>(new_width) / width;
  const double sy = static_cast<double>(new_height) / height;
  CameraIntrinsics out;
  out.fx = fx * sx;
  out.fy = fy * sy;
  out.cx = (cx + 0.5) * sx - 0.5;
  out.cy = (cy + 0.5) * sy - 0.5;
  out.width = new_width;
  out.height = new_height;
  return out;
}

Pose Pose::Inverse() const {
  Pose inv;
  inv.rotation = rotation.conjugate();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::operator*(const Pose& other) const {
  Pose out;
  out.rotation = (rotation * other.rotation).normalized();
  out.translation = rotation * other.translation + translation;
  return out;
}

Ray Ray::FromDirection(const Eigen::Vector3d& d) {
  const double n = d.norm();
  if (!(n > 0.0) || !std::isfinite(n)) {
    throw ContractViolation("ray direction must be finite and non-zero");
  }
  return Ray{d / n};
}

std::optional<Eigen::Vector2d> Project(const CameraIntrinsics& camera, const Pose& pose,
                                       const Eigen::Vector3d& world_point) {
  const Eigen::Vector3d p = pose.Apply(world_point);
  if (!(p.z() > 0.0)) {
    return std::nullopt;
  }
  return Eigen::Vector2d(camera.fx * p.x() / p.z() + camera.cx, camera.fy * p.y() / p.z() + camera.cy);
}

Eigen::Vector3d Unproject(const CameraIntrinsics& camera, const Eigen::Vector2d& pixel, double depth) {
  if (!(depth > 0.0)) {
    throw ContractViolation("unproject requires a positive depth");
  }
  return Eigen::Vector3d((pixel.x() - camera.cx) / camera.fx * depth, (pixel.y() - camera.cy) / camera.fy * depth,
                         depth);
}

Eigen::Vector3d PixelBearing(const CameraIntrinsics& camera, const Eigen::Vector2d& pixel) {
  return Eigen::Vector3d((pixel.x() - camera.cx) / camera.fx, (pixel.y() - camera.cy) / camera.fy, 1.0)
      .normalized();
}

double AngularError(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

double AngularError(const Ray& a, const Ray& b) { return AngularError(a.direction, b.direction); }

double RotationAngle(const Eigen::Quaterniond& q) {
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

Eigen::Quaterniond ExpMap(const Eigen::Vector3d& w) {
  const double theta = w.norm();
  if (theta < 1e-12) {
    // Second-order expansion; exact to machine precision at this size.
    return Eigen::Quaterniond(1.0, 0.5 * w.x(), 0.5 * w.y(), 0.5 * w.z()).normalized();
  }
  return Eigen::Quaterniond(Eigen::AngleAxisd(theta, w / theta));
}

PoseError ComputePoseError(const Pose& estimated, const Pose& ground_truth) {
  PoseError err;
  const Eigen::Quaterniond dq = estimated.rotation * ground_truth.rotation.conjugate();
  err.rotation_deg = RotationAngle(dq.normalized()) * 180.0 / std::numbers::pi;
  err.translation_m = (estimated.Center() - ground_truth.Center()).norm();
  return err;
}

}  // namespace imloc
