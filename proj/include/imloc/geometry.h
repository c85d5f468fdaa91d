#pragma once

#include <array>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace imloc {

// Pinhole camera without distortion. Pixel centers sit at integer
// coordinates: the first pixel covers [-0.5, 0.5).
struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  // Throws ValidationError unless fx, fy > 0, 0 <= cx < width, 0 <= cy < height.
  void Validate() const;

  Eigen::Matrix3d K() const;

  // Same camera resampled to a new_width x new_height pixel grid that covers
  // the same field of view.
  CameraIntrinsics Resized(int new_width, int new_height) const;

  bool operator==(const CameraIntrinsics&) const = default;
};

// Rigid transform, camera-from-world everywhere in this library:
//   X_cam = R * X_world + t.
struct Pose {
  Eigen::Quaterniond rotation = Eigen::Quaterniond::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Pose() = default;
  Pose(const Eigen::Quaterniond& q, const Eigen::Vector3d& t) : rotation(q.normalized()), translation(t) {}
  Pose(const Eigen::Matrix3d& R, const Eigen::Vector3d& t) : rotation(Eigen::Quaterniond(R).normalized()), translation(t) {}

  static Pose Identity() { return Pose(); }

  Eigen::Matrix3d R() const { return rotation.toRotationMatrix(); }
  Eigen::Vector3d Apply(const Eigen::Vector3d& x) const { return rotation * x + translation; }
  Eigen::Vector3d Center() const { return -(rotation.conjugate() * translation); }

  Pose Inverse() const;
  // (*this * other)(x) == this->Apply(other.Apply(x)).
  Pose operator*(const Pose& other) const;
};

// Unit direction in some stated frame.
struct Ray {
  Eigen::Vector3d direction = Eigen::Vector3d::UnitZ();

  // Normalizes `d`; `d` must be non-zero.
  static Ray FromDirection(const Eigen::Vector3d& d);
};

struct PoseError {
  double rotation_deg = 0.0;   // in [0, 180]
  double translation_m = 0.0;  // camera center distance
};

// Pixel of a world point, or nullopt if it is not strictly in front of the
// camera. No image-bounds check.
std::optional<Eigen::Vector2d> Project(const CameraIntrinsics& camera, const Pose& pose,
                                       const Eigen::Vector3d& world_point);

// Camera-frame point at z-depth `depth` behind `pixel`. Throws
// ContractViolation for depth <= 0.
Eigen::Vector3d Unproject(const CameraIntrinsics& camera, const Eigen::Vector2d& pixel, double depth);

// Unit bearing in the camera frame through `pixel`.
Eigen::Vector3d PixelBearing(const CameraIntrinsics& camera, const Eigen::Vector2d& pixel);

// atan2(|a x b|, a . b), in [0, pi].
double AngularError(const Ray& a, const Ray& b);
double AngularError(const Eigen::Vector3d& a, const Eigen::Vector3d& b);

// Up to four camera-from-world poses with bearing_i ~ R * point_i + t.
// Bearings must be unit vectors. Degenerate input (collinear or coincident
// points, coincident bearings) yields an empty list.
std::vector<Pose> SolveP3P(const std::array<Eigen::Vector3d, 3>& bearings,
                           const std::array<Eigen::Vector3d, 3>& points);

PoseError ComputePoseError(const Pose& estimated, const Pose& ground_truth);

// Rotation angle of a unit quaternion in radians, [0, pi].
double RotationAngle(const Eigen::Quaterniond& q);

// Rodrigues: rotation exp([w]_x).
Eigen::Quaterniond ExpMap(const Eigen::Vector3d& w);

}  // namespace imloc
