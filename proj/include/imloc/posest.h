#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "imloc/geometry.h"

namespace imloc {

struct Match2D3D {
  Eigen::Vector2d pixel;  // query image
  Eigen::Vector3d point;  // world frame
  double weight = 1.0;    // matcher confidence, > 0
  int source = -1;        // map entry that supplied the point
};

struct RansacConfig {
  int max_iterations = 100000;  // minimal samples drawn, not batches
  int batch_size = 1000;
  double miss_probability = 1e-4;
  double reproj_threshold = 12.0;  // px
  int max_scoring = 10000;
  double cauchy_scale = 0.0;  // <= 0 uses reproj_threshold
  int lm_max_iterations = 100;
  uint64_t seed = 0;

  // Throws ConfigError.
  void Validate() const;
};

struct PoseEstimate {
  Pose pose;
  int num_inliers = 0;
  std::vector<uint8_t> inliers;  // over the full match set
  double score = 0.0;            // weighted MSAC cost over the full set
  int iterations = 0;            // minimal samples drawn
  int local_optimizations = 0;
  bool converged = false;
  bool refinement_monotone = true;  // every accepted LM step kept or lowered the cost
};

// ceil(ln(eta) / ln(1 - eps^m)) clamped to [1, max_iterations]; eps = 0 gives
// max_iterations.
int RequiredIterations(double inlier_ratio, double miss_probability, int sample_size = 3,
                       int max_iterations = 100000);

// Reprojection error in pixels, or +inf for points not in front of the camera.
double ReprojectionError(const Pose& pose, const CameraIntrinsics& camera, const Match2D3D& m);

struct MsacResult {
  double cost = 0.0;
  int num_inliers = 0;
  std::vector<uint8_t> inliers;
};

// sum w * min(e^2, tau^2); inlier iff e < tau and in front.
MsacResult MsacScore(const Pose& pose, std::span<const Match2D3D> matches, const CameraIntrinsics& camera,
                     double tau);

struct RobustLoss {
  enum class Kind { kTruncated, kCauchy };
  Kind kind = Kind::kCauchy;
  double scale = 12.0;  // tau or c, px

  static RobustLoss Truncated(double tau) { return {Kind::kTruncated, tau}; }
  static RobustLoss Cauchy(double c) { return {Kind::kCauchy, c}; }

  // rho(e^2): min(e^2, tau^2) or (c^2 / 2) ln(1 + e^2 / c^2).
  double Rho(double squared_error) const;
  // d rho / d(e^2).
  double Derivative(double squared_error) const;
};

// sum w * rho(e^2). A point behind the camera costs rho(inf): tau^2 for the
// truncated loss, +inf for Cauchy.
double RobustCost(const Pose& pose, std::span<const Match2D3D> matches, const CameraIntrinsics& camera,
                  const RobustLoss& loss);

// Local update used by the refinement: R <- exp([w]x) R, t <- exp([w]x) t + v,
// with delta = (w, v).
using PoseDelta = Eigen::Matrix<double, 6, 1>;
Pose ApplyPoseUpdate(const Pose& pose, const PoseDelta& delta);

// Residual projected - observed, and its Jacobian with respect to the update
// above at delta = 0. Requires the point to be in front of the camera.
Eigen::Vector2d ReprojectionResidual(const Pose& pose, const CameraIntrinsics& camera, const Match2D3D& m);
Eigen::Matrix<double, 2, 6> ReprojectionJacobian(const Pose& pose, const CameraIntrinsics& camera,
                                                 const Match2D3D& m);

struct RefineResult {
  Pose pose;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  bool monotone = true;
};

struct RefineOptions {
  int max_iterations = 100;
  double gradient_tolerance = 1e-10;
  double relative_cost_tolerance = 1e-12;
};

// Levenberg-Marquardt on the robust cost, reweighted at each iterate.
RefineResult RefinePose(const Pose& initial, std::span<const Match2D3D> matches, const CameraIntrinsics& camera,
                        const RobustLoss& loss, const RefineOptions& options = {});

// LO-RANSAC with P3P hypotheses scored by weighted MSAC on a strided subset,
// then a Cauchy refinement over the full-set inliers. Throws ValidationError
// for fewer than 3 matches. Bit-identical for any thread count.
PoseEstimate RansacPnp(std::span<const Match2D3D> matches, const CameraIntrinsics& camera, const RansacConfig& cfg);

}  // namespace imloc
