#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "imloc/depth_map.h"
#include "imloc/geometry.h"
#include "imloc/matchio.h"
#include "imloc/retrieval.h"

namespace imloc {

struct TriangulationConfig {
  double angular_threshold_rad = 0.034906585039886591;  // 2 degrees
  int min_inliers = 4;
  double confidence_threshold = 0.05;
  int k_map = 50;
  int max_refine_iterations = 20;
  double refine_tolerance = 1e-8;  // relative depth change

  void Validate() const;
};

// A posed image as seen by the triangulator.
struct PosedView {
  std::string id;
  Pose pose;
  CameraIntrinsics intrinsics;
};

struct Observation {
  Pose pose;
  CameraIntrinsics intrinsics;
  Eigen::Vector2d pixel;
  double confidence = 1.0;
};

// Distance along `ref_ray` (world frame, unit) from `ref_center` to the point
// closest to the observation's back-projected ray. nullopt for (near-)parallel
// rays or a non-positive distance.
std::optional<double> DepthHypothesis(const Ray& ref_ray, const Eigen::Vector3d& ref_center, const Observation& obs);

struct PixelDepth {
  double depth = 0.0;             // distance along the reference ray
  double hypothesis_depth = 0.0;  // before refinement
  int inliers = 0;                // of the winning hypothesis
  int refined_inliers = 0;        // recount at the refined depth
  double cost_initial = 0.0;      // weighted squared angular error, winning hypothesis
  double cost_final = 0.0;
  bool monotone = true;           // no accepted refinement step raised the cost
};

// Exhaustive single-match hypotheses, most inliers wins (lowest index on
// ties), then a weighted 1-D refinement over the fixed inlier set. The result
// is returned whether or not it meets cfg.min_inliers; see TriangulatePixel.
std::optional<PixelDepth> TriangulatePixelDetailed(const Ray& ref_ray, const Eigen::Vector3d& ref_center,
                                                   std::span<const Observation> observations,
                                                   const TriangulationConfig& cfg);

// As above, but nullopt unless the winning hypothesis has >= cfg.min_inliers.
std::optional<PixelDepth> TriangulatePixel(const Ray& ref_ray, const Eigen::Vector3d& ref_center,
                                           std::span<const Observation> observations,
                                           const TriangulationConfig& cfg);

struct DepthBuildStats {
  size_t pixels = 0;
  size_t valid = 0;
  bool refinement_monotone = true;
};

// Dense z-depth on the fields' match grid. fields[i] must map `ref` onto
// covisible[i]; all fields share one grid. Parallel over rows; the output does
// not depend on the thread count.
DepthMap BuildDepthMap(const PosedView& ref, std::span<const PosedView> covisible,
                       std::span<const CorrespondenceField> fields, const TriangulationConfig& cfg,
                       DepthBuildStats* stats = nullptr);

// Top-k ids by descriptor similarity to `id`, excluding `id` itself.
std::vector<std::string> SelectCovisible(const DescriptorIndex& index, const std::string& id, int k);

}  // namespace imloc
