#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "imloc/depth_map.h"
#include "imloc/geometry.h"
#include "imloc/image_codec.h"
#include "imloc/matchio.h"

namespace imloc {

// Synthetic scenes with exact ground truth: the oracle for triangulation,
// lifting and pose estimation tests.

enum class SurfaceModel {
  kPlane,    // one textured plane, optionally tilted
  kSurfels,  // random point set rendered as oriented discs (occlusions)
};

struct SceneSpec {
  int num_cameras = 6;  // database views
  int num_queries = 0;
  int width = 140;
  int height = 140;
  double focal = 140.0;

  SurfaceModel surface = SurfaceModel::kPlane;
  double plane_distance = 4.0;  // plane passes through (0, 0, plane_distance)
  double plane_tilt_deg = 0.0;  // rotation of the plane normal about world x
  double min_depth = 2.0;       // surfel centres are drawn in [min_depth, max_depth]
  double max_depth = 8.0;
  int num_surfels = 300;
  double surfel_radius = 0.35;

  // Database camera 0 sits at the origin looking down +z. The others lie on a
  // ring of this radius at z = -setback.
  double baseline = 0.4;
  double setback = 0.0;
  bool converge = false;  // aim database cameras at (0, 0, plane_distance)
  double rotation_jitter_deg = 0.0;

  double query_radius = 0.4;
  double query_depth_jitter = 0.2;
  double query_rotation_deg = 5.0;

  int descriptor_dim = 32;
  uint64_t seed = 0;

  // Throws ValidationError for degenerate specs.
  void Validate() const;
};

struct SceneView {
  std::string id;
  Pose pose;
  CameraIntrinsics intrinsics;
  bool is_query = false;
};

struct Surfel {
  Eigen::Vector3d center;
  Eigen::Vector3d normal;
  double radius = 0.0;
};

struct Scene {
  SceneSpec spec;
  std::vector<SceneView> views;  // database views first, then queries
  std::vector<DepthMap> depth;   // ground truth per view
  std::vector<std::vector<float>> descriptors;

  std::optional<Eigen::Vector4d> plane;  // n.x = d stored as (n, d)
  std::vector<Surfel> surfels;

  int num_database() const { return spec.num_cameras; }
  int num_queries() const { return spec.num_queries; }
  const SceneView& query(int i) const { return views[spec.num_cameras + i]; }

  // Smallest positive ray parameter t with origin + t * direction on a
  // surface.
  std::optional<double> Intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) const;

  // Exact z-depth of the surface seen through `pixel` of view `v`.
  std::optional<double> TrueDepth(int v, const Eigen::Vector2d& pixel) const;

  // World point seen through `pixel`, if any.
  std::optional<Eigen::Vector3d> SurfacePoint(int v, const Eigen::Vector2d& pixel) const;

  // True if `world_point` is the first surface hit from view `v`'s centre.
  bool Visible(int v, const Eigen::Vector3d& world_point) const;
};

Scene MakeScene(const SceneSpec& spec);

// Exact matches from view a to view b on a grid (default: a's image grid).
// Cells whose surface point is occluded or outside b get confidence 0 and
// NaN targets.
CorrespondenceField OracleField(const Scene& scene, int view_a, int view_b, int grid_width = 0,
                                int grid_height = 0);

struct NoiseSpec {
  double pixel_sigma = 0.0;
  double outlier_fraction = 0.0;
  // Outliers are uniform over this target image extent.
  int target_width = 1;
  int target_height = 1;
  double inlier_conf_min = 0.5, inlier_conf_max = 1.0;
  double outlier_conf_min = 0.0, outlier_conf_max = 0.3;

  void Validate() const;
};

// Independently per valid cell: with probability outlier_fraction the target
// is redrawn uniformly over the target image with an outlier confidence;
// otherwise Gaussian noise is added and an inlier confidence drawn.
CorrespondenceField Corrupt(const CorrespondenceField& field, const NoiseSpec& noise, uint64_t seed);

// Procedural texture render; only used to give map entries an RGB payload.
Image RenderRgb(const Scene& scene, int v);

}  // namespace imloc
