#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "imloc/localizer.h"
#include "imloc/mapping.h"
#include "imloc/matchio.h"
#include "imloc/synth.h"

namespace imloc {

// Field generation for a synthetic scene: oracle matches, optionally
// corrupted. Fields touching a query use query_noise, the others map_noise.
// The noise target extent is taken from the target view.
struct SceneFieldOptions {
  bool corrupt_queries = false;
  NoiseSpec query_noise;
  bool corrupt_map = false;
  NoiseSpec map_noise;
  uint64_t seed = 0;
};

// Deterministic in (options.seed, view ids): the noise stream is
// DeriveSeed(seed, "field/<a>__<b>").
CorrespondenceField SceneField(const Scene& scene, int view_a, int view_b, const SceneFieldOptions& options);

// Generates fields on demand by view id. Keeps a reference to `scene`.
FieldLoader SceneFieldLoader(const Scene& scene, const SceneFieldOptions& options);

// Database views with PNG renders and descriptors rounded to half precision,
// i.e. exactly what an export round trip yields.
std::vector<MapInput> SceneMapInputs(const Scene& scene);
QueryJob SceneQuery(const Scene& scene, int query);

// (source, target) view indices the map builder and the localizer request.
std::vector<std::pair<int, int>> MappingPairs(const Scene& scene, int k_map);
std::vector<std::pair<int, int>> LocalizationPairs(const Scene& scene, int k_loc);

struct NamedPose {
  std::string name;
  Pose pose;
};

// One "<name> qw qx qy qz tx ty tz" line per pose, camera-from-world.
void WritePoses(const std::filesystem::path& path, const std::vector<NamedPose>& poses);
// Throws IoError("<file>:<line>") on malformed lines.
std::vector<NamedPose> ReadPoses(const std::filesystem::path& path);

struct ExportOptions {
  SceneFieldOptions fields;
  int k_map = 50;
  int k_loc = 10;
};

// Export directory:
//   views.json            ids, roles, intrinsics, database poses
//   images/<id>.png       renders
//   descriptors.imld      IMLD, views.json order
//   fields/<a>__<b>.imlc  mapping and localization pairs
//   gt_poses.txt          query ground truth
void ExportScene(const Scene& scene, const ExportOptions& options, const std::filesystem::path& dir);

struct SceneExport {
  std::vector<MapInput> database;
  std::vector<QueryJob> queries;
};

// Throws IoError naming the file or view at fault.
SceneExport ReadSceneExport(const std::filesystem::path& dir);

}  // namespace imloc
