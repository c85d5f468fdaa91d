#pragma once

#include <span>
#include <string>
#include <vector>

#include "imloc/depthbuild.h"
#include "imloc/geometry.h"
#include "imloc/mapstore.h"
#include "imloc/matchio.h"

namespace imloc {

struct MapInput {
  std::string id;
  Pose pose;
  CameraIntrinsics intrinsics;
  std::vector<uint8_t> rgb;  // encoded with MapBuildConfig::rgb_codec
  std::vector<float> descriptor;
};

struct MapBuildConfig {
  TriangulationConfig triangulation;
  double d_min = 0.25;
  double d_max = 128.0;
  int depth_bits = 8;
  std::string rgb_codec = "png";
  int rgb_quality = 90;

  void Validate() const;
};

struct EntryBuildReport {
  std::string id;
  std::vector<std::string> covisible;
  double valid_fraction = 0.0;
  bool refinement_monotone = true;
};

// Per entry: the k_map most similar other entries, their fields from the
// entry (all on one grid), triangulated depth on that grid, log quantization.
// Entries keep the input order.
Map BuildMap(std::span<const MapInput> inputs, const FieldLoader& load, const MapBuildConfig& cfg,
             std::vector<EntryBuildReport>* report = nullptr);

}  // namespace imloc
