#include "imloc/mapping.h"

#include <algorithm>

#include "imloc/errors.h"
#include "imloc/image_codec.h"
#include "imloc/retrieval.h"

namespace imloc {

void MapBuildConfig::Validate() const {
  triangulation.Validate();
  if (!(d_min > 0.0) || !(d_max > d_min)) throw ConfigError("depth range must satisfy 0 < d_min < d_max");
  if (depth_bits < kMinDepthBits || depth_bits > kMaxDepthBits) {
    throw ConfigError("depth bits must lie in [" + std::to_string(kMinDepthBits) + ", " +
                      std::to_string(kMaxDepthBits) + "]");
  }
  CheckRgbCodec(rgb_codec);
  if (rgb_quality < 1 || rgb_quality > 100) throw ConfigError("RGB quality must lie in [1, 100]");
}

Map BuildMap(std::span<const MapInput> inputs, const FieldLoader& load, const MapBuildConfig& cfg,
             std::vector<EntryBuildReport>* report) {
  cfg.Validate();
  Map map;
  map.rgb_codec = cfg.rgb_codec;
  map.rgb_quality = cfg.rgb_quality;
  map.descriptor_dim = inputs.empty() ? 0 : static_cast<int>(inputs[0].descriptor.size());

  DescriptorIndex index(std::max(map.descriptor_dim, 1));
  std::vector<PosedView> views;
  for (const MapInput& in : inputs) {
    index.Add(in.id, in.descriptor);
    views.push_back({in.id, in.pose, in.intrinsics});
  }
  if (report) report->clear();

  for (size_t i = 0; i < inputs.size(); ++i) {
    const MapInput& in = inputs[i];
    const std::vector<std::string> covisible = SelectCovisible(index, in.id, cfg.triangulation.k_map);
    std::vector<PosedView> others;
    std::vector<CorrespondenceField> fields;
    for (const std::string& id : covisible) {
      for (size_t j = 0; j < inputs.size(); ++j) {
        if (inputs[j].id == id) others.push_back(views[j]);
      }
      fields.push_back(load(in.id, id));
    }

    DepthMap depth;
    DepthBuildStats stats;
    if (fields.empty()) {
      // Nothing to triangulate against: an all-invalid map on the image grid.
      depth = DepthMap(in.intrinsics.width, in.intrinsics.height);
    } else {
      depth = BuildDepthMap(views[i], others, fields, cfg.triangulation, &stats);
    }

    MapEntry e;
    e.id = in.id;
    e.pose = in.pose;
    e.intrinsics = in.intrinsics;
    e.rgb = in.rgb;
    e.depth = QuantizeDepth(depth, cfg.d_min, cfg.d_max, cfg.depth_bits);
    e.descriptor = in.descriptor;
    map.entries.push_back(std::move(e));
    if (report) report->push_back({in.id, covisible, depth.ValidFraction(), stats.refinement_monotone});
  }
  map.Validate();
  return map;
}

}  // namespace imloc
