#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "imloc/depth_map.h"
#include "imloc/geometry.h"
#include "imloc/mapstore.h"
#include "imloc/matchio.h"
#include "imloc/posest.h"
#include "imloc/retrieval.h"

namespace imloc {

// Bilinear depth at a subpixel position of the depth grid (pixel centres at
// integer coordinates). nullopt outside [0, w-1] x [0, h-1] or when any of
// the four surrounding samples is invalid.
std::optional<double> InterpDepth(const DepthMap& depth, const Eigen::Vector2d& pixel);

struct QueryJob {
  std::string id;
  CameraIntrinsics intrinsics;
  std::vector<float> descriptor;
};

// Lifts matches between a query and one map entry to 2D-3D correspondences.
// `depth` is the entry's dequantized depth. db_to_query must lie on the depth
// grid or an integer refinement of it, and each cell reads the depth sample
// whose block contains it; query_to_db must cover the query image and
// interpolates. Either field may be null. Output order: db->query cells, then
// query->db cells, each row-major. Throws ValidationError on id or
// resolution mismatch.
std::vector<Match2D3D> Lift(const QueryJob& job, const MapEntry& entry, const DepthMap& depth,
                            const CorrespondenceField* db_to_query, const CorrespondenceField* query_to_db,
                            double threshold = 0.05, int source = -1);

struct LocalizerConfig {
  int k_loc = 10;
  double confidence_threshold = 0.05;
  RansacConfig ransac;

  void Validate() const;
};

enum class LocalizeStatus { kOk, kNoRetrieval, kNoMatches, kTooFewMatches, kNotConverged, kError };

const char* StatusName(LocalizeStatus status);

struct LocalizeResult {
  std::string query_id;
  LocalizeStatus status = LocalizeStatus::kNoRetrieval;
  std::vector<std::string> retrieved;  // by descending similarity
  size_t num_matches = 0;
  PoseEstimate estimate;
  std::string error;  // kError only

  bool success() const { return status == LocalizeStatus::kOk; }
};

class Localizer {
 public:
  // Dequantizes every entry's depth once.
  explicit Localizer(Map map);

  const Map& map() const { return map_; }
  const DescriptorIndex& index() const { return index_; }
  const DepthMap& depth(size_t entry) const { return depth_[entry]; }

  // Retrieval, lifting against every retrieved entry in id order, then
  // RansacPnp seeded with DeriveSeed(cfg.ransac.seed, "localize/" + job.id).
  // `load` is called from several threads.
  LocalizeResult Localize(const QueryJob& job, const FieldLoader& load, const LocalizerConfig& cfg) const;

 private:
  Map map_;
  DescriptorIndex index_;
  std::vector<DepthMap> depth_;
};

struct EvalThreshold {
  double translation_m = 0.0;
  double rotation_deg = 0.0;
};

// "t_m:r_deg,..." with positive entries; throws ConfigError.
std::vector<EvalThreshold> ParseThresholds(const std::string& text);
inline constexpr const char* kDefaultThresholds = "0.25:2,0.5:5,1:10";

struct EvalSample {
  bool success = false;
  Pose estimate;
  Pose ground_truth;
};

struct EvalReport {
  std::vector<double> recall;  // per threshold
  // Lower medians over successful samples; NaN when there are none.
  double median_rotation_deg = 0.0;
  double median_translation_m = 0.0;
  size_t num_queries = 0;
  size_t num_success = 0;
};

// A sample counts for a threshold when both errors are <= its entries;
// failures never count. Throws ValidationError for an empty sample list.
EvalReport Evaluate(std::span<const EvalSample> samples, std::span<const EvalThreshold> thresholds);

}  // namespace imloc
