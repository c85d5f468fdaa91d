#include "imloc/localizer.h"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <sstream>

#include "imloc/errors.h"
#include "imloc/random.h"

namespace imloc {
namespace {

bool CoversImage(const CorrespondenceField& field, const CameraIntrinsics& camera) {
  const double w = field.scale_x * field.grid_width;
  const double h = field.scale_y * field.grid_height;
  return std::abs(w - camera.width) <= 1e-6 * camera.width && std::abs(h - camera.height) <= 1e-6 * camera.height;
}

void CheckIds(const CorrespondenceField& field, const std::string& source, const std::string& target) {
  if (field.source_id != source || field.target_id != target) {
    throw ValidationError("expected field " + source + " -> " + target + ", got " + field.source_id + " -> " +
                          field.target_id);
  }
}

double ParsePositive(const std::string& text, const std::string& item) {
  size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != text.size() || !std::isfinite(v) || !(v > 0.0)) {
    throw ConfigError("bad threshold '" + item + "': expected positive t_m:r_deg");
  }
  return v;
}

double LowerMedian(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  const size_t k = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

}  // namespace

std::optional<double> InterpDepth(const DepthMap& depth, const Eigen::Vector2d& pixel) {
  const double x = pixel.x(), y = pixel.y();
  if (depth.width < 1 || depth.height < 1) return std::nullopt;
  if (!(x >= 0.0 && y >= 0.0 && x <= depth.width - 1 && y <= depth.height - 1)) return std::nullopt;
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const double a = x - x0, b = y - y0;
  // On a grid line the far neighbour carries no weight and is not consulted.
  const int x1 = a > 0.0 ? x0 + 1 : x0;
  const int y1 = b > 0.0 ? y0 + 1 : y0;
  if (!depth.valid(x0, y0) || !depth.valid(x1, y0) || !depth.valid(x0, y1) || !depth.valid(x1, y1)) {
    return std::nullopt;
  }
  const double top = (1.0 - a) * depth.at(x0, y0) + a * depth.at(x1, y0);
  const double bottom = (1.0 - a) * depth.at(x0, y1) + a * depth.at(x1, y1);
  return (1.0 - b) * top + b * bottom;
}

std::vector<Match2D3D> Lift(const QueryJob& job, const MapEntry& entry, const DepthMap& depth,
                            const CorrespondenceField* db_to_query, const CorrespondenceField* query_to_db,
                            double threshold, int source) {
  const Pose world_from_db = entry.pose.Inverse();
  std::vector<Match2D3D> out;

  if (db_to_query != nullptr) {
    const CorrespondenceField& f = *db_to_query;
    CheckIds(f, entry.id, job.id);
    // The field grid may refine the depth grid by an integer factor; each cell
    // then reads the depth sample whose block contains it.
    const uint32_t fx = depth.width > 0 ? f.grid_width / depth.width : 0;
    const uint32_t fy = depth.height > 0 ? f.grid_height / depth.height : 0;
    if (fx == 0 || fx != fy || fx * depth.width != f.grid_width || fy * depth.height != f.grid_height ||
        !CoversImage(f, entry.intrinsics)) {
      throw ValidationError("field " + f.source_id + " -> " + f.target_id + " grid " + std::to_string(f.grid_width) +
                            "x" + std::to_string(f.grid_height) + " does not match the depth grid " +
                            std::to_string(depth.width) + "x" + std::to_string(depth.height) + " of " + entry.id);
    }
    for (const FilteredMatch& m : FilterMatches(f, threshold)) {
      const int col = static_cast<int>(m.cell % f.grid_width / fx);
      const int row = static_cast<int>(m.cell / f.grid_width / fy);
      if (!depth.valid(col, row)) continue;
      const Eigen::Vector3d x = Unproject(entry.intrinsics, m.source_pixel, depth.at(col, row));
      out.push_back({m.target_pixel, world_from_db.Apply(x), m.confidence, source});
    }
  }

  if (query_to_db != nullptr) {
    const CorrespondenceField& f = *query_to_db;
    CheckIds(f, job.id, entry.id);
    if (!CoversImage(f, job.intrinsics)) {
      throw ValidationError("field " + f.source_id + " -> " + f.target_id + " does not cover the " +
                            std::to_string(job.intrinsics.width) + "x" + std::to_string(job.intrinsics.height) +
                            " query image");
    }
    const bool same_grid = depth.width == entry.intrinsics.width && depth.height == entry.intrinsics.height;
    const double sx = static_cast<double>(depth.width) / entry.intrinsics.width;
    const double sy = static_cast<double>(depth.height) / entry.intrinsics.height;
    for (const FilteredMatch& m : FilterMatches(f, threshold)) {
      const Eigen::Vector2d at =
          same_grid ? m.target_pixel
                    : Eigen::Vector2d((m.target_pixel.x() + 0.5) * sx - 0.5, (m.target_pixel.y() + 0.5) * sy - 0.5);
      const std::optional<double> z = InterpDepth(depth, at);
      if (!z) continue;
      const Eigen::Vector3d x = Unproject(entry.intrinsics, m.target_pixel, *z);
      out.push_back({m.source_pixel, world_from_db.Apply(x), m.confidence, source});
    }
  }
  return out;
}

void LocalizerConfig::Validate() const {
  if (k_loc < 0) throw ConfigError("k_loc must be non-negative");
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    throw ConfigError("confidence threshold must lie in [0, 1]");
  }
  ransac.Validate();
}

const char* StatusName(LocalizeStatus status) {
  switch (status) {
    case LocalizeStatus::kOk:
      return "ok";
    case LocalizeStatus::kNoRetrieval:
      return "no_retrieval";
    case LocalizeStatus::kNoMatches:
      return "no_matches";
    case LocalizeStatus::kTooFewMatches:
      return "too_few_matches";
    case LocalizeStatus::kNotConverged:
      return "not_converged";
    case LocalizeStatus::kError:
      return "error";
  }
  return "unknown";
}

Localizer::Localizer(Map map) : map_(std::move(map)), index_(map_.BuildIndex()) {
  map_.Validate();
  depth_.reserve(map_.entries.size());
  for (const MapEntry& e : map_.entries) depth_.push_back(DequantizeDepth(e.depth));
}

LocalizeResult Localizer::Localize(const QueryJob& job, const FieldLoader& load, const LocalizerConfig& cfg) const {
  cfg.Validate();
  job.intrinsics.Validate();
  LocalizeResult result;
  result.query_id = job.id;

  std::vector<int> entries;
  if (cfg.k_loc > 0 && index_.size() > 0) {
    for (const RetrievalHit& hit : index_.TopK(job.descriptor, cfg.k_loc)) {
      result.retrieved.push_back(hit.id);
      entries.push_back(map_.Find(hit.id));
    }
  }
  if (entries.empty()) {
    result.status = LocalizeStatus::kNoRetrieval;
    return result;
  }
  std::sort(entries.begin(), entries.end(),
            [&](int a, int b) { return map_.entries[a].id < map_.entries[b].id; });

  const int n = static_cast<int>(entries.size());
  std::vector<std::vector<Match2D3D>> lifted(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      const MapEntry& entry = map_.entries[entries[i]];
      const CorrespondenceField d2q = load(entry.id, job.id);
      const CorrespondenceField q2d = load(job.id, entry.id);
      lifted[i] = Lift(job, entry, depth_[entries[i]], &d2q, &q2d, cfg.confidence_threshold, entries[i]);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  std::vector<Match2D3D> matches;
  for (const auto& part : lifted) matches.insert(matches.end(), part.begin(), part.end());
  result.num_matches = matches.size();
  if (matches.empty()) {
    result.status = LocalizeStatus::kNoMatches;
    return result;
  }
  if (matches.size() < 3) {
    result.status = LocalizeStatus::kTooFewMatches;
    return result;
  }
  RansacConfig ransac = cfg.ransac;
  ransac.seed = DeriveSeed(cfg.ransac.seed, "localize/" + job.id);
  result.estimate = RansacPnp(matches, job.intrinsics, ransac);
  result.status = result.estimate.converged ? LocalizeStatus::kOk : LocalizeStatus::kNotConverged;
  return result;
}

std::vector<EvalThreshold> ParseThresholds(const std::string& text) {
  std::vector<EvalThreshold> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const size_t colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("bad threshold '" + item + "': expected t_m:r_deg");
    out.push_back({ParsePositive(item.substr(0, colon), item), ParsePositive(item.substr(colon + 1), item)});
  }
  if (out.empty() || (!text.empty() && text.back() == ',')) throw ConfigError("bad threshold list '" + text + "'");
  return out;
}

EvalReport Evaluate(std::span<const EvalSample> samples, std::span<const EvalThreshold> thresholds) {
  if (samples.empty()) throw ValidationError("nothing to evaluate");
  EvalReport report;
  report.num_queries = samples.size();
  report.recall.assign(thresholds.size(), 0.0);
  std::vector<double> rot, trans;
  std::vector<size_t> hits(thresholds.size(), 0);
  for (const EvalSample& s : samples) {
    if (!s.success) continue;
    const PoseError err = ComputePoseError(s.estimate, s.ground_truth);
    rot.push_back(err.rotation_deg);
    trans.push_back(err.translation_m);
    for (size_t t = 0; t < thresholds.size(); ++t) {
      hits[t] += err.translation_m <= thresholds[t].translation_m && err.rotation_deg <= thresholds[t].rotation_deg;
    }
  }
  report.num_success = rot.size();
  for (size_t t = 0; t < thresholds.size(); ++t) {
    report.recall[t] = static_cast<double>(hits[t]) / static_cast<double>(samples.size());
  }
  report.median_rotation_deg = LowerMedian(std::move(rot));
  report.median_translation_m = LowerMedian(std::move(trans));
  return report;
}

}  // namespace imloc
