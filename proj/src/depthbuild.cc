#include "imloc/depthbuild.h"

#include <cmath>
#include <limits>

#include "imloc/errors.h"

namespace imloc {
namespace {

// Observation in the form the inner loops need.
struct PreparedObservation {
  Eigen::Matrix3d R;
  Eigen::Vector3d t;
  Eigen::Vector3d center;
  Eigen::Vector3d bearing_cam;    // observed, unit, camera frame
  Eigen::Vector3d bearing_world;  // observed, unit, world frame
  double weight = 1.0;
};

PreparedObservation Prepare(const Observation& obs) {
  PreparedObservation p;
  p.R = obs.pose.R();
  p.t = obs.pose.translation;
  p.center = obs.pose.Center();
  p.bearing_cam = PixelBearing(obs.intrinsics, obs.pixel);
  p.bearing_world = p.R.transpose() * p.bearing_cam;
  p.weight = obs.confidence;
  return p;
}

std::optional<double> ClosestDepth(const Eigen::Vector3d& r, const Eigen::Vector3d& c, const PreparedObservation& o) {
  const Eigen::Vector3d n = r.cross(o.bearing_world);
  const double denom = n.squaredNorm();
  if (denom < 1e-12) return std::nullopt;
  const double d = (o.center - c).cross(o.bearing_world).dot(n) / denom;
  if (!(d > 0.0)) return std::nullopt;
  return d;
}

// Angular error of observation o at depth d as a rotation vector
// e = angle * (b x q) / |b x q|, so |e| is the angle and e is smooth in d.
// Also returns de/dd.
struct AngularResidual {
  Eigen::Vector3d e;
  Eigen::Vector3d de;
};

AngularResidual ResidualAt(const Eigen::Vector3d& r, const Eigen::Vector3d& c, const PreparedObservation& o, double d) {
  const Eigen::Vector3d q = o.R * (c + d * r) + o.t;
  const Eigen::Vector3d v = o.R * r;
  const Eigen::Vector3d bxq = o.bearing_cam.cross(q);
  const Eigen::Vector3d bxv = o.bearing_cam.cross(v);
  const double s = bxq.norm();
  const double cs = o.bearing_cam.dot(q);
  const double dc = o.bearing_cam.dot(v);
  if (s < 1e-14 * std::fabs(cs)) {
    // e ~ (b x q) / c near the bearing
    return {bxq / cs, bxv / cs - bxq * (dc / (cs * cs))};
  }
  const Eigen::Vector3d u = bxq / s;
  const double ds = u.dot(bxv);
  const double angle = std::atan2(s, cs);
  const double dangle = (cs * ds - s * dc) / (s * s + cs * cs);
  const Eigen::Vector3d du = (bxv - u * ds) / s;
  return {angle * u, dangle * u + angle * du};
}

double Angle(const Eigen::Vector3d& r, const Eigen::Vector3d& c, const PreparedObservation& o, double d) {
  const Eigen::Vector3d q = o.R * (c + d * r) + o.t;
  return std::atan2(o.bearing_cam.cross(q).norm(), o.bearing_cam.dot(q));
}

double WeightedCost(const Eigen::Vector3d& r, const Eigen::Vector3d& c, std::span<const PreparedObservation> obs,
                    std::span<const int> inliers, double d) {
  double cost = 0.0;
  for (int i : inliers) {
    const double a = Angle(r, c, obs[i], d);
    cost += obs[i].weight * a * a;
  }
  return cost;
}

int CountInliers(const Eigen::Vector3d& r, const Eigen::Vector3d& c, std::span<const PreparedObservation> obs, double d,
                 double threshold, std::vector<int>* members) {
  int n = 0;
  if (members) members->clear();
  for (size_t i = 0; i < obs.size(); ++i) {
    if (Angle(r, c, obs[i], d) < threshold) {
      ++n;
      if (members) members->push_back(static_cast<int>(i));
    }
  }
  return n;
}

std::optional<PixelDepth> Triangulate(const Eigen::Vector3d& r, const Eigen::Vector3d& c,
                                      std::span<const PreparedObservation> obs, const TriangulationConfig& cfg) {
  int best_inliers = 0;
  double best_depth = 0.0;
  for (size_t h = 0; h < obs.size(); ++h) {
    const auto d = ClosestDepth(r, c, obs[h]);
    if (!d) continue;
    const int n = CountInliers(r, c, obs, *d, cfg.angular_threshold_rad, nullptr);
    if (n > best_inliers) {
      best_inliers = n;
      best_depth = *d;
    }
  }
  if (best_inliers == 0) return std::nullopt;

  std::vector<int> members;
  CountInliers(r, c, obs, best_depth, cfg.angular_threshold_rad, &members);
  PixelDepth out;
  out.inliers = best_inliers;
  out.hypothesis_depth = best_depth;
  double d = best_depth;
  double cost = WeightedCost(r, c, obs, members, d);
  out.cost_initial = cost;
  double weight_sum = 0.0;
  for (int i : members) weight_sum += obs[i].weight;

  // Half-gradient of the cost, and the Gauss-Newton curvature.
  const auto gradient = [&](double at, double* gn_curvature) {
    double g = 0.0, h = 0.0;
    for (int i : members) {
      const AngularResidual res = ResidualAt(r, c, obs[i], at);
      g += obs[i].weight * res.e.dot(res.de);
      h += obs[i].weight * res.de.squaredNorm();
    }
    if (gn_curvature) *gn_curvature = h;
    return g;
  };

  // Damped Newton in one dimension, curvature from a central difference of
  // the analytic gradient (Gauss-Newton where that is not positive). A step is
  // taken only if it does not raise the cost; otherwise it is halved. Close to
  // the minimum the cost change drops below its rounding noise, so there a
  // step that shrinks the gradient is also taken.
  for (int it = 0; it < cfg.max_refine_iterations; ++it) {
    double h = 0.0;
    const double g = gradient(d, &h);
    if (!(h > 0.0) || g == 0.0) break;
    const double fd_step = 1e-4 * d;
    const double curvature = (gradient(d + fd_step, nullptr) - gradient(d - fd_step, nullptr)) / (2.0 * fd_step);
    if (curvature > 0.0) h = curvature;
    double step = -g / h;
    bool accepted = false;
    for (int halving = 0; halving < 40; ++halving, step *= 0.5) {
      const double candidate = d + step;
      if (!(candidate > 0.0)) continue;
      const double candidate_cost = WeightedCost(r, c, obs, members, candidate);
      // Each angle carries a few ulps of absolute error, so the cost is only
      // known to about 2 * delta * sqrt(cost * sum w).
      const double noise = 2.0 * 1e-15 * std::sqrt(cost * weight_sum);
      const bool within_noise = candidate_cost <= cost + noise &&
                                std::fabs(gradient(candidate, nullptr)) < std::fabs(g);
      if (candidate_cost <= cost || within_noise) {
        d = candidate;
        cost = candidate_cost;
        accepted = true;
        break;
      }
    }
    if (!accepted || std::fabs(step) < cfg.refine_tolerance * d) break;
  }
  // Noise-level steps can leave an already optimal start a few ulps worse.
  if (cost > out.cost_initial) {
    d = best_depth;
    cost = out.cost_initial;
  }
  out.depth = d;
  out.cost_final = cost;
  if (out.cost_final > out.cost_initial) out.monotone = false;
  out.refined_inliers = CountInliers(r, c, obs, d, cfg.angular_threshold_rad, nullptr);
  return out;
}

}  // namespace

void TriangulationConfig::Validate() const {
  if (!(angular_threshold_rad > 0.0)) throw ConfigError("angular inlier threshold must be positive");
  if (min_inliers < 1) throw ConfigError("minimum inlier count must be at least 1");
  if (!(confidence_threshold >= 0.0 && confidence_threshold <= 1.0)) {
    throw ConfigError("confidence threshold must lie in [0, 1]");
  }
  if (k_map < 1) throw ConfigError("covisible count must be at least 1");
  if (max_refine_iterations < 0) throw ConfigError("refinement iterations must be non-negative");
  if (!(refine_tolerance > 0.0)) throw ConfigError("refinement tolerance must be positive");
}

std::optional<double> DepthHypothesis(const Ray& ref_ray, const Eigen::Vector3d& ref_center, const Observation& obs) {
  return ClosestDepth(ref_ray.direction, ref_center, Prepare(obs));
}

std::optional<PixelDepth> TriangulatePixelDetailed(const Ray& ref_ray, const Eigen::Vector3d& ref_center,
                                                   std::span<const Observation> observations,
                                                   const TriangulationConfig& cfg) {
  cfg.Validate();
  std::vector<PreparedObservation> prepared;
  prepared.reserve(observations.size());
  for (const Observation& o : observations) prepared.push_back(Prepare(o));
  return Triangulate(ref_ray.direction, ref_center, prepared, cfg);
}

std::optional<PixelDepth> TriangulatePixel(const Ray& ref_ray, const Eigen::Vector3d& ref_center,
                                           std::span<const Observation> observations,
                                           const TriangulationConfig& cfg) {
  auto result = TriangulatePixelDetailed(ref_ray, ref_center, observations, cfg);
  if (!result || result->inliers < cfg.min_inliers) return std::nullopt;
  return result;
}

DepthMap BuildDepthMap(const PosedView& ref, std::span<const PosedView> covisible,
                       std::span<const CorrespondenceField> fields, const TriangulationConfig& cfg,
                       DepthBuildStats* stats) {
  cfg.Validate();
  ref.intrinsics.Validate();
  if (fields.size() != covisible.size()) {
    throw ValidationError("depth build for '" + ref.id + "': " + std::to_string(fields.size()) + " fields for " +
                          std::to_string(covisible.size()) + " covisible views");
  }
  if (fields.empty()) throw ValidationError("depth build for '" + ref.id + "' needs at least one field");
  const CorrespondenceField& first = fields.front();
  for (size_t i = 0; i < fields.size(); ++i) {
    const CorrespondenceField& f = fields[i];
    if (f.source_id != ref.id || f.target_id != covisible[i].id) {
      throw ValidationError("field " + f.source_id + "->" + f.target_id + " does not pair " + ref.id + "->" +
                            covisible[i].id);
    }
    if (f.grid_width != first.grid_width || f.grid_height != first.grid_height || f.scale_x != first.scale_x ||
        f.scale_y != first.scale_y) {
      throw ValidationError("fields of '" + ref.id + "' use different match grids");
    }
    f.Validate();
    covisible[i].intrinsics.Validate();
  }

  const int width = static_cast<int>(first.grid_width);
  const int height = static_cast<int>(first.grid_height);
  DepthMap depth(width, height);
  const Eigen::Matrix3d ref_rt = ref.pose.R().transpose();
  const Eigen::Vector3d ref_center = ref.pose.Center();

  std::vector<PreparedObservation> views(covisible.size());
  for (size_t i = 0; i < covisible.size(); ++i) {
    Observation o;
    o.pose = covisible[i].pose;
    o.intrinsics = covisible[i].intrinsics;
    o.pixel = Eigen::Vector2d(o.intrinsics.cx, o.intrinsics.cy);
    views[i] = Prepare(o);
  }

  size_t valid = 0;
  bool monotone = true;
#pragma omp parallel for schedule(dynamic, 4) reduction(+ : valid) reduction(&& : monotone)
  for (int row = 0; row < height; ++row) {
    std::vector<PreparedObservation> obs;
    obs.reserve(fields.size());
    for (int col = 0; col < width; ++col) {
      obs.clear();
      for (size_t i = 0; i < fields.size(); ++i) {
        const MatchCell& cell = fields[i].at(col, row);
        if (cell.confidence <= 0.0f || cell.confidence < cfg.confidence_threshold) continue;
        PreparedObservation o = views[i];
        o.bearing_cam = PixelBearing(covisible[i].intrinsics, Eigen::Vector2d(cell.target_x, cell.target_y));
        o.bearing_world = o.R.transpose() * o.bearing_cam;
        o.weight = cell.confidence;
        obs.push_back(o);
      }
      if (static_cast<int>(obs.size()) < cfg.min_inliers) continue;
      const Eigen::Vector3d bearing = PixelBearing(ref.intrinsics, first.SourcePixel(col, row));
      const auto result = Triangulate(ref_rt * bearing, ref_center, obs, cfg);
      if (!result) continue;
      monotone = monotone && result->monotone;
      if (result->inliers < cfg.min_inliers) continue;
      const double z = result->depth * bearing.z();
      if (!(z > 0.0) || !std::isfinite(z)) continue;
      depth.at(col, row) = static_cast<float>(z);
      ++valid;
    }
  }
  if (stats) {
    stats->pixels = depth.size();
    stats->valid = valid;
    stats->refinement_monotone = monotone;
  }
  return depth;
}

std::vector<std::string> SelectCovisible(const DescriptorIndex& index, const std::string& id, int k) {
  if (k < 1) throw ConfigError("covisible count must be at least 1");
  const auto query = index.vector(id);
  std::vector<std::string> out;
  for (const RetrievalHit& hit : index.TopK(query, k + 1)) {
    if (hit.id != id) out.push_back(hit.id);
  }
  if (static_cast<int>(out.size()) > k) out.resize(k);
  return out;
}

}  // namespace imloc
