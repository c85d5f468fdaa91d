#include "imloc/posest.h"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Cholesky>

#include "imloc/errors.h"
#include "imloc/random.h"

namespace imloc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Eigen::Matrix3d Skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d m;
  m << 0, -v.z(), v.y(), v.z(), 0, -v.x(), -v.y(), v.x(), 0;
  return m;
}

// Squared reprojection error, +inf behind the camera.
inline double SquaredError(const Eigen::Matrix3d& R, const Eigen::Vector3d& t, const CameraIntrinsics& cam,
                           const Match2D3D& m) {
  const Eigen::Vector3d x = R * m.point + t;
  if (!(x.z() > 0.0)) return kInf;
  const double du = cam.fx * x.x() / x.z() + cam.cx - m.pixel.x();
  const double dv = cam.fy * x.y() / x.z() + cam.cy - m.pixel.y();
  return du * du + dv * dv;
}

// Weighted MSAC cost; gives up (returns +inf) once it exceeds `bound`.
double MsacCost(const Pose& pose, std::span<const Match2D3D> matches, std::span<const uint32_t> subset,
                const CameraIntrinsics& cam, double tau2, double bound) {
  const Eigen::Matrix3d R = pose.R();
  double cost = 0.0;
  for (uint32_t i : subset) {
    const Match2D3D& m = matches[i];
    cost += m.weight * std::min(SquaredError(R, pose.translation, cam, m), tau2);
    if (cost > bound) return kInf;
  }
  return cost;
}

struct Hypothesis {
  Pose pose;
  double cost = kInf;
};

}  // namespace

void RansacConfig::Validate() const {
  if (!(reproj_threshold > 0.0)) throw ConfigError("reprojection threshold must be positive");
  if (max_iterations < 1) throw ConfigError("max iterations must be at least 1");
  if (batch_size < 1 || batch_size > max_iterations) {
    throw ConfigError("batch size must lie in [1, max iterations]");
  }
  if (!(miss_probability > 0.0 && miss_probability < 1.0)) throw ConfigError("miss probability must lie in (0, 1)");
  if (max_scoring < 3) throw ConfigError("max scoring correspondences must be at least 3");
  if (lm_max_iterations < 0) throw ConfigError("LM iterations must be non-negative");
}

int RequiredIterations(double inlier_ratio, double miss_probability, int sample_size, int max_iterations) {
  if (!(inlier_ratio > 0.0)) return max_iterations;
  if (inlier_ratio >= 1.0) return 1;
  const double p = std::pow(inlier_ratio, sample_size);
  const double denom = std::log1p(-p);
  if (!(denom < 0.0)) return max_iterations;
  const double n = std::ceil(std::log(miss_probability) / denom);
  if (!(n < max_iterations)) return max_iterations;
  return std::max(1, static_cast<int>(n));
}

double ReprojectionError(const Pose& pose, const CameraIntrinsics& camera, const Match2D3D& m) {
  return std::sqrt(SquaredError(pose.R(), pose.translation, camera, m));
}

MsacResult MsacScore(const Pose& pose, std::span<const Match2D3D> matches, const CameraIntrinsics& camera,
                     double tau) {
  const Eigen::Matrix3d R = pose.R();
  const double tau2 = tau * tau;
  MsacResult r;
  r.inliers.resize(matches.size(), 0);
  for (size_t i = 0; i < matches.size(); ++i) {
    const double e2 = SquaredError(R, pose.translation, camera, matches[i]);
    r.cost += matches[i].weight * std::min(e2, tau2);
    if (e2 < tau2) {
      r.inliers[i] = 1;
      ++r.num_inliers;
    }
  }
  return r;
}

double RobustLoss::Rho(double s) const {
  const double c2 = scale * scale;
  if (kind == Kind::kTruncated) return std::min(s, c2);
  return 0.5 * c2 * std::log1p(s / c2);
}

double RobustLoss::Derivative(double s) const {
  const double c2 = scale * scale;
  if (kind == Kind::kTruncated) return s < c2 ? 1.0 : 0.0;
  return 0.5 / (1.0 + s / c2);
}

double RobustCost(const Pose& pose, std::span<const Match2D3D> matches, const CameraIntrinsics& camera,
                  const RobustLoss& loss) {
  const Eigen::Matrix3d R = pose.R();
  double cost = 0.0;
  for (const Match2D3D& m : matches) cost += m.weight * loss.Rho(SquaredError(R, pose.translation, camera, m));
  return cost;
}

Pose ApplyPoseUpdate(const Pose& pose, const PoseDelta& delta) {
  const Eigen::Quaterniond q = ExpMap(delta.head<3>());
  Pose out;
  out.rotation = (q * pose.rotation).normalized();
  out.translation = q * pose.translation + delta.tail<3>();
  return out;
}

Eigen::Vector2d ReprojectionResidual(const Pose& pose, const CameraIntrinsics& camera, const Match2D3D& m) {
  const Eigen::Vector3d x = pose.Apply(m.point);
  return {camera.fx * x.x() / x.z() + camera.cx - m.pixel.x(), camera.fy * x.y() / x.z() + camera.cy - m.pixel.y()};
}

Eigen::Matrix<double, 2, 6> ReprojectionJacobian(const Pose& pose, const CameraIntrinsics& camera,
                                                 const Match2D3D& m) {
  const Eigen::Vector3d x = pose.Apply(m.point);
  const double iz = 1.0 / x.z();
  Eigen::Matrix<double, 2, 3> dpi;
  dpi << camera.fx * iz, 0.0, -camera.fx * x.x() * iz * iz, 0.0, camera.fy * iz, -camera.fy * x.y() * iz * iz;
  Eigen::Matrix<double, 2, 6> J;
  J.leftCols<3>() = -dpi * Skew(x);
  J.rightCols<3>() = dpi;
  return J;
}

RefineResult RefinePose(const Pose& initial, std::span<const Match2D3D> matches, const CameraIntrinsics& camera,
                        const RobustLoss& loss, const RefineOptions& options) {
  RefineResult out;
  out.pose = initial;
  double cost = RobustCost(initial, matches, camera, loss);
  out.initial_cost = cost;
  double lambda = 1e-4;
  for (int it = 0; it < options.max_iterations; ++it) {
    out.iterations = it + 1;
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    PoseDelta g = PoseDelta::Zero();
    const Eigen::Matrix3d R = out.pose.R();
    for (const Match2D3D& m : matches) {
      const double s = SquaredError(R, out.pose.translation, camera, m);
      if (!std::isfinite(s)) continue;
      const double psi = m.weight * loss.Derivative(s);
      if (psi == 0.0) continue;
      const Eigen::Vector2d r = ReprojectionResidual(out.pose, camera, m);
      const Eigen::Matrix<double, 2, 6> J = ReprojectionJacobian(out.pose, camera, m);
      H.noalias() += psi * J.transpose() * J;
      g.noalias() += psi * J.transpose() * r;
    }
    // Gradient of the cost is 2g.
    if (2.0 * g.norm() < options.gradient_tolerance) {
      out.converged = true;
      break;
    }
    bool accepted = false;
    while (lambda < 1e16) {
      Eigen::Matrix<double, 6, 6> A = H;
      for (int k = 0; k < 6; ++k) A(k, k) += lambda * std::max(H(k, k), 1e-12);
      const PoseDelta delta = A.ldlt().solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      const Pose candidate = ApplyPoseUpdate(out.pose, delta);
      const double candidate_cost = RobustCost(candidate, matches, camera, loss);
      if (candidate_cost <= cost) {
        const double change = cost - candidate_cost;
        out.pose = candidate;
        cost = candidate_cost;
        lambda = std::max(lambda * 0.1, 1e-12);
        accepted = true;
        if (change <= options.relative_cost_tolerance * cost) out.converged = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted) {
      // No descent direction at any damping: a numerical minimum.
      out.converged = true;
      break;
    }
    if (out.converged) break;
  }
  out.final_cost = cost;
  out.monotone = out.final_cost <= out.initial_cost;
  return out;
}

PoseEstimate RansacPnp(std::span<const Match2D3D> matches, const CameraIntrinsics& camera, const RansacConfig& cfg) {
  cfg.Validate();
  const size_t n = matches.size();
  if (n < 3) {
    throw ValidationError("pose estimation is under-constrained: " + std::to_string(n) + " matches, need at least 3");
  }
  for (const Match2D3D& m : matches) {
    if (!(m.weight > 0.0) || !m.pixel.allFinite() || !m.point.allFinite()) {
      throw ValidationError("matches need finite coordinates and positive weights");
    }
  }
  const double tau = cfg.reproj_threshold;
  const double tau2 = tau * tau;
  const RobustLoss cauchy = RobustLoss::Cauchy(cfg.cauchy_scale > 0.0 ? cfg.cauchy_scale : tau);

  const size_t stride = (n + cfg.max_scoring - 1) / cfg.max_scoring;
  std::vector<uint32_t> subset;
  for (size_t i = 0; i < n; i += stride) subset.push_back(static_cast<uint32_t>(i));
  std::vector<Match2D3D> subset_matches;
  subset_matches.reserve(subset.size());
  for (uint32_t i : subset) subset_matches.push_back(matches[i]);

  std::vector<Eigen::Vector3d> bearings(n);
  for (size_t i = 0; i < n; ++i) bearings[i] = PixelBearing(camera, matches[i].pixel);

  PoseEstimate est;
  Rng rng(cfg.seed);
  Pose best_pose;
  double best_cost = kInf;
  int best_inliers = 0;
  int required = cfg.max_iterations;
  std::vector<std::array<uint32_t, 3>> samples;
  std::vector<std::vector<Pose>> solutions;
  std::vector<Hypothesis> hyps;

  while (est.iterations < std::min(required, cfg.max_iterations)) {
    const int batch = std::min(cfg.batch_size, cfg.max_iterations - est.iterations);
    samples.resize(batch);
    for (auto& s : samples) {
      s[0] = static_cast<uint32_t>(rng.index(n));
      do s[1] = static_cast<uint32_t>(rng.index(n)); while (s[1] == s[0]);
      do s[2] = static_cast<uint32_t>(rng.index(n)); while (s[2] == s[0] || s[2] == s[1]);
    }
    solutions.assign(batch, {});
#pragma omp parallel for schedule(static)
    for (int b = 0; b < batch; ++b) {
      const auto& s = samples[b];
      solutions[b] = SolveP3P({bearings[s[0]], bearings[s[1]], bearings[s[2]]},
                              {matches[s[0]].point, matches[s[1]].point, matches[s[2]].point});
    }
    hyps.clear();
    for (const auto& sol : solutions) {
      for (const Pose& p : sol) hyps.push_back({p, kInf});
    }
    est.iterations += batch;

    // Scores above the pre-batch best can never win, so they stop early.
    const double bound = best_cost;
    const int num_hyps = static_cast<int>(hyps.size());
#pragma omp parallel for schedule(dynamic, 16)
    for (int h = 0; h < num_hyps; ++h) {
      hyps[h].cost = MsacCost(hyps[h].pose, matches, subset, camera, tau2, bound);
    }
    int winner = -1;
    for (int h = 0; h < num_hyps; ++h) {
      if (hyps[h].cost < best_cost && (winner < 0 || hyps[h].cost < hyps[winner].cost)) winner = h;
    }
    if (winner < 0) continue;

    best_pose = hyps[winner].pose;
    best_cost = hyps[winner].cost;
    // Local optimization of the truncated cost on the scoring subset.
    const RefineResult lo = RefinePose(best_pose, subset_matches, camera, RobustLoss::Truncated(tau),
                                       {cfg.lm_max_iterations, 1e-10, 1e-12});
    ++est.local_optimizations;
    est.refinement_monotone = est.refinement_monotone && lo.monotone;
    const MsacResult lo_score = MsacScore(lo.pose, subset_matches, camera, tau);
    if (lo_score.cost < best_cost) {
      best_pose = lo.pose;
      best_cost = lo_score.cost;
    }
    best_inliers = MsacScore(best_pose, subset_matches, camera, tau).num_inliers;
    required = RequiredIterations(static_cast<double>(best_inliers) / subset.size(), cfg.miss_probability, 3,
                                  cfg.max_iterations);
  }

  est.pose = best_pose;
  if (best_inliers < 3) {
    est.inliers.assign(n, 0);
    est.score = std::isfinite(best_cost) ? MsacScore(best_pose, matches, camera, tau).cost : kInf;
    return est;
  }

  // Final Cauchy refinement over the full-set inliers.
  MsacResult full = MsacScore(best_pose, matches, camera, tau);
  std::vector<Match2D3D> inlier_matches;
  inlier_matches.reserve(full.num_inliers);
  for (size_t i = 0; i < n; ++i) {
    if (full.inliers[i]) inlier_matches.push_back(matches[i]);
  }
  const RefineResult final_fit =
      RefinePose(best_pose, inlier_matches, camera, cauchy, {cfg.lm_max_iterations, 1e-10, 1e-12});
  est.refinement_monotone = est.refinement_monotone && final_fit.monotone;
  est.pose = final_fit.pose;
  full = MsacScore(est.pose, matches, camera, tau);
  est.inliers = std::move(full.inliers);
  est.num_inliers = full.num_inliers;
  est.score = full.cost;
  est.converged = est.num_inliers >= 3;
  return est;
}

}  // namespace imloc
