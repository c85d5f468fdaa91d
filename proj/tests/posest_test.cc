#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "imloc/errors.h"
#include "imloc/parallel.h"
#include "imloc/posest.h"
#include "imloc/random.h"
#include "test_util.h"

namespace imloc {
namespace {

using testing::RandomPose;
using testing::RandomUnit;
using testing::Rad;

CameraIntrinsics QueryCamera() {
  CameraIntrinsics c;
  c.fx = c.fy = 500.0;
  c.cx = 319.5;
  c.cy = 239.5;
  c.width = 640;
  c.height = 480;
  return c;
}

struct PnpCase {
  Pose gt;
  std::vector<Match2D3D> matches;
  std::vector<uint8_t> is_outlier;
};

PnpCase MakePnp(Rng& rng, int n, double outlier_fraction, double sigma = 0.0) {
  const CameraIntrinsics cam = QueryCamera();
  PnpCase c;
  c.gt = RandomPose(rng, std::numbers::pi, 3.0);
  const Pose world_from_cam = c.gt.Inverse();
  for (int i = 0; i < n; ++i) {
    Match2D3D m;
    const Eigen::Vector2d px(rng.uniform(0, cam.width - 1), rng.uniform(0, cam.height - 1));
    m.point = world_from_cam.Apply(Unproject(cam, px, rng.uniform(2.0, 10.0)));
    m.pixel = px + sigma * Eigen::Vector2d(rng.normal(), rng.normal());
    m.weight = rng.uniform(0.5, 1.0);
    const bool outlier = rng.uniform() < outlier_fraction;
    if (outlier) m.pixel = Eigen::Vector2d(rng.uniform(0, cam.width - 1), rng.uniform(0, cam.height - 1));
    c.matches.push_back(m);
    c.is_outlier.push_back(outlier);
  }
  return c;
}

TEST(RequiredIterations, ClosedForm) {
  EXPECT_EQ(RequiredIterations(0.5, 1e-4, 3), 69);
  EXPECT_EQ(RequiredIterations(0.1, 1e-4, 3), 9206);
  // Hand evaluation of ceil(ln(eta) / ln(1 - eps^3)).
  EXPECT_EQ(RequiredIterations(0.5, 1e-4, 3), static_cast<int>(std::ceil(std::log(1e-4) / std::log(0.875))));
  EXPECT_EQ(RequiredIterations(1.0, 1e-4, 3), 1);
  EXPECT_EQ(RequiredIterations(0.0, 1e-4, 3), 100000);
  EXPECT_EQ(RequiredIterations(0.0, 1e-4, 3, 500), 500);
  EXPECT_EQ(RequiredIterations(0.01, 1e-4, 3, 100000), 100000);
  EXPECT_EQ(RequiredIterations(0.999999, 1e-4, 3), 1);
  int prev = 1 << 30;
  for (double eps = 0.05; eps < 1.0; eps += 0.05) {
    const int n = RequiredIterations(eps, 1e-4, 3);
    EXPECT_LE(n, prev);
    prev = n;
  }
}

TEST(MsacScore, TruncationAndWeights) {
  const CameraIntrinsics cam = QueryCamera();
  const double tau = 12.0;
  Match2D3D a{{319.5, 239.5}, {0, 0, 5}, 1.0};
  Match2D3D b{{319.5 + 2 * tau, 239.5}, {0, 0, 5}, 1.0};
  std::vector<Match2D3D> ms = {a, b};
  MsacResult r = MsacScore(Pose(), ms, cam, tau);
  EXPECT_DOUBLE_EQ(r.cost, tau * tau);
  EXPECT_EQ(r.num_inliers, 1);
  EXPECT_EQ(r.inliers, (std::vector<uint8_t>{1, 0}));

  Match2D3D behind{{319.5, 239.5}, {0, 0, -5}, 0.5};
  ms = {a, behind};
  r = MsacScore(Pose(), ms, cam, tau);
  EXPECT_DOUBLE_EQ(r.cost, 0.5 * tau * tau);
  EXPECT_EQ(r.num_inliers, 1);

  Rng rng(1);
  PnpCase c = MakePnp(rng, 300, 0.3);
  const MsacResult exact = MsacScore(c.gt, c.matches, cam, tau);
  auto clean = c.matches;
  for (size_t i = 0; i < clean.size(); ++i) {
    if (c.is_outlier[i]) clean[i].pixel = *Project(cam, c.gt, clean[i].point);
  }
  const MsacResult zero = MsacScore(c.gt, clean, cam, tau);
  EXPECT_NEAR(zero.cost, 0.0, 1e-12);
  EXPECT_EQ(zero.num_inliers, 300);

  auto halved = c.matches;
  for (auto& m : halved) m.weight *= 0.5;
  const MsacResult h = MsacScore(c.gt, halved, cam, tau);
  EXPECT_DOUBLE_EQ(h.cost, 0.5 * exact.cost);
  EXPECT_EQ(h.inliers, exact.inliers);
}

TEST(MsacScore, NonIncreasingWhenErrorsShrink) {
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    PnpCase c = MakePnp(rng, 100, 0.5, 3.0);
    double prev = MsacScore(c.gt, c.matches, cam, 12.0).cost;
    for (int step = 0; step < 10; ++step) {
      for (auto& m : c.matches) {
        if (rng.uniform() < 0.3) m.pixel = m.pixel + 0.5 * (*Project(cam, c.gt, m.point) - m.pixel);
      }
      const double now = MsacScore(c.gt, c.matches, cam, 12.0).cost;
      EXPECT_LE(now, prev * (1 + 1e-15));
      prev = now;
    }
  }
}

TEST(RefinePose, JacobianMatchesFiniteDifferences) {
  Rng rng(3);
  const double h = 1e-6;
  for (int trial = 0; trial < 100; ++trial) {
    CameraIntrinsics cam = QueryCamera();
    cam.fx = rng.uniform(200, 900);
    cam.fy = cam.fx * rng.uniform(0.9, 1.1);
    const Pose pose = RandomPose(rng);
    const Eigen::Vector2d px(rng.uniform(0, 639), rng.uniform(0, 479));
    Match2D3D m;
    m.point = pose.Inverse().Apply(Unproject(cam, px, rng.uniform(1.0, 20.0)));
    m.pixel = px + Eigen::Vector2d(rng.normal(), rng.normal()) * 5.0;
    const Eigen::Matrix<double, 2, 6> J = ReprojectionJacobian(pose, cam, m);
    Eigen::Matrix<double, 2, 6> fd;
    for (int k = 0; k < 6; ++k) {
      PoseDelta d = PoseDelta::Zero();
      d[k] = h;
      fd.col(k) = (ReprojectionResidual(ApplyPoseUpdate(pose, d), cam, m) -
                   ReprojectionResidual(ApplyPoseUpdate(pose, -d), cam, m)) /
                  (2 * h);
    }
    EXPECT_LT((J - fd).norm() / J.norm(), 1e-4) << "trial " << trial;
  }
}

TEST(RefinePose, GroundTruthIsStationary) {
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(4);
  const PnpCase c = MakePnp(rng, 200, 0.0);
  const RefineResult r = RefinePose(c.gt, c.matches, cam, RobustLoss::Cauchy(12.0));
  const PoseError e = ComputePoseError(r.pose, c.gt);
  EXPECT_LT(e.rotation_deg, 1e-9);
  EXPECT_LT(e.translation_m, 1e-9);
  EXPECT_TRUE(r.converged);
}

TEST(RefinePose, RecoversPerturbedPose) {
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const PnpCase c = MakePnp(rng, 200, 0.0);
    Pose start = c.gt;
    start.rotation = Eigen::Quaterniond(Eigen::AngleAxisd(Rad(0.5), RandomUnit(rng))) * start.rotation;
    start.translation += 0.05 * RandomUnit(rng);
    const RefineResult r = RefinePose(start, c.matches, cam, RobustLoss::Cauchy(12.0));
    const PoseError e = ComputePoseError(r.pose, c.gt);
    EXPECT_LT(Rad(e.rotation_deg), 1e-8);
    EXPECT_LT(e.translation_m, 1e-8);
    EXPECT_TRUE(r.monotone);
    EXPECT_LE(r.final_cost, r.initial_cost);
  }
}

TEST(RefinePose, CommonWeightScaleKeepsTheMinimizer) {
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    const PnpCase c = MakePnp(rng, 300, 0.2, 1.0);
    auto scaled = c.matches;
    const double alpha = rng.uniform(0.01, 50.0);
    for (auto& m : scaled) m.weight *= alpha;
    for (const RobustLoss loss : {RobustLoss::Cauchy(12.0), RobustLoss::Truncated(12.0)}) {
      const RefineResult a = RefinePose(c.gt, c.matches, cam, loss);
      const RefineResult b = RefinePose(c.gt, scaled, cam, loss);
      const PoseError e = ComputePoseError(a.pose, b.pose);
      EXPECT_LT(Rad(e.rotation_deg), 1e-9);
      EXPECT_LT(e.translation_m, 1e-9);
    }
  }
}

TEST(RansacPnp, ExactMatchesStopAfterOneBatch) {
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    const PnpCase c = MakePnp(rng, 2000, 0.0);
    RansacConfig cfg;
    cfg.seed = trial;
    const PoseEstimate est = RansacPnp(c.matches, cam, cfg);
    const PoseError e = ComputePoseError(est.pose, c.gt);
    EXPECT_LT(e.rotation_deg, 1e-6);
    EXPECT_LT(e.translation_m, 1e-6);
    EXPECT_EQ(est.iterations, cfg.batch_size);
    EXPECT_EQ(est.num_inliers, 2000);
    EXPECT_TRUE(est.converged);
    EXPECT_TRUE(est.refinement_monotone);
  }
}

TEST(RansacPnp, HalfOutliersAreIdentified) {
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(8);
  for (int trial = 0; trial < 5; ++trial) {
    const PnpCase c = MakePnp(rng, 2000, 0.5);
    RansacConfig cfg;
    cfg.seed = 100 + trial;
    const PoseEstimate est = RansacPnp(c.matches, cam, cfg);
    // Flags equal the ground-truth classification. A uniform outlier lands
    // within tau of its true projection with probability ~0.15%; such a match
    // is a genuine inlier and pulls the Cauchy fit slightly.
    const MsacResult truth = MsacScore(c.gt, c.matches, cam, cfg.reproj_threshold);
    EXPECT_EQ(est.inliers, truth.inliers);
    int lucky = 0;
    for (size_t i = 0; i < c.matches.size(); ++i) {
      if (!c.is_outlier[i]) EXPECT_TRUE(est.inliers[i]);
      lucky += c.is_outlier[i] && est.inliers[i];
    }
    EXPECT_LT(lucky, 10);
    const PoseError e = ComputePoseError(est.pose, c.gt);
    const double tol = lucky == 0 ? 1e-6 : 0.01;
    EXPECT_LT(e.rotation_deg, tol);
    EXPECT_LT(e.translation_m, tol);
    EXPECT_GE(est.iterations, RequiredIterations(0.5, 1e-4));
  }
}

TEST(RansacPnp, SubsampledScoringStillFindsThePose) {
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(9);
  const PnpCase c = MakePnp(rng, 25000, 0.4, 0.5);
  RansacConfig cfg;
  const PoseEstimate est = RansacPnp(c.matches, cam, cfg);
  const PoseError e = ComputePoseError(est.pose, c.gt);
  EXPECT_LT(e.rotation_deg, 0.05);
  EXPECT_LT(e.translation_m, 0.01);
  EXPECT_EQ(est.inliers.size(), 25000u);
}

TEST(RansacPnp, TooFewMatches) {
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(10);
  const PnpCase c = MakePnp(rng, 2, 0.0);
  EXPECT_THROW(RansacPnp(c.matches, cam, RansacConfig()), ValidationError);
  RansacConfig bad;
  bad.reproj_threshold = 0.0;
  const PnpCase d = MakePnp(rng, 10, 0.0);
  EXPECT_THROW(RansacPnp(d.matches, cam, bad), ConfigError);
}

TEST(RansacPnp, DegenerateSamplesDoNotConverge) {
  // Collinear world points: every minimal sample is degenerate, so no
  // hypothesis exists and every draw still counts as an iteration.
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(11);
  std::vector<Match2D3D> ms;
  for (int i = 0; i < 200; ++i) {
    Match2D3D m;
    m.pixel = Eigen::Vector2d(rng.uniform(0, 639), rng.uniform(0, 479));
    m.point = Eigen::Vector3d(1.0, 2.0, 3.0) + rng.uniform(-5, 5) * Eigen::Vector3d(0.3, -0.2, 0.9);
    ms.push_back(m);
  }
  RansacConfig cfg;
  cfg.max_iterations = 3000;
  const PoseEstimate est = RansacPnp(ms, cam, cfg);
  EXPECT_FALSE(est.converged);
  EXPECT_EQ(est.iterations, 3000);
  EXPECT_EQ(est.num_inliers, 0);
}

TEST(RansacPnp, IndependentOfThreadCount) {
  const CameraIntrinsics cam = QueryCamera();
  Rng rng(12);
  const PnpCase c = MakePnp(rng, 3000, 0.6, 1.0);
  RansacConfig cfg;
  cfg.seed = 99;
  SetNumThreads(1);
  const PoseEstimate a = RansacPnp(c.matches, cam, cfg);
  SetNumThreads(4);
  const PoseEstimate b = RansacPnp(c.matches, cam, cfg);
  SetNumThreads(0);
  EXPECT_EQ(std::memcmp(a.pose.rotation.coeffs().data(), b.pose.rotation.coeffs().data(), 4 * sizeof(double)), 0);
  EXPECT_EQ(std::memcmp(a.pose.translation.data(), b.pose.translation.data(), 3 * sizeof(double)), 0);
  EXPECT_EQ(a.inliers, b.inliers);
  EXPECT_EQ(a.iterations, b.iterations);
  EXPECT_EQ(a.local_optimizations, b.local_optimizations);
  EXPECT_EQ(std::memcmp(&a.score, &b.score, sizeof(double)), 0);
}

}  // namespace
}  // namespace imloc
