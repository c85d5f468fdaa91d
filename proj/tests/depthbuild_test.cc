#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "imloc/depthbuild.h"
#include "imloc/errors.h"
#include "imloc/parallel.h"
#include "imloc/synth.h"
#include "test_util.h"

namespace imloc {
namespace {

using testing::RandomPose;
using testing::TestCamera;

Observation Observe(const Pose& pose, const Eigen::Vector3d& X, double conf = 1.0) {
  Observation o;
  o.pose = pose;
  o.intrinsics = TestCamera();
  o.pixel = *Project(o.intrinsics, pose, X);
  o.confidence = conf;
  return o;
}

// Camera at `center` looking at `target`; an independent construction from
// the synth module's.
Pose LookingAt(const Eigen::Vector3d& center, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - center).normalized();
  const Eigen::Vector3d x = Eigen::Vector3d(0.3, 1.0, 0.1).cross(z).normalized();
  Eigen::Matrix3d R;
  R.row(0) = x;
  R.row(1) = z.cross(x);
  R.row(2) = z;
  return Pose(R, -R * center);
}

double Angle(const Observation& o, const Eigen::Vector3d& X) {
  const Eigen::Vector3d observed = o.intrinsics.K().inverse() * Eigen::Vector3d(o.pixel.x(), o.pixel.y(), 1.0);
  const Eigen::Vector3d predicted = o.pose.Apply(X);
  return std::atan2(observed.cross(predicted).norm(), observed.dot(predicted));
}

const Ray kForward = Ray::FromDirection(Eigen::Vector3d::UnitZ());

TEST(DepthHypothesis, TwoRayClosestPoint) {
  const Pose source(Eigen::Matrix3d::Identity(), Eigen::Vector3d(-1.0, 0.0, 0.0));  // centre (1, 0, 0)
  const auto d = DepthHypothesis(kForward, Eigen::Vector3d::Zero(), Observe(source, {0.0, 0.0, 2.0}));
  ASSERT_TRUE(d.has_value());
  EXPECT_NEAR(*d, 2.0, 1e-12);
}

TEST(DepthHypothesis, SkewRaysUseTheClosestPoint) {
  // Observed ray passes 0.1 m off the reference ray at depth 3: x = 1 - s*(1/3), y = 0.1, z = s.
  const Pose source(Eigen::Matrix3d::Identity(), Eigen::Vector3d(-1.0, -0.1, 0.0));  // centre (1, 0.1, 0)
  Observation o;
  o.pose = source;
  o.intrinsics = TestCamera();
  o.pixel = Eigen::Vector2d(50.0 + 100.0 * (-1.0 / 3.0), 50.0);
  const auto d = DepthHypothesis(kForward, Eigen::Vector3d::Zero(), o);
  ASSERT_TRUE(d.has_value());
  EXPECT_NEAR(*d, 3.0, 1e-12);
}

TEST(DepthHypothesis, ParallelRaysAreRejected) {
  const Pose behind(Eigen::Matrix3d::Identity(), Eigen::Vector3d(0.0, 0.0, 1.0));  // centre (0, 0, -1)
  EXPECT_FALSE(DepthHypothesis(kForward, Eigen::Vector3d::Zero(), Observe(behind, {0.0, 0.0, 2.0})).has_value());
}

TEST(DepthHypothesis, PointBehindReferenceIsRejected) {
  // Source at (1, 0, 0) looking down -z sees (0, 0, -2).
  const Eigen::Matrix3d R = Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitY()).toRotationMatrix();
  const Pose source(R, -R * Eigen::Vector3d(1.0, 0.0, 0.0));
  EXPECT_FALSE(DepthHypothesis(kForward, Eigen::Vector3d::Zero(), Observe(source, {0.0, 0.0, -2.0})).has_value());
}

struct PixelCase {
  Pose ref;
  Eigen::Vector3d point;
  Ray ray;
  double gt_depth;
  std::vector<Pose> sources;
};

PixelCase MakeCase(Rng& rng, int n) {
  PixelCase c;
  c.ref = RandomPose(rng);
  const Eigen::Vector3d ref_center = c.ref.Center();
  const Eigen::Vector3d dir = c.ref.rotation.conjugate() * Eigen::Vector3d(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 1.0);
  c.gt_depth = rng.uniform(1.0, 20.0);
  c.ray = Ray::FromDirection(dir);
  c.point = ref_center + c.gt_depth * c.ray.direction;
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d offset(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    c.sources.push_back(LookingAt(ref_center + 0.1 * c.gt_depth * offset, c.point));
  }
  return c;
}

TEST(TriangulatePixel, FiveExactObservations) {
  Rng rng(1);
  TriangulationConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const PixelCase c = MakeCase(rng, 5);
    std::vector<Observation> obs;
    for (const Pose& p : c.sources) obs.push_back(Observe(p, c.point, rng.uniform(0.1, 1.0)));
    const auto r = TriangulatePixel(c.ray, c.ref.Center(), obs, cfg);
    ASSERT_TRUE(r.has_value());
    EXPECT_EQ(r->inliers, 5);
    EXPECT_LT(std::fabs(r->depth - c.gt_depth) / c.gt_depth, 1e-9);
  }
}

TEST(TriangulatePixel, FourExactPlusThreeOutliers) {
  Rng rng(2);
  TriangulationConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const PixelCase c = MakeCase(rng, 7);
    std::vector<Observation> obs;
    for (int i = 0; i < 7; ++i) {
      Observation o = Observe(c.sources[i], c.point);
      if (i % 2 == 1 && i < 6) {  // slots 1, 3, 5
        do {
          o.pixel = Eigen::Vector2d(rng.uniform(-0.5, 99.5), rng.uniform(-0.5, 99.5));
        } while (Angle(o, c.point) < 0.1);
      }
      obs.push_back(o);
    }
    const auto r = TriangulatePixel(c.ray, c.ref.Center(), obs, cfg);
    ASSERT_TRUE(r.has_value());
    EXPECT_EQ(r->inliers, 4);
    EXPECT_LT(std::fabs(r->depth - c.gt_depth) / c.gt_depth, 1e-9);
  }
}

TEST(TriangulatePixel, ThreeInliersAreNotEnough) {
  Rng rng(3);
  const PixelCase c = MakeCase(rng, 3);
  std::vector<Observation> obs;
  for (const Pose& p : c.sources) obs.push_back(Observe(p, c.point));
  TriangulationConfig cfg;
  EXPECT_FALSE(TriangulatePixel(c.ray, c.ref.Center(), obs, cfg).has_value());
  const auto detailed = TriangulatePixelDetailed(c.ray, c.ref.Center(), obs, cfg);
  ASSERT_TRUE(detailed.has_value());
  EXPECT_EQ(detailed->inliers, 3);
  cfg.min_inliers = 3;
  EXPECT_TRUE(TriangulatePixel(c.ray, c.ref.Center(), obs, cfg).has_value());
}

TEST(TriangulatePixel, TiesGoToTheLowerHypothesisIndex) {
  // Two consistent pairs at depths 2 and 5; every hypothesis has 2 inliers.
  const Eigen::Vector3d near(0.0, 0.0, 2.0), far(0.0, 0.0, 5.0);
  const Pose a = LookingAt({1.0, 0.0, 0.0}, near), b = LookingAt({-1.0, 0.2, 0.0}, near);
  const Pose c = LookingAt({0.0, 1.0, 0.0}, far), d = LookingAt({0.3, -1.0, 0.0}, far);
  TriangulationConfig cfg;
  cfg.min_inliers = 2;
  const std::vector<Observation> near_first = {Observe(a, near), Observe(b, near), Observe(c, far), Observe(d, far)};
  const std::vector<Observation> far_first = {Observe(c, far), Observe(d, far), Observe(a, near), Observe(b, near)};
  const auto r1 = TriangulatePixel(kForward, Eigen::Vector3d::Zero(), near_first, cfg);
  const auto r2 = TriangulatePixel(kForward, Eigen::Vector3d::Zero(), far_first, cfg);
  ASSERT_TRUE(r1 && r2);
  EXPECT_NEAR(r1->depth, 2.0, 1e-9);
  EXPECT_NEAR(r2->depth, 5.0, 1e-9);
}

TEST(TriangulatePixel, RefinementNeverIncreasesTheWeightedCost) {
  Rng rng(4);
  TriangulationConfig cfg;
  int refined = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const PixelCase c = MakeCase(rng, 6);
    std::vector<Observation> obs;
    for (const Pose& p : c.sources) {
      Observation o = Observe(p, c.point, rng.uniform(0.05, 1.0));
      o.pixel += Eigen::Vector2d(rng.normal(), rng.normal()) * 0.5;
      obs.push_back(o);
    }
    const auto r = TriangulatePixelDetailed(c.ray, c.ref.Center(), obs, cfg);
    ASSERT_TRUE(r.has_value());
    // Recompute both costs over the hypothesis' inliers with an independent angle.
    const Eigen::Vector3d X0 = c.ref.Center() + r->hypothesis_depth * c.ray.direction;
    const Eigen::Vector3d X1 = c.ref.Center() + r->depth * c.ray.direction;
    double before = 0.0, after = 0.0;
    for (const Observation& o : obs) {
      if (Angle(o, X0) >= cfg.angular_threshold_rad) continue;
      before += o.confidence * Angle(o, X0) * Angle(o, X0);
      after += o.confidence * Angle(o, X1) * Angle(o, X1);
    }
    EXPECT_LE(after, before * (1.0 + 1e-12));
    EXPECT_TRUE(r->monotone);
    refined += after < before;
  }
  EXPECT_GT(refined, 400);
}

TEST(TriangulatePixel, RefinedInliersNeverDropOnExactData) {
  Rng rng(5);
  TriangulationConfig cfg;
  for (int trial = 0; trial < 200; ++trial) {
    const PixelCase c = MakeCase(rng, 8);
    std::vector<Observation> obs;
    for (size_t i = 0; i < c.sources.size(); ++i) {
      Observation o = Observe(c.sources[i], c.point);
      if (i % 3 == 2) o.pixel = Eigen::Vector2d(rng.uniform(0, 100), rng.uniform(0, 100));
      obs.push_back(o);
    }
    const auto r = TriangulatePixelDetailed(c.ray, c.ref.Center(), obs, cfg);
    ASSERT_TRUE(r.has_value());
    EXPECT_GE(r->refined_inliers, r->inliers);
  }
}

TEST(TriangulatePixel, InvariantToAGlobalRigidTransform) {
  Rng rng(6);
  TriangulationConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const PixelCase c = MakeCase(rng, 6);
    std::vector<Observation> obs;
    for (const Pose& p : c.sources) {
      Observation o = Observe(p, c.point, rng.uniform(0.2, 1.0));
      o.pixel += Eigen::Vector2d(rng.normal(), rng.normal()) * 0.3;
      obs.push_back(o);
    }
    // World-from-world' transform G: every camera-from-world pose becomes P * G.
    const Pose G = RandomPose(rng);
    std::vector<Observation> moved = obs;
    for (Observation& o : moved) o.pose = o.pose * G;
    const Pose Ginv = G.Inverse();
    const Ray moved_ray = Ray::FromDirection(Ginv.rotation * c.ray.direction);
    const auto a = TriangulatePixel(c.ray, c.ref.Center(), obs, cfg);
    const auto b = TriangulatePixel(moved_ray, Ginv.Apply(c.ref.Center()), moved, cfg);
    ASSERT_TRUE(a && b);
    EXPECT_EQ(a->inliers, b->inliers);
    EXPECT_LT(std::fabs(a->depth - b->depth) / a->depth, 1e-9);
  }
}

TEST(TriangulationConfig, RejectsNonsense) {
  TriangulationConfig cfg;
  cfg.angular_threshold_rad = 0.0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
  cfg = TriangulationConfig();
  cfg.min_inliers = 0;
  EXPECT_THROW(cfg.Validate(), ConfigError);
}

// Camera 0 at the origin, the others on a ring set back from the plane so
// that they see everything camera 0 does.
Scene RingScene(int cameras, uint64_t seed) {
  SceneSpec spec;
  spec.num_cameras = cameras;
  spec.plane_distance = 4.0;
  spec.baseline = 0.4;
  spec.setback = 1.2;
  spec.seed = seed;
  return MakeScene(spec);
}

struct Built {
  DepthMap depth;
  DepthBuildStats stats;
};

Built BuildFromOracle(const Scene& scene, const NoiseSpec* noise, uint64_t seed) {
  std::vector<PosedView> views;
  for (const SceneView& v : scene.views) views.push_back({v.id, v.pose, v.intrinsics});
  std::vector<CorrespondenceField> fields;
  for (int b = 1; b < scene.num_database(); ++b) {
    CorrespondenceField f = OracleField(scene, 0, b);
    if (noise) f = Corrupt(f, *noise, seed + b);
    fields.push_back(std::move(f));
  }
  Built out;
  out.depth = BuildDepthMap(views[0], std::span(views).subspan(1, scene.num_database() - 1), fields,
                            TriangulationConfig(), &out.stats);
  return out;
}

double FractionWithin(const DepthMap& est, const DepthMap& gt, double rel) {
  size_t valid = 0, good = 0;
  for (size_t i = 0; i < est.size(); ++i) {
    if (!est.valid(i)) continue;
    ++valid;
    if (std::fabs(static_cast<double>(est.values[i]) - gt.values[i]) / gt.values[i] < rel) ++good;
  }
  return valid ? static_cast<double>(good) / valid : 0.0;
}

double MaxRelativeError(const DepthMap& est, const DepthMap& gt) {
  double worst = 0.0;
  for (size_t i = 0; i < est.size(); ++i) {
    if (!est.valid(i)) continue;
    worst = std::max(worst, std::fabs(static_cast<double>(est.values[i]) - gt.values[i]) / gt.values[i]);
  }
  return worst;
}

TEST(BuildDepthMap, OracleFieldsRecoverThePlane) {
  const Scene scene = RingScene(6, 21);
  const Built b = BuildFromOracle(scene, nullptr, 0);
  EXPECT_GE(b.depth.ValidFraction(), 0.99);
  EXPECT_LT(MaxRelativeError(b.depth, scene.depth[0]), 1e-6);
  EXPECT_TRUE(b.stats.refinement_monotone);
  EXPECT_EQ(b.stats.valid, static_cast<size_t>(std::lround(b.depth.ValidFraction() * b.depth.size())));
}

TEST(BuildDepthMap, OutliersOnlyThinTheMap) {
  const Scene scene = RingScene(8, 22);
  NoiseSpec noise;
  noise.outlier_fraction = 0.4;
  noise.target_width = noise.target_height = 140;
  const Built b = BuildFromOracle(scene, &noise, 100);
  // A uniform outlier occasionally lands inside the angular gate and drags
  // the refined depth, so only the bulk is exact.
  EXPECT_GE(FractionWithin(b.depth, scene.depth[0], 1e-6), 0.97);
  // Seven observations, each an inlier with probability 0.6: P(>= 4) = 0.710.
  EXPECT_NEAR(b.depth.ValidFraction(), 0.710, 0.02);
}

TEST(BuildDepthMap, ZeroConfidenceGivesNothing) {
  const Scene scene = RingScene(6, 23);
  std::vector<PosedView> views;
  for (const SceneView& v : scene.views) views.push_back({v.id, v.pose, v.intrinsics});
  std::vector<CorrespondenceField> fields;
  for (int b = 1; b < 6; ++b) fields.emplace_back(views[0].id, views[b].id, 140, 140);
  const DepthMap d = BuildDepthMap(views[0], std::span(views).subspan(1, 5), fields, TriangulationConfig());
  EXPECT_EQ(d.ValidFraction(), 0.0);
  EXPECT_EQ(d.width, 140);
}

TEST(BuildDepthMap, MismatchedPairingIsRejected) {
  const Scene scene = RingScene(3, 24);
  std::vector<PosedView> views;
  for (const SceneView& v : scene.views) views.push_back({v.id, v.pose, v.intrinsics});
  std::vector<CorrespondenceField> fields = {OracleField(scene, 0, 2), OracleField(scene, 0, 1)};
  EXPECT_THROW(BuildDepthMap(views[0], std::span(views).subspan(1, 2), fields, TriangulationConfig()),
               ValidationError);
  fields = {OracleField(scene, 0, 1)};
  EXPECT_THROW(BuildDepthMap(views[0], std::span(views).subspan(1, 2), fields, TriangulationConfig()),
               ValidationError);
  fields = {OracleField(scene, 0, 1), OracleField(scene, 0, 2, 70, 70)};
  EXPECT_THROW(BuildDepthMap(views[0], std::span(views).subspan(1, 2), fields, TriangulationConfig()),
               ValidationError);
}

TEST(BuildDepthMap, CoarseGridDepthMatchesCellCentres) {
  const Scene scene = RingScene(6, 25);
  std::vector<PosedView> views;
  for (const SceneView& v : scene.views) views.push_back({v.id, v.pose, v.intrinsics});
  std::vector<CorrespondenceField> fields;
  for (int b = 1; b < 6; ++b) fields.push_back(OracleField(scene, 0, b, 35, 28));
  const DepthMap d = BuildDepthMap(views[0], std::span(views).subspan(1, 5), fields, TriangulationConfig());
  ASSERT_EQ(d.width, 35);
  ASSERT_EQ(d.height, 28);
  for (int row = 0; row < 28; ++row) {
    for (int col = 0; col < 35; ++col) {
      ASSERT_TRUE(d.valid(col, row));
      const double gt = *scene.TrueDepth(0, fields[0].SourcePixel(col, row));
      EXPECT_LT(std::fabs(d.at(col, row) - gt) / gt, 1e-6);
    }
  }
}

TEST(BuildDepthMap, IndependentOfThreadCount) {
  const Scene scene = RingScene(8, 26);
  NoiseSpec noise;
  noise.outlier_fraction = 0.3;
  noise.pixel_sigma = 0.7;
  noise.target_width = noise.target_height = 140;
  SetNumThreads(1);
  const Built one = BuildFromOracle(scene, &noise, 5);
  SetNumThreads(4);
  const Built four = BuildFromOracle(scene, &noise, 5);
  SetNumThreads(0);
  ASSERT_EQ(one.depth.values.size(), four.depth.values.size());
  EXPECT_EQ(0, std::memcmp(one.depth.values.data(), four.depth.values.data(), one.depth.values.size() * sizeof(float)));
}

TEST(SelectCovisible, ExcludesSelfAndFollowsTopK) {
  DescriptorIndex index(3);
  index.Add("a", std::vector<float>{1, 0, 0});
  index.Add("b", std::vector<float>{1, 1, 0});
  index.Add("c", std::vector<float>{0, 0, 1});
  EXPECT_EQ(SelectCovisible(index, "a", 50), (std::vector<std::string>{"b", "c"}));
  EXPECT_EQ(SelectCovisible(index, "a", 1), (std::vector<std::string>{"b"}));

  Rng rng(9);
  DescriptorIndex big(8);
  for (int i = 0; i < 200; ++i) {
    std::vector<float> v(8);
    for (float& x : v) x = static_cast<float>(rng.normal());
    big.Add("e" + std::to_string(1000 + i), v);
  }
  for (int i = 0; i < 200; i += 17) {
    const std::string id = big.id(i);
    const auto cov = SelectCovisible(big, id, 10);
    ASSERT_EQ(cov.size(), 10u);
    const auto hits = big.TopK(big.vector(id), 11);
    std::vector<std::string> expected;
    for (const auto& h : hits)
      if (h.id != id) expected.push_back(h.id);
    expected.resize(10);
    EXPECT_EQ(cov, expected);
  }
}

}  // namespace
}  // namespace imloc
