#include <cmath>
#include <cstring>
#include <limits>

#include <gtest/gtest.h>

#include "imloc/errors.h"
#include "imloc/synth.h"

namespace imloc {
namespace {

// Half an ulp of `x` in single precision: the best a float target can do.
double FloatHalfUlp(double x) {
  const float f = static_cast<float>(x);
  return 0.5 * (std::nextafter(std::fabs(f), std::numeric_limits<float>::infinity()) - std::fabs(f));
}

// Independent ray/plane oracle: world point seen through a pixel of a view,
// for a scene whose only surface is a plane n.x = d.
std::optional<Eigen::Vector3d> PlanePoint(const Scene& scene, int v, const Eigen::Vector2d& px) {
  const SceneView& view = scene.views[v];
  const Eigen::Matrix3d Rt = view.pose.R().transpose();
  const Eigen::Vector3d c = -Rt * view.pose.translation;
  const Eigen::Vector3d dir = Rt * view.intrinsics.K().inverse() * Eigen::Vector3d(px.x(), px.y(), 1.0);
  const Eigen::Vector3d n = scene.plane->head<3>();
  const double t = ((*scene.plane)[3] - n.dot(c)) / n.dot(dir);
  if (!(t > 0.0)) return std::nullopt;
  return c + t * dir;
}

Eigen::Vector2d PinholeProject(const SceneView& view, const Eigen::Vector3d& X) {
  const Eigen::Vector3d x = view.pose.R() * X + view.pose.translation;
  return {view.intrinsics.fx * x.x() / x.z() + view.intrinsics.cx, view.intrinsics.fy * x.y() / x.z() + view.intrinsics.cy};
}

TEST(Synth, SameSeedGivesBitIdenticalScenes) {
  for (SurfaceModel model : {SurfaceModel::kPlane, SurfaceModel::kSurfels}) {
    SceneSpec spec;
    spec.surface = model;
    spec.num_queries = 3;
    spec.rotation_jitter_deg = 2.0;
    spec.seed = 42;
    const Scene a = MakeScene(spec);
    const Scene b = MakeScene(spec);
    ASSERT_EQ(a.views.size(), b.views.size());
    for (size_t v = 0; v < a.views.size(); ++v) {
      EXPECT_EQ(a.views[v].id, b.views[v].id);
      EXPECT_EQ(0, std::memcmp(a.views[v].pose.rotation.coeffs().data(), b.views[v].pose.rotation.coeffs().data(),
                               4 * sizeof(double)));
      EXPECT_EQ(0, std::memcmp(a.views[v].pose.translation.data(), b.views[v].pose.translation.data(),
                               3 * sizeof(double)));
      EXPECT_EQ(0, std::memcmp(a.depth[v].values.data(), b.depth[v].values.data(),
                               a.depth[v].values.size() * sizeof(float)));
      EXPECT_EQ(a.descriptors[v], b.descriptors[v]);
    }
    spec.seed = 43;
    const Scene c = MakeScene(spec);
    EXPECT_FALSE(c.views[1].pose.translation.isApprox(a.views[1].pose.translation));
  }
}

TEST(Synth, FrontoParallelPlaneHasConstantDepth) {
  SceneSpec spec;
  spec.num_cameras = 2;
  spec.baseline = 0.5;
  spec.plane_distance = 2.0;
  spec.seed = 7;
  const Scene scene = MakeScene(spec);
  EXPECT_NEAR((scene.views[1].pose.Center() - scene.views[0].pose.Center()).norm(), 0.5, 1e-12);
  for (size_t i = 0; i < scene.depth[1].size(); ++i) {
    ASSERT_TRUE(scene.depth[1].valid(i));
    ASSERT_EQ(scene.depth[1].values[i], 2.0f);
  }
}

TEST(Synth, DegenerateSpecsAreRejected) {
  SceneSpec spec;
  spec.width = 0;
  EXPECT_THROW(MakeScene(spec), ValidationError);
  spec = SceneSpec();
  spec.height = 0;
  EXPECT_THROW(MakeScene(spec), ValidationError);
  spec = SceneSpec();
  spec.num_cameras = 1;
  EXPECT_THROW(MakeScene(spec), ValidationError);
  spec = SceneSpec();
  spec.min_depth = 0.0;
  EXPECT_THROW(MakeScene(spec), ValidationError);
}

TEST(Synth, GroundTruthDepthReprojectsOntoOracleTargets) {
  SceneSpec spec;
  spec.plane_tilt_deg = 20.0;
  spec.converge = true;
  spec.rotation_jitter_deg = 3.0;
  spec.seed = 11;
  const Scene scene = MakeScene(spec);
  int checked = 0;
  double worst_depth = 0.0, worst_px = 0.0;
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < scene.num_database(); ++b) {
      if (a == b) continue;
      const CorrespondenceField f = OracleField(scene, a, b);
      const SceneView& va = scene.views[a];
      const SceneView& vb = scene.views[b];
      for (uint32_t row = 0; row < f.grid_height; ++row) {
        for (uint32_t col = 0; col < f.grid_width; ++col) {
          const MatchCell& cell = f.at(col, row);
          const Eigen::Vector2d p = f.SourcePixel(col, row);
          const auto X = PlanePoint(scene, a, p);
          ASSERT_TRUE(X.has_value());
          // Stored GT depth agrees with the independent oracle.
          const double z = (va.pose.R() * *X + va.pose.translation).z();
          worst_depth = std::max(worst_depth, std::fabs(scene.depth[a].at(col, row) - z) / z);
          if (cell.confidence == 0.0f) continue;
          ASSERT_EQ(cell.confidence, 1.0f);
          // Unproject the GT depth, reproject into b in double precision.
          const Eigen::Vector3d Xd = va.pose.Inverse().Apply(Unproject(va.intrinsics, p, *scene.TrueDepth(a, p)));
          const Eigen::Vector2d q = PinholeProject(vb, *X);
          worst_px = std::max(worst_px, (PinholeProject(vb, Xd) - q).norm());
          // Stored float targets are the correctly rounded exact projection.
          ASSERT_LE(std::fabs(cell.target_x - q.x()), FloatHalfUlp(q.x()) + 1e-9);
          ASSERT_LE(std::fabs(cell.target_y - q.y()), FloatHalfUlp(q.y()) + 1e-9);
          ++checked;
        }
      }
    }
  }
  EXPECT_GT(checked, 100000);
  EXPECT_LT(worst_px, 1e-6);
  EXPECT_LT(worst_depth, 1e-7);  // float storage of the depth map
}

TEST(Synth, SurfelOcclusionsAreRespected) {
  SceneSpec spec;
  spec.surface = SurfaceModel::kSurfels;
  spec.num_cameras = 3;
  spec.baseline = 0.8;
  spec.seed = 5;
  const Scene scene = MakeScene(spec);
  const CorrespondenceField f = OracleField(scene, 0, 1);
  int kept = 0, occluded = 0;
  for (uint32_t i = 0; i < f.cells.size(); ++i) {
    const Eigen::Vector2d p = f.SourcePixel(i);
    const auto X = scene.SurfacePoint(0, p);
    if (!X) {
      EXPECT_EQ(f.cells[i].confidence, 0.0f);
      continue;
    }
    const auto q = Project(scene.views[1].intrinsics, scene.views[1].pose, *X);
    const bool in_image = q && q->x() >= -0.5 && q->x() < 139.5 && q->y() >= -0.5 && q->y() < 139.5;
    // Brute force: is any surfel hit strictly before X along the ray from b?
    const Eigen::Vector3d c = scene.views[1].pose.Center();
    const Eigen::Vector3d d = *X - c;
    bool blocked = false;
    for (const Surfel& s : scene.surfels) {
      const double t = s.normal.dot(s.center - c) / s.normal.dot(d);
      if (t > 1e-9 && t < 1.0 - 1e-9 && (c + t * d - s.center).norm() <= s.radius) blocked = true;
    }
    if (in_image && !blocked) {
      EXPECT_EQ(f.cells[i].confidence, 1.0f);
      ++kept;
    } else {
      EXPECT_EQ(f.cells[i].confidence, 0.0f);
      occluded += blocked;
    }
  }
  EXPECT_GT(kept, 1000);
  EXPECT_GT(occluded, 10);
}

TEST(Synth, SelfMatchIsIdentity) {
  SceneSpec spec;
  spec.surface = SurfaceModel::kSurfels;
  spec.seed = 3;
  const Scene scene = MakeScene(spec);
  const CorrespondenceField f = OracleField(scene, 2, 2);
  for (size_t i = 0; i < f.cells.size(); ++i) {
    if (!scene.depth[2].valid(i)) {
      EXPECT_EQ(f.cells[i].confidence, 0.0f);
      continue;
    }
    const Eigen::Vector2d p = f.SourcePixel(i);
    EXPECT_EQ(f.cells[i].confidence, 1.0f);
    EXPECT_EQ(f.cells[i].target_x, static_cast<float>(p.x()));
    EXPECT_EQ(f.cells[i].target_y, static_cast<float>(p.y()));
  }
}

TEST(Synth, PixelsPastAllGeometryHaveZeroConfidence) {
  SceneSpec spec;
  spec.plane_tilt_deg = 80.0;  // the horizon crosses the image
  spec.seed = 9;
  const Scene scene = MakeScene(spec);
  const CorrespondenceField f = OracleField(scene, 0, 1);
  int sky = 0;
  for (size_t i = 0; i < f.cells.size(); ++i) {
    if (scene.TrueDepth(0, f.SourcePixel(i))) continue;
    ++sky;
    EXPECT_EQ(f.cells[i].confidence, 0.0f);
    EXPECT_TRUE(std::isnan(f.cells[i].target_x));
  }
  EXPECT_GT(sky, 100);
}

TEST(Synth, CoarseGridUsesCellCentres) {
  SceneSpec spec;
  spec.seed = 1;
  const Scene scene = MakeScene(spec);
  const CorrespondenceField f = OracleField(scene, 0, 1, 35, 35);
  EXPECT_DOUBLE_EQ(f.scale_x, 4.0);
  EXPECT_EQ(f.SourcePixel(0, 0), Eigen::Vector2d(1.5, 1.5));
  const MatchCell& cell = f.at(10, 20);
  ASSERT_EQ(cell.confidence, 1.0f);
  const Eigen::Vector2d q = PinholeProject(scene.views[1], *PlanePoint(scene, 0, {41.5, 81.5}));
  EXPECT_NEAR(cell.target_x, q.x(), 1e-4);
  EXPECT_NEAR(cell.target_y, q.y(), 1e-4);
}

TEST(Corrupt, NoNoiseOnlyRedrawsConfidences) {
  SceneSpec spec;
  spec.seed = 2;
  const Scene scene = MakeScene(spec);
  const CorrespondenceField f = OracleField(scene, 0, 1);
  NoiseSpec noise;
  noise.target_width = noise.target_height = 140;
  const CorrespondenceField g = Corrupt(f, noise, 99);
  for (size_t i = 0; i < f.cells.size(); ++i) {
    if (f.cells[i].confidence == 0.0f) {
      EXPECT_EQ(g.cells[i].confidence, 0.0f);
      continue;
    }
    EXPECT_EQ(g.cells[i].target_x, f.cells[i].target_x);
    EXPECT_EQ(g.cells[i].target_y, f.cells[i].target_y);
    EXPECT_GE(g.cells[i].confidence, 0.5f);
    EXPECT_LE(g.cells[i].confidence, 1.0f);
  }
}

TEST(Corrupt, FullOutliersAreUniformOverTheImage) {
  SceneSpec spec;
  spec.seed = 4;
  const Scene scene = MakeScene(spec);
  const CorrespondenceField f = OracleField(scene, 0, 0);
  NoiseSpec noise;
  noise.outlier_fraction = 1.0;
  noise.pixel_sigma = 1.0;
  noise.target_width = noise.target_height = 140;
  const CorrespondenceField g = Corrupt(f, noise, 17);
  constexpr int kBins = 10;
  std::vector<int> hist(kBins * kBins, 0);
  int n = 0, near = 0;
  for (size_t i = 0; i < g.cells.size(); ++i) {
    const MatchCell& c = g.cells[i];
    ASSERT_GT(c.confidence, 0.0f);
    ASSERT_LE(c.confidence, 0.3f);
    ASSERT_GE(c.target_x, -0.5f);
    ASSERT_LT(c.target_x, 139.5f);
    const int bx = static_cast<int>((c.target_x + 0.5) / 14.0);
    const int by = static_cast<int>((c.target_y + 0.5) / 14.0);
    ++hist[by * kBins + std::min(bx, kBins - 1)];
    ++n;
    const double dx = c.target_x - f.cells[i].target_x, dy = c.target_y - f.cells[i].target_y;
    near += std::hypot(dx, dy) <= 3.0 * noise.pixel_sigma + 3.0;
  }
  const double expected = static_cast<double>(n) / hist.size();
  double chi2 = 0.0;
  for (int h : hist) chi2 += (h - expected) * (h - expected) / expected;
  EXPECT_LT(chi2, 148.2);  // 99 dof, p = 0.001
  // Chance level is area(disc of 6 px) / area(image) ~ 0.6 %.
  EXPECT_LT(static_cast<double>(near) / n, 0.02);
}

TEST(Corrupt, SameSeedSameOutput) {
  SceneSpec spec;
  spec.seed = 6;
  const Scene scene = MakeScene(spec);
  const CorrespondenceField f = OracleField(scene, 0, 2);
  NoiseSpec noise;
  noise.outlier_fraction = 0.3;
  noise.pixel_sigma = 1.0;
  noise.target_width = noise.target_height = 140;
  const auto a = SerializeField(Corrupt(f, noise, 5));
  const auto b = SerializeField(Corrupt(f, noise, 5));
  const auto c = SerializeField(Corrupt(f, noise, 6));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Corrupt, RejectsBadNoise) {
  CorrespondenceField f("a", "b", 1, 1);
  NoiseSpec noise;
  noise.outlier_fraction = 1.5;
  EXPECT_THROW(Corrupt(f, noise, 0), ValidationError);
  noise = NoiseSpec();
  noise.pixel_sigma = -1.0;
  EXPECT_THROW(Corrupt(f, noise, 0), ValidationError);
}

TEST(ImageCodec, PngRoundTripsAllLayouts) {
  Image rgb = Image::Rgb8(13, 7);
  for (size_t i = 0; i < rgb.pixels.size(); ++i) rgb.pixels[i] = static_cast<uint8_t>(i * 37);
  const Image rgb2 = DecodePng(EncodePng(rgb));
  EXPECT_EQ(rgb2.channels, 3);
  EXPECT_EQ(rgb2.pixels, rgb.pixels);

  Image g16;
  g16.width = 9;
  g16.height = 4;
  g16.channels = 1;
  for (int i = 0; i < 36; ++i) g16.pixels16.push_back(static_cast<uint16_t>(i * 1821));
  const Image g16b = DecodePng(EncodePng(g16));
  EXPECT_EQ(g16b.pixels16, g16.pixels16);

  EXPECT_THROW(DecodePng(std::vector<uint8_t>{1, 2, 3}), ValidationError);
  auto bytes = EncodePng(rgb);
  bytes.resize(bytes.size() / 2);
  EXPECT_THROW(DecodePng(bytes), ValidationError);
}

TEST(ImageCodec, JpegIsLossyButClose) {
  Image im = Image::Rgb8(64, 48);
  for (int r = 0; r < im.height; ++r) {
    for (int c = 0; c < im.width; ++c) {
      uint8_t* px = &im.pixels[(r * im.width + c) * 3];
      px[0] = static_cast<uint8_t>(3 * c);
      px[1] = static_cast<uint8_t>(4 * r);
      px[2] = static_cast<uint8_t>(2 * (r + c));
    }
  }
  const Image back = DecodeRgb(EncodeRgb(im, "jpeg", 95), "jpeg");
  ASSERT_EQ(back.pixels.size(), im.pixels.size());
  double err = 0.0;
  for (size_t i = 0; i < im.pixels.size(); ++i) err += std::abs(im.pixels[i] - back.pixels[i]);
  EXPECT_LT(err / im.pixels.size(), 3.0);
  EXPECT_THROW(EncodeRgb(im, "webp", 90), ConfigError);
  EXPECT_EQ(CodecExtension("jpeg"), "jpg");
}

TEST(ImageCodec, BoxDownsampleAveragesBlocks) {
  Image im = Image::Rgb8(3, 2);
  for (int i = 0; i < 6; ++i) im.pixels[3 * i] = static_cast<uint8_t>(10 * i);
  const Image d = DownsampleBox(im, 2);
  EXPECT_EQ(d.width, 2);
  EXPECT_EQ(d.height, 1);
  EXPECT_EQ(d.pixels[0], 20);  // (0 + 10 + 30 + 40) / 4
  EXPECT_EQ(d.pixels[3], 35);  // (20 + 50) / 2
}

}  // namespace
}  // namespace imloc
