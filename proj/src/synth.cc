#include "imloc/synth.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>

#include "imloc/errors.h"
#include "imloc/random.h"

namespace imloc {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

Eigen::Vector3d RandomAxis(Rng& rng) {
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  } while (v.norm() < 1e-9);
  return v.normalized();
}

// Camera-from-world rotation of a camera at `center` looking at `target`,
// image y pointing along world +y as closely as possible.
Eigen::Matrix3d LookAt(const Eigen::Vector3d& center, const Eigen::Vector3d& target) {
  const Eigen::Vector3d z = (target - center).normalized();
  const Eigen::Vector3d x = Eigen::Vector3d::UnitY().cross(z).normalized();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d R;
  R.row(0) = x;
  R.row(1) = y;
  R.row(2) = z;
  return R;
}

Eigen::Matrix3d Jitter(Rng& rng, double max_deg) {
  if (max_deg <= 0.0) return Eigen::Matrix3d::Identity();
  return Eigen::AngleAxisd(rng.uniform(0.0, max_deg * kDegToRad), RandomAxis(rng)).toRotationMatrix();
}

std::string ViewId(const char* prefix, int i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%03d", prefix, i);
  return buf;
}

}  // namespace

void SceneSpec::Validate() const {
  if (num_cameras < 2) throw ValidationError("scene needs at least two database cameras");
  if (num_queries < 0) throw ValidationError("negative query count");
  if (width <= 0 || height <= 0) throw ValidationError("scene image has zero area");
  if (!(focal > 0.0)) throw ValidationError("scene focal length must be positive");
  if (!(min_depth > 0.0) || !(max_depth > min_depth)) throw ValidationError("scene depth range must lie in (0, inf)");
  if (surface == SurfaceModel::kPlane && !(plane_distance > 0.0)) {
    throw ValidationError("plane distance must be positive");
  }
  if (surface == SurfaceModel::kSurfels && (num_surfels <= 0 || !(surfel_radius > 0.0))) {
    throw ValidationError("surfel scene needs a positive count and radius");
  }
  if (descriptor_dim < 4) throw ValidationError("descriptor dimension must be at least 4");
}

std::optional<double> Scene::Intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& direction) const {
  constexpr double kMinT = 1e-9;
  double best = std::numeric_limits<double>::infinity();
  if (plane) {
    const Eigen::Vector3d n = plane->head<3>();
    const double denom = n.dot(direction);
    if (denom != 0.0) {
      const double t = ((*plane)[3] - n.dot(origin)) / denom;
      if (t > kMinT) best = std::min(best, t);
    }
  }
  for (const Surfel& s : surfels) {
    const double denom = s.normal.dot(direction);
    if (denom == 0.0) continue;
    const double t = s.normal.dot(s.center - origin) / denom;
    if (!(t > kMinT) || t >= best) continue;
    if ((origin + t * direction - s.center).squaredNorm() <= s.radius * s.radius) best = t;
  }
  if (!std::isfinite(best)) return std::nullopt;
  return best;
}

std::optional<double> Scene::TrueDepth(int v, const Eigen::Vector2d& pixel) const {
  const SceneView& view = views[v];
  // Camera-frame ray with unit z, so the ray parameter equals the z-depth.
  const Eigen::Vector3d ray_cam((pixel.x() - view.intrinsics.cx) / view.intrinsics.fx,
                                (pixel.y() - view.intrinsics.cy) / view.intrinsics.fy, 1.0);
  const Eigen::Vector3d dir_world = view.pose.rotation.conjugate() * ray_cam;
  return Intersect(view.pose.Center(), dir_world);
}

std::optional<Eigen::Vector3d> Scene::SurfacePoint(int v, const Eigen::Vector2d& pixel) const {
  const auto d = TrueDepth(v, pixel);
  if (!d) return std::nullopt;
  return views[v].pose.Inverse().Apply(Unproject(views[v].intrinsics, pixel, *d));
}

bool Scene::Visible(int v, const Eigen::Vector3d& world_point) const {
  const Eigen::Vector3d c = views[v].pose.Center();
  const auto t = Intersect(c, world_point - c);
  return t.has_value() && *t >= 1.0 - 1e-9;
}

Scene MakeScene(const SceneSpec& spec) {
  spec.Validate();
  Scene scene;
  scene.spec = spec;
  Rng rng(spec.seed);

  CameraIntrinsics cam;
  cam.fx = cam.fy = spec.focal;
  cam.width = spec.width;
  cam.height = spec.height;
  cam.cx = (spec.width - 1) / 2.0;
  cam.cy = (spec.height - 1) / 2.0;

  const double focus_depth =
      spec.surface == SurfaceModel::kPlane ? spec.plane_distance : 0.5 * (spec.min_depth + spec.max_depth);
  const Eigen::Vector3d focus(0.0, 0.0, focus_depth);

  if (spec.surface == SurfaceModel::kPlane) {
    const double tilt = spec.plane_tilt_deg * kDegToRad;
    const Eigen::Vector3d n(0.0, -std::sin(tilt), std::cos(tilt));
    scene.plane = Eigen::Vector4d(n.x(), n.y(), n.z(), n.dot(focus));
  } else {
    // Spread surfels over the frustum of the reference camera.
    for (int i = 0; i < spec.num_surfels; ++i) {
      Surfel s;
      const double z = rng.uniform(spec.min_depth, spec.max_depth);
      const double half_w = z * (spec.width / 2.0) / spec.focal;
      const double half_h = z * (spec.height / 2.0) / spec.focal;
      s.center = Eigen::Vector3d(rng.uniform(-half_w, half_w), rng.uniform(-half_h, half_h), z);
      Eigen::Vector3d n = -Eigen::Vector3d::UnitZ() + 0.4 * RandomAxis(rng);
      s.normal = n.normalized();
      s.radius = spec.surfel_radius * rng.uniform(0.6, 1.4);
      scene.surfels.push_back(s);
    }
  }

  const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < spec.num_cameras; ++i) {
    Eigen::Vector3d center = Eigen::Vector3d::Zero();
    if (i > 0) {
      const double phi = phase + 2.0 * std::numbers::pi * (i - 1) / (spec.num_cameras - 1);
      center = Eigen::Vector3d(spec.baseline * std::cos(phi), spec.baseline * std::sin(phi), -spec.setback);
    }
    Eigen::Matrix3d R = spec.converge ? LookAt(center, focus) : Eigen::Matrix3d::Identity();
    if (i > 0) R = Jitter(rng, spec.rotation_jitter_deg) * R;
    SceneView view;
    view.id = ViewId("db_", i);
    view.pose = Pose(R, -R * center);
    view.intrinsics = cam;
    scene.views.push_back(view);
  }
  for (int i = 0; i < spec.num_queries; ++i) {
    const double r = spec.query_radius * std::sqrt(rng.uniform());
    const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const Eigen::Vector3d center(r * std::cos(phi), r * std::sin(phi),
                                 rng.uniform(-spec.query_depth_jitter, spec.query_depth_jitter));
    const Eigen::Matrix3d R = Jitter(rng, spec.query_rotation_deg) * LookAt(center, focus);
    SceneView view;
    view.id = ViewId("query_", i);
    view.pose = Pose(R, -R * center);
    view.intrinsics = cam;
    view.is_query = true;
    scene.views.push_back(view);
  }

  for (int v = 0; v < static_cast<int>(scene.views.size()); ++v) {
    DepthMap dm(spec.width, spec.height);
    for (int row = 0; row < spec.height; ++row) {
      for (int col = 0; col < spec.width; ++col) {
        const auto d = scene.TrueDepth(v, Eigen::Vector2d(col, row));
        if (d && *d > 0.0) dm.at(col, row) = static_cast<float>(*d);
      }
    }
    scene.depth.push_back(std::move(dm));
  }

  // Retrieval descriptors: smooth functions of camera centre and viewing
  // direction, so nearby views with similar headings rank high.
  const int pos_dim = spec.descriptor_dim / 2;
  const int dir_dim = spec.descriptor_dim - pos_dim;
  std::vector<Eigen::Vector3d> pos_anchors, dir_anchors;
  const double extent = std::max(spec.baseline, spec.query_radius) * 1.5 + 1e-3;
  for (int j = 0; j < pos_dim; ++j) {
    pos_anchors.emplace_back(rng.uniform(-extent, extent), rng.uniform(-extent, extent),
                             rng.uniform(-extent, extent) - 0.5 * spec.setback);
  }
  for (int j = 0; j < dir_dim; ++j) {
    dir_anchors.push_back((Eigen::Vector3d::UnitZ() + 0.3 * RandomAxis(rng)).normalized());
  }
  for (const SceneView& view : scene.views) {
    const Eigen::Vector3d c = view.pose.Center();
    const Eigen::Vector3d fwd = view.pose.rotation.conjugate() * Eigen::Vector3d::UnitZ();
    std::vector<float> desc;
    for (const auto& a : pos_anchors) {
      desc.push_back(static_cast<float>(std::exp(-(c - a).squaredNorm() / (2.0 * extent * extent))));
    }
    for (const auto& a : dir_anchors) {
      desc.push_back(static_cast<float>(std::exp((fwd.dot(a) - 1.0) / 0.05)));
    }
    double norm = 0.0;
    for (float x : desc) norm += static_cast<double>(x) * x;
    norm = std::sqrt(norm);
    for (float& x : desc) x = static_cast<float>(x / norm);
    scene.descriptors.push_back(std::move(desc));
  }
  return scene;
}

CorrespondenceField OracleField(const Scene& scene, int view_a, int view_b, int grid_width, int grid_height) {
  const SceneView& a = scene.views.at(view_a);
  const SceneView& b = scene.views.at(view_b);
  if (grid_width <= 0) grid_width = a.intrinsics.width;
  if (grid_height <= 0) grid_height = a.intrinsics.height;
  CorrespondenceField field(a.id, b.id, grid_width, grid_height,
                            static_cast<double>(a.intrinsics.width) / grid_width,
                            static_cast<double>(a.intrinsics.height) / grid_height);
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const double w = b.intrinsics.width, h = b.intrinsics.height;
  for (int row = 0; row < grid_height; ++row) {
    for (int col = 0; col < grid_width; ++col) {
      MatchCell& cell = field.at(col, row);
      cell = {nan, nan, 0.0f};
      const Eigen::Vector2d p = field.SourcePixel(col, row);
      if (view_a == view_b) {
        if (scene.TrueDepth(view_a, p)) cell = {static_cast<float>(p.x()), static_cast<float>(p.y()), 1.0f};
        continue;
      }
      const auto X = scene.SurfacePoint(view_a, p);
      if (!X) continue;
      const auto q = Project(b.intrinsics, b.pose, *X);
      if (!q || q->x() < -0.5 || q->x() >= w - 0.5 || q->y() < -0.5 || q->y() >= h - 0.5) continue;
      if (!scene.Visible(view_b, *X)) continue;
      cell = {static_cast<float>(q->x()), static_cast<float>(q->y()), 1.0f};
    }
  }
  return field;
}

void NoiseSpec::Validate() const {
  if (!(pixel_sigma >= 0.0)) throw ValidationError("pixel noise must be non-negative");
  if (!(outlier_fraction >= 0.0 && outlier_fraction <= 1.0)) {
    throw ValidationError("outlier fraction must lie in [0, 1]");
  }
  if (target_width <= 0 || target_height <= 0) throw ValidationError("outlier target extent must be positive");
  auto check = [](double lo, double hi) {
    if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi)) throw ValidationError("confidence range must lie in [0, 1]");
  };
  check(inlier_conf_min, inlier_conf_max);
  check(outlier_conf_min, outlier_conf_max);
}

CorrespondenceField Corrupt(const CorrespondenceField& field, const NoiseSpec& noise, uint64_t seed) {
  noise.Validate();
  CorrespondenceField out = field;
  Rng rng(seed);
  // Confidence must stay strictly positive for a kept match.
  const auto positive = [](double c) { return static_cast<float>(std::max(c, 1e-6)); };
  for (MatchCell& c : out.cells) {
    if (c.confidence <= 0.0f) continue;
    if (rng.uniform() < noise.outlier_fraction) {
      c.target_x = static_cast<float>(rng.uniform(-0.5, noise.target_width - 0.5));
      c.target_y = static_cast<float>(rng.uniform(-0.5, noise.target_height - 0.5));
      c.confidence = positive(rng.uniform(noise.outlier_conf_min, noise.outlier_conf_max));
    } else {
      if (noise.pixel_sigma > 0.0) {
        c.target_x = static_cast<float>(c.target_x + noise.pixel_sigma * rng.normal());
        c.target_y = static_cast<float>(c.target_y + noise.pixel_sigma * rng.normal());
      }
      c.confidence = positive(rng.uniform(noise.inlier_conf_min, noise.inlier_conf_max));
    }
  }
  return out;
}

Image RenderRgb(const Scene& scene, int v) {
  const SceneView& view = scene.views.at(v);
  Image im = Image::Rgb8(view.intrinsics.width, view.intrinsics.height);
  for (int row = 0; row < im.height; ++row) {
    for (int col = 0; col < im.width; ++col) {
      uint8_t* px = &im.pixels[(static_cast<size_t>(row) * im.width + col) * 3];
      const auto X = scene.SurfacePoint(v, Eigen::Vector2d(col, row));
      if (!X) {
        px[0] = 135;
        px[1] = 180;
        px[2] = 235;
        continue;
      }
      const int cx = static_cast<int>(std::floor(X->x() / 0.25));
      const int cy = static_cast<int>(std::floor(X->y() / 0.25));
      const bool dark = ((cx + cy) & 1) != 0;
      const double shade = 0.5 + 0.5 * std::cos(3.0 * X->x()) * std::sin(2.0 * X->y());
      px[0] = static_cast<uint8_t>(dark ? 60 : 200);
      px[1] = static_cast<uint8_t>(40 + 160 * shade);
      px[2] = static_cast<uint8_t>(dark ? 150 : 90);
    }
  }
  return im;
}

}  // namespace imloc
