#include "imloc/bench.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

#include "file_util.h"
#include "imloc/depthbuild.h"
#include "imloc/errors.h"
#include "imloc/image_codec.h"
#include "imloc/mapping.h"
#include "imloc/posest.h"
#include "imloc/random.h"
#include "imloc/retrieval.h"

namespace imloc {
namespace {

namespace fs = std::filesystem;

std::string Fmt(const char* format, ...) __attribute__((format(printf, 1, 2)));
std::string Fmt(const char* format, ...) {
  char buf[512];
  va_list args;
  va_start(args, format);
  std::vsnprintf(buf, sizeof(buf), format, args);
  va_end(args);
  return buf;
}

int ParseInt(const std::string& key, const std::string& value) {
  size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(value, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != value.size()) throw ConfigError("sweep setting " + key + " expects an integer");
  return v;
}

bool SameReport(const EvalReport& a, const EvalReport& b) {
  const auto same = [](double x, double y) { return x == y || (std::isnan(x) && std::isnan(y)); };
  return a.recall == b.recall && same(a.median_rotation_deg, b.median_rotation_deg) &&
         same(a.median_translation_m, b.median_translation_m) && a.num_queries == b.num_queries &&
         a.num_success == b.num_success;
}

bool SameBits(const LocalizeResult& a, const LocalizeResult& b) {
  return a.status == b.status && a.num_matches == b.num_matches &&
         std::memcmp(a.estimate.pose.rotation.coeffs().data(), b.estimate.pose.rotation.coeffs().data(),
                     4 * sizeof(double)) == 0 &&
         std::memcmp(a.estimate.pose.translation.data(), b.estimate.pose.translation.data(), 3 * sizeof(double)) ==
             0 &&
         a.estimate.inliers == b.estimate.inliers;
}

Eigen::Vector3d RandomUnit(Rng& rng) {
  Eigen::Vector3d v;
  do {
    v = Eigen::Vector3d(rng.normal(), rng.normal(), rng.normal());
  } while (v.norm() < 1e-6);
  return v.normalized();
}

Pose RandomPose(Rng& rng, double max_t = 5.0) {
  const Eigen::Quaterniond q(Eigen::AngleAxisd(rng.uniform(0.0, std::numbers::pi), RandomUnit(rng)));
  return Pose(q, Eigen::Vector3d(rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t)));
}

double MeanDepth(const Scene& scene) {
  double sum = 0.0;
  size_t n = 0;
  for (int v = 0; v < scene.num_database(); ++v) {
    const DepthMap& d = scene.depth[v];
    for (size_t i = 0; i < d.size(); ++i) {
      if (d.valid(i)) sum += d.values[i], ++n;
    }
  }
  return n ? sum / n : 0.0;
}

// Ring of database cameras set back from a fronto-parallel plane.
Scene RingScene(int cameras, uint64_t seed) {
  SceneSpec spec;
  spec.num_cameras = cameras;
  spec.plane_distance = 4.0;
  spec.baseline = 0.4;
  spec.setback = 1.2;
  spec.seed = seed;
  return MakeScene(spec);
}

struct Benchmark {
  Scene scene;
  std::vector<QueryJob> queries;
  std::vector<NamedPose> gt;
  Map master;  // 16-bit depth
};

Benchmark MakeBenchmark(const SceneSpec& spec) {
  Benchmark b{MakeScene(spec), {}, {}, {}};
  for (int q = 0; q < b.scene.num_queries(); ++q) {
    b.queries.push_back(SceneQuery(b.scene, q));
    b.gt.push_back({b.scene.query(q).id, b.scene.query(q).pose});
  }
  MapBuildConfig cfg;
  cfg.depth_bits = 16;
  b.master = BuildMap(SceneMapInputs(b.scene), SceneFieldLoader(b.scene, {}), cfg);
  return b;
}

SceneFieldOptions RobustFields(uint64_t seed) {
  SceneFieldOptions opts;
  opts.corrupt_queries = true;
  opts.query_noise.pixel_sigma = 1.0;
  opts.query_noise.outlier_fraction = 0.3;
  opts.seed = DeriveSeed(seed, "bench/robust-fields");
  return opts;
}

Map WriteAndRead(const Map& map, const fs::path& dir) {
  WriteMap(map, dir);
  return ReadMap(dir);
}

std::map<std::string, std::vector<uint8_t>> Snapshot(const fs::path& root) {
  std::map<std::string, std::vector<uint8_t>> files;
  std::error_code ec;
  if (!fs::exists(root, ec)) return files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) {
      const std::string rel = fs::relative(e.path(), root).generic_string();
      files[rel] = internal::ReadFileBytes(e.path(), rel);
    }
  }
  return files;
}

std::string Quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) out += c == '\'' ? std::string("'\\''") : std::string(1, c);
  return out + "'";
}

class Suite {
 public:
  explicit Suite(const AcceptanceOptions& options) : opt_(options) {}

  CriterionResult Run(const std::string& name) {
    CriterionResult r;
    r.name = name;
    const auto start = std::chrono::steady_clock::now();
    try {
      Dispatch(name, &r);
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (limit_ > 0.0 && r.seconds >= limit_) {
      r.pass = false;
      r.detail += Fmt("; over the %.0f s budget", limit_);
    }
    limit_ = 0.0;
    return r;
  }

 private:
  void Dispatch(const std::string& name, CriterionResult* r) {
    if (name == "quantization-bound") return QuantizationBound(r);
    if (name == "p3p-exactness") return P3pExactness(r);
    if (name == "triangulation-oracle") return TriangulationOracle(r);
    if (name == "e2e-localization") return EndToEnd(r);
    if (name == "robust-localization") return Robust(r);
    if (name == "adaptive-stopping") return AdaptiveStopping(r);
    if (name == "storage-roundtrip") return StorageRoundTrip(r);
    if (name == "retrieval-exactness") return RetrievalExactness(r);
    if (name == "compression-sweep") return CompressionSweep(r);
    if (name == "refinement-correctness") return Refinement(r);
    if (name == "cli-determinism") return CliDeterminism(r);
    throw ConfigError("unknown criterion '" + name + "'");
  }

  uint64_t Seed(const std::string& task) const { return DeriveSeed(opt_.seed, "bench/" + task); }

  fs::path Work(const std::string& sub) const {
    const fs::path p = opt_.work_dir / sub;
    fs::create_directories(p);
    return p;
  }

  void Track(std::span<const LocalizeResult> results) {
    for (const LocalizeResult& r : results) {
      if (r.status == LocalizeStatus::kOk || r.status == LocalizeStatus::kNotConverged) {
        ++tracked_;
        if (!r.estimate.refinement_monotone) ++non_monotone_;
      }
    }
  }

  void QuantizationBound(CriterionResult* r) {
    limit_ = 5.0;
    const double d_min = 0.25, d_max = 128.0;
    Rng rng(Seed("quantization"));
    double worst = 0.0;
    const double span = std::log(d_max / d_min);
    for (int i = 0; i < 1000000; ++i) {
      const double d = d_min * std::exp(rng.uniform() * span);
      const double back = DequantizeCode(QuantizeValue(d, d_min, d_max, 8), d_min, d_max, 8);
      worst = std::max(worst, std::abs(back - d) / d);
    }
    r->pass = worst < 0.014;
    r->detail = Fmt("max relative error %.6f over 1e6 depths (bound %.6f)", worst,
                    QuantizationErrorBound(d_min, d_max, 8));
  }

  void P3pExactness(CriterionResult* r) {
    limit_ = 5.0;
    Rng rng(Seed("p3p"));
    int recovered = 0;
    double worst_constraint = 0.0;
    for (int i = 0; i < 1000; ++i) {
      const Pose gt = RandomPose(rng);
      const Pose world_from_cam = gt.Inverse();
      std::array<Eigen::Vector3d, 3> bearings, points;
      for (int k = 0; k < 3; ++k) {
        const Eigen::Vector3d dir = Eigen::Vector3d(rng.uniform(-1.7, 1.7), rng.uniform(-1.7, 1.7), 1.0).normalized();
        points[k] = world_from_cam.Apply(dir * rng.uniform(0.5, 20.0));
        bearings[k] = gt.Apply(points[k]).normalized();
      }
      bool found = false;
      for (const Pose& p : SolveP3P(bearings, points)) {
        for (int k = 0; k < 3; ++k) {
          worst_constraint = std::max(worst_constraint, AngularError(p.Apply(points[k]).normalized(), bearings[k]));
        }
        found |= RotationAngle(p.rotation * gt.rotation.conjugate()) < 1e-6 &&
                 (p.translation - gt.translation).norm() < 1e-6;
      }
      recovered += found;
    }
    r->pass = recovered == 1000 && worst_constraint < 1e-8;
    r->detail = Fmt("%d/1000 recovered, worst bearing residual %.3g rad", recovered, worst_constraint);
  }

  void TriangulationOracle(CriterionResult* r) {
    limit_ = 60.0;
    struct Outcome {
      double valid = 0.0, worst = 0.0;
    };
    const auto run = [&](int cameras, double outliers, uint64_t seed) {
      const Scene scene = RingScene(cameras, seed);
      std::vector<PosedView> views;
      std::vector<CorrespondenceField> fields;
      for (int v = 0; v < scene.num_database(); ++v) {
        views.push_back({scene.views[v].id, scene.views[v].pose, scene.views[v].intrinsics});
      }
      for (int b = 1; b < scene.num_database(); ++b) {
        CorrespondenceField f = OracleField(scene, 0, b);
        if (outliers > 0) {
          NoiseSpec noise;
          noise.outlier_fraction = outliers;
          noise.target_width = scene.views[b].intrinsics.width;
          noise.target_height = scene.views[b].intrinsics.height;
          f = Corrupt(f, noise, DeriveSeed(seed, "field/" + std::to_string(b)));
        }
        fields.push_back(std::move(f));
      }
      const DepthMap d =
          BuildDepthMap(views[0], std::span(views).subspan(1), fields, TriangulationConfig());
      Outcome o;
      o.valid = d.ValidFraction();
      for (size_t i = 0; i < d.size(); ++i) {
        if (!d.valid(i)) continue;
        const double gt = scene.depth[0].values[i];
        o.worst = std::max(o.worst, std::abs(d.values[i] - gt) / gt);
      }
      return o;
    };
    const Outcome clean = run(6, 0.0, Seed("triangulation/clean"));
    const Outcome noisy = run(8, 0.4, Seed("triangulation/outliers"));
    const bool clean_ok = clean.valid >= 0.99 && clean.worst < 1e-6;
    const bool noisy_ok = noisy.valid >= 0.95 && noisy.worst < 1e-6;
    r->pass = clean_ok && noisy_ok;
    r->detail = Fmt("oracle: valid %.4f, max rel error %.3g; 40%% outliers over 8 views: valid %.4f, "
                    "max rel error %.3g",
                    clean.valid, clean.worst, noisy.valid, noisy.worst);
  }

  const Benchmark& Level() {
    if (!level_) level_.emplace(MakeBenchmark(LevelAlignedSceneSpec(50, Seed("level-scene"))));
    return *level_;
  }

  const Localizer& LevelLocalizer() {
    if (!level_localizer_) {
      ReduceParams eight;
      eight.depth_bits = 8;
      level_localizer_ = std::make_unique<Localizer>(WriteAndRead(ReduceMap(Level().master, eight), Work("level-map")));
    }
    return *level_localizer_;
  }

  void EndToEnd(CriterionResult* r) {
    limit_ = 60.0;
    const Benchmark& b = Level();
    const auto results = LocalizeAll(LevelLocalizer(), b.queries, SceneFieldLoader(b.scene, {}), opt_.localizer);
    Track(results);
    int within = 0;
    double worst_r = 0.0, worst_t = 0.0;
    for (size_t q = 0; q < results.size(); ++q) {
      if (!results[q].success()) continue;
      const PoseError e = ComputePoseError(results[q].estimate.pose, b.gt[q].pose);
      worst_r = std::max(worst_r, e.rotation_deg);
      worst_t = std::max(worst_t, e.translation_m);
      within += e.translation_m <= 1e-4 && e.rotation_deg <= 1e-4;
    }
    r->pass = within == static_cast<int>(results.size());
    r->detail = Fmt("%d/%zu within (1e-4 m, 1e-4 deg); worst %.3g m, %.3g deg", within, results.size(), worst_t,
                    worst_r);
  }

  void Robust(CriterionResult* r) {
    const Benchmark& b = Level();
    const FieldLoader load = SceneFieldLoader(b.scene, RobustFields(opt_.seed));
    const auto first = LocalizeAll(LevelLocalizer(), b.queries, load, opt_.localizer);
    const auto second = LocalizeAll(LevelLocalizer(), b.queries, load, opt_.localizer);
    Track(first);
    bool same = first.size() == second.size();
    for (size_t q = 0; same && q < first.size(); ++q) same = SameBits(first[q], second[q]);
    const double depth_tol = 0.02 * MeanDepth(b.scene);
    int within = 0;
    for (size_t q = 0; q < first.size(); ++q) {
      const PoseError e = ComputePoseError(first[q].estimate.pose, b.gt[q].pose);
      within += first[q].success() && e.rotation_deg <= 0.5 && e.translation_m <= depth_tol;
    }
    const double frac = static_cast<double>(within) / first.size();
    r->pass = frac >= 0.98 && same;
    r->detail = Fmt("%d/%zu within (0.5 deg, %.4f m); rerun %s", within, first.size(), depth_tol,
                    same ? "bit-identical" : "differs");
  }

  void AdaptiveStopping(CriterionResult* r) {
    const int a = RequiredIterations(0.5, 1e-4, 3);
    const int b = RequiredIterations(0.1, 1e-4, 3);
    r->pass = a == 69 && b == 9206;
    r->detail = Fmt("required_iterations(0.5)=%d, (0.1)=%d", a, b);
  }

  void StorageRoundTrip(CriterionResult* r) {
    Rng rng(Seed("storage"));
    int exact = 0;
    std::string first_failure;
    for (int m = 0; m < 20; ++m) {
      Map map;
      map.rgb_codec = rng.uniform() < 0.5 ? "png" : "jpeg";
      map.rgb_quality = 50 + static_cast<int>(rng.index(50));
      map.descriptor_dim = 4 + static_cast<int>(rng.index(29));
      const int bits = kMinDepthBits + static_cast<int>(rng.index(kMaxDepthBits - kMinDepthBits + 1));
      const double d_min = rng.uniform(0.05, 1.0), d_max = d_min * rng.uniform(10.0, 1000.0);
      const int n = 1 + static_cast<int>(rng.index(5));
      for (int i = 0; i < n; ++i) {
        MapEntry e;
        e.id = Fmt("m%02d_e%d_%llu", m, i, static_cast<unsigned long long>(rng.index(1000000)));
        e.pose = RandomPose(rng, 50.0);
        const int factor = 1 + static_cast<int>(rng.index(3));
        const int w = factor * (4 + static_cast<int>(rng.index(30)));
        const int h = factor * (4 + static_cast<int>(rng.index(30)));
        e.intrinsics.width = w;
        e.intrinsics.height = h;
        e.intrinsics.fx = rng.uniform(10, 1000);
        e.intrinsics.fy = rng.uniform(10, 1000);
        e.intrinsics.cx = rng.uniform(0, w - 1);
        e.intrinsics.cy = rng.uniform(0, h - 1);
        Image im = Image::Rgb8(w, h);
        for (uint8_t& p : im.pixels) p = static_cast<uint8_t>(rng.index(256));
        e.rgb = EncodeRgb(im, map.rgb_codec, map.rgb_quality);
        e.depth.width = w / factor;
        e.depth.height = h / factor;
        e.depth.bits = bits;
        e.depth.d_min = d_min;
        e.depth.d_max = d_max;
        for (int k = 0; k < e.depth.width * e.depth.height; ++k) {
          e.depth.codes.push_back(static_cast<uint16_t>(rng.index(static_cast<uint64_t>(e.depth.max_code()) + 1)));
        }
        for (int k = 0; k < map.descriptor_dim; ++k) e.descriptor.push_back(static_cast<float>(rng.normal()));
        map.entries.push_back(std::move(e));
      }
      const Map back = WriteAndRead(map, Work(Fmt("storage/%02d", m)));
      bool ok = back.entries.size() == map.entries.size() && back.rgb_codec == map.rgb_codec;
      for (size_t i = 0; ok && i < map.entries.size(); ++i) {
        const MapEntry& a = map.entries[i];
        const MapEntry& b = back.entries[i];
        ok = a.id == b.id && a.intrinsics == b.intrinsics && a.rgb == b.rgb && a.depth.codes == b.depth.codes &&
             a.depth.bits == b.depth.bits && a.depth.d_min == b.depth.d_min && a.depth.d_max == b.depth.d_max &&
             std::memcmp(a.pose.rotation.coeffs().data(), b.pose.rotation.coeffs().data(), 4 * sizeof(double)) ==
                 0 &&
             std::memcmp(a.pose.translation.data(), b.pose.translation.data(), 3 * sizeof(double)) == 0;
        for (size_t k = 0; ok && k < a.descriptor.size(); ++k) ok = RoundToHalf(a.descriptor[k]) == b.descriptor[k];
      }
      exact += ok;
      if (!ok && first_failure.empty()) first_failure = Fmt(" (first mismatch in map %d)", m);
    }
    r->pass = exact == 20;
    r->detail = Fmt("%d/20 maps round-trip exactly", exact) + first_failure;
  }

  void RetrievalExactness(CriterionResult* r) {
    constexpr int kDim = 32;
    Rng rng(Seed("retrieval"));
    DescriptorIndex index(kDim);
    std::vector<std::vector<float>> stored;
    for (int i = 0; i < 10000; ++i) {
      std::vector<float> v(kDim);
      if (i % 10 == 9) {
        v = stored[rng.index(stored.size())];
      } else {
        for (float& x : v) x = static_cast<float>(rng.normal());
      }
      stored.push_back(v);
      index.Add(Fmt("img_%05d", static_cast<int>((i * 7919) % 10000)), v);
    }
    int agree = 0, ties = 0;
    for (int q = 0; q < 100; ++q) {
      std::vector<float> query(kDim);
      if (q % 2 == 0) {
        query = stored[rng.index(stored.size())];
      } else {
        for (float& x : query) x = static_cast<float>(rng.normal());
      }
      double qn = 0.0;
      for (float x : query) qn += static_cast<double>(x) * x;
      qn = std::sqrt(qn);
      std::vector<RetrievalHit> all;
      for (size_t i = 0; i < index.size(); ++i) {
        const auto v = index.vector(i);
        double dot = 0.0;
        for (int j = 0; j < kDim; ++j) dot += static_cast<double>(v[j]) * query[j];
        all.push_back({index.id(i), dot / qn});
      }
      std::sort(all.begin(), all.end(), [](const RetrievalHit& a, const RetrievalHit& b) {
        return a.similarity > b.similarity || (a.similarity == b.similarity && a.id < b.id);
      });
      const int k = 1 + static_cast<int>(rng.index(60));
      const auto hits = index.TopK(query, k);
      bool ok = hits.size() == static_cast<size_t>(k);
      for (int i = 0; ok && i < k; ++i) ok = hits[i].id == all[i].id && hits[i].similarity == all[i].similarity;
      agree += ok;
      ties += all[0].similarity == all[1].similarity;
    }
    r->pass = agree == 100 && ties > 0;
    r->detail = Fmt("%d/100 queries match brute force over 10000 descriptors; %d with tied top hits", agree, ties);
  }

  void CompressionSweep(CriterionResult* r) {
    SceneSpec spec;
    spec.num_cameras = 6;
    spec.num_queries = 50;
    spec.plane_tilt_deg = 20.0;
    spec.seed = Seed("compression-scene");
    const Benchmark b = MakeBenchmark(spec);
    const FieldLoader load = SceneFieldLoader(b.scene, RobustFields(opt_.seed));
    const auto thresholds = ParseThresholds(kDefaultThresholds);
    const Localizer base(WriteAndRead(b.master, Work("compression/master")));
    const auto base_results = LocalizeAll(base, b.queries, load, opt_.localizer);
    Track(base_results);
    const EvalReport baseline = Evaluate(MatchGroundTruth(base_results, b.gt), thresholds);

    std::vector<SweepSetting> settings(3);
    settings[0].params.depth_bits = 16;
    settings[1].params.depth_bits = 8;
    settings[2].params.depth_bits = 9;
    const auto rows =
        CompressSweep(b.master, settings, b.queries, b.gt, load, opt_.localizer, thresholds, Work("compression/sweep"));
    for (const SweepRow& row : rows) {
      if (!row.ok) throw ValidationError("sweep row " + row.setting.Label() + " failed: " + row.error);
    }
    const bool identity = SameReport(rows[0].report, baseline);
    const double gain = rows[2].report.recall[0] - rows[1].report.recall[0];
    r->pass = identity && gain <= 0.02;
    r->detail = Fmt("finest-threshold recall 8-bit %.3f, 9-bit %.3f; identity %s baseline", rows[1].report.recall[0],
                    rows[2].report.recall[0], identity ? "reproduces" : "differs from");
  }

  void Refinement(CriterionResult* r) {
    Rng rng(Seed("refinement"));
    double worst = 0.0;
    const double h = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
      CameraIntrinsics cam;
      cam.width = 640;
      cam.height = 480;
      cam.fx = rng.uniform(200, 900);
      cam.fy = cam.fx * rng.uniform(0.9, 1.1);
      cam.cx = 319.5;
      cam.cy = 239.5;
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
      worst = std::max(worst, (J - fd).norm() / J.norm());
    }
    r->pass = worst < 1e-4 && tracked_ > 0 && non_monotone_ == 0;
    r->detail = Fmt("worst Jacobian relative error %.3g over 100 states; %d/%d pose estimates with monotone "
                    "refinement",
                    worst, tracked_ - non_monotone_, tracked_);
    if (tracked_ == 0) r->detail += " (no localization runs in this suite selection)";
  }

  void CliDeterminism(CriterionResult* r) {
    if (opt_.cli_path.empty()) {
      r->pass = false;
      r->detail = "no imloc executable given";
      return;
    }
    const std::string exe = Quote(opt_.cli_path);
    const std::string seed = std::to_string(opt_.seed);
    const int threads[] = {1, 4, 4};
    std::vector<std::map<std::string, std::vector<uint8_t>>> snapshots;
    for (int run = 0; run < 3; ++run) {
      const fs::path root = opt_.work_dir / "cli" / ("run" + std::to_string(run));
      std::error_code ec;
      fs::remove_all(root, ec);
      fs::create_directories(root / "stdout");
      const std::string base = exe + " --threads " + std::to_string(threads[run]) + " ";
      const std::string d = root.string() + "/";
      const std::vector<std::pair<std::string, std::string>> steps = {
          {"synth-export", "synth-export --out " + Quote(d + "export") + " --queries 6 --seed " + seed +
                               " --outlier-fraction 0.3 --pixel-sigma 1"},
          {"build-map", "build-map --scene " + Quote(d + "export") + " --out " + Quote(d + "map")},
          {"localize", "localize --map " + Quote(d + "map") + " --queries " + Quote(d + "export") + " --out " +
                           Quote(d + "results.jsonl") + " --seed " + seed},
          {"eval", "eval --results " + Quote(d + "results.jsonl") + " --gt " + Quote(d + "export/gt_poses.txt") +
                       " --out " + Quote(d + "eval.csv")},
          {"compress-sweep", "compress-sweep --map " + Quote(d + "map") + " --queries " + Quote(d + "export") +
                                 " --gt " + Quote(d + "export/gt_poses.txt") + " --depth-bits 6,8 --strides 1,2" +
                                 " --scratch " + Quote(d + "sweep") + " --out " + Quote(d + "sweep.csv") +
                                 " --seed " + seed},
          {"synth-bench", "synth-bench --only adaptive-stopping,quantization-bound --seed " + seed + " --work " +
                              Quote(d + "bench") + " --out " + Quote(d + "bench.csv")},
      };
      for (const auto& [name, args] : steps) {
        const std::string cmd = base + args + " > " + Quote(d + "stdout/" + name + ".txt") + " 2>&1";
        const int rc = std::system(cmd.c_str());
        if (rc != 0) {
          r->pass = false;
          r->detail = Fmt("run %d: %s exited with status %d", run, name.c_str(), rc);
          return;
        }
      }
      snapshots.push_back(Snapshot(root));
    }
    std::string diff;
    for (int run = 1; run < 3 && diff.empty(); ++run) {
      for (const auto& [rel, bytes] : snapshots[0]) {
        const auto it = snapshots[run].find(rel);
        if (it == snapshots[run].end() || it->second != bytes) {
          diff = Fmt("run %d (%d threads) differs in %s", run, threads[run], rel.c_str());
          break;
        }
      }
      if (diff.empty() && snapshots[run].size() != snapshots[0].size()) diff = Fmt("run %d file set differs", run);
    }
    r->pass = diff.empty();
    r->detail = diff.empty() ? Fmt("6 subcommands, %zu output files byte-identical over 3 runs (1, 4, 4 threads)",
                                   snapshots[0].size())
                             : diff;
  }

  const AcceptanceOptions& opt_;
  double limit_ = 0.0;
  int tracked_ = 0;
  int non_monotone_ = 0;
  std::optional<Benchmark> level_;
  std::unique_ptr<Localizer> level_localizer_;
};

}  // namespace

SceneSpec LevelAlignedSceneSpec(int num_queries, uint64_t seed) {
  SceneSpec spec;
  spec.num_cameras = 6;
  spec.num_queries = num_queries;
  spec.surface = SurfaceModel::kPlane;
  spec.setback = 0.0;
  spec.baseline = 0.4;
  const QuantizedDepthMap defaults;
  const double level = DequantizeCode(QuantizeValue(4.0, defaults.d_min, defaults.d_max, defaults.bits),
                                      defaults.d_min, defaults.d_max, defaults.bits);
  spec.plane_distance = static_cast<float>(level);
  spec.seed = seed;
  return spec;
}

std::vector<LocalizeResult> LocalizeAll(const Localizer& localizer, std::span<const QueryJob> queries,
                                        const FieldLoader& load, const LocalizerConfig& cfg) {
  cfg.Validate();
  const int n = static_cast<int>(queries.size());
  std::vector<LocalizeResult> out(n);
  std::vector<std::exception_ptr> errors(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (int i = 0; i < n; ++i) {
    try {
      try {
        out[i] = localizer.Localize(queries[i], load, cfg);
      } catch (const IoError& e) {
        out[i] = LocalizeResult();
        out[i].query_id = queries[i].id;
        out[i].status = LocalizeStatus::kError;
        out[i].error = e.subject() + ": " + e.what();
      } catch (const ValidationError& e) {
        out[i] = LocalizeResult();
        out[i].query_id = queries[i].id;
        out[i].status = LocalizeStatus::kError;
        out[i].error = e.what();
      }
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const std::exception_ptr& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<EvalSample> MatchGroundTruth(std::span<const LocalizeResult> results,
                                         std::span<const NamedPose> ground_truth) {
  std::map<std::string, const NamedPose*> gt;
  for (const NamedPose& p : ground_truth) gt.emplace(p.name, &p);
  std::set<std::string> seen;
  std::string missing;
  std::vector<EvalSample> out;
  for (const LocalizeResult& r : results) {
    seen.insert(r.query_id);
    const auto it = gt.find(r.query_id);
    if (it == gt.end()) {
      missing += (missing.empty() ? "" : ", ") + r.query_id;
      continue;
    }
    out.push_back({r.success(), r.estimate.pose, it->second->pose});
  }
  std::string unmatched;
  for (const auto& [name, pose] : gt) {
    if (!seen.count(name)) unmatched += (unmatched.empty() ? "" : ", ") + name;
  }
  if (!missing.empty() || !unmatched.empty()) {
    std::string what = "result and ground-truth ids differ";
    if (!missing.empty()) what += "; no ground truth for: " + missing;
    if (!unmatched.empty()) what += "; no result for: " + unmatched;
    throw ValidationError(what);
  }
  return out;
}

std::string SweepSetting::Label() const {
  const ReduceParams& p = params;
  return "k" + std::to_string(p.keyframe_stride) + "-r" + std::to_string(p.rgb_factor) + "-" +
         (p.rgb_codec.empty() ? "keep" : p.rgb_codec) + "-q" +
         (p.rgb_quality < 0 ? "keep" : std::to_string(p.rgb_quality)) + "-d" + std::to_string(p.depth_factor) + "-b" +
         std::to_string(p.depth_bits);
}

SweepSetting ParseSweepSetting(const std::string& text) {
  SweepSetting s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const size_t eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError("sweep setting item '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (key == "k") {
      s.params.keyframe_stride = ParseInt(key, value);
    } else if (key == "rgb") {
      s.params.rgb_factor = ParseInt(key, value);
    } else if (key == "codec") {
      s.params.rgb_codec = value;
    } else if (key == "q") {
      s.params.rgb_quality = ParseInt(key, value);
    } else if (key == "depth") {
      s.params.depth_factor = ParseInt(key, value);
    } else if (key == "bits") {
      s.params.depth_bits = ParseInt(key, value);
    } else {
      throw ConfigError("unknown sweep setting key '" + key + "'");
    }
  }
  s.params.Validate();
  return s;
}

std::vector<SweepSetting> SweepGrid(std::span<const int> strides, std::span<const int> rgb_factors,
                                    std::span<const std::string> codecs, std::span<const int> qualities,
                                    std::span<const int> depth_factors, std::span<const int> depth_bits) {
  std::vector<SweepSetting> out;
  for (int k : strides) {
    for (int rf : rgb_factors) {
      for (const std::string& codec : codecs) {
        for (int q : qualities) {
          for (int df : depth_factors) {
            for (int bits : depth_bits) {
              SweepSetting s;
              s.params = {k, rf, codec, q, df, bits};
              s.params.Validate();
              out.push_back(std::move(s));
            }
          }
        }
      }
    }
  }
  if (out.empty()) throw ConfigError("sweep grid is empty");
  return out;
}

std::vector<SweepRow> CompressSweep(const Map& map, std::span<const SweepSetting> settings,
                                    std::span<const QueryJob> queries, std::span<const NamedPose> ground_truth,
                                    const FieldLoader& load, const LocalizerConfig& cfg,
                                    std::span<const EvalThreshold> thresholds, const fs::path& scratch) {
  if (settings.empty()) throw ConfigError("sweep grid is empty");
  cfg.Validate();
  std::vector<SweepRow> rows;
  for (const SweepSetting& s : settings) {
    SweepRow row;
    row.setting = s;
    try {
      const fs::path dir = scratch / s.Label();
      WriteMap(ReduceMap(map, s.params), dir);
      row.bytes = ComputeMapStats(dir);
      const Localizer localizer(ReadMap(dir));
      row.entries = localizer.map().entries.size();
      const auto results = LocalizeAll(localizer, queries, load, cfg);
      row.report = Evaluate(MatchGroundTruth(results, ground_truth), thresholds);
      row.ok = true;
    } catch (const ConfigError& e) {
      row.error = e.what();
    } catch (const ValidationError& e) {
      row.error = e.what();
    } catch (const IoError& e) {
      row.error = e.subject() + ": " + e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<std::string> AcceptanceCriteria() {
  return {"quantization-bound", "p3p-exactness",       "triangulation-oracle", "e2e-localization",
          "robust-localization", "adaptive-stopping",  "storage-roundtrip",    "retrieval-exactness",
          "compression-sweep",  "refinement-correctness", "cli-determinism"};
}

std::vector<CriterionResult> RunAcceptanceSuite(const AcceptanceOptions& options) {
  const std::vector<std::string> all = AcceptanceCriteria();
  for (const std::string& name : options.only) {
    if (std::find(all.begin(), all.end(), name) == all.end()) throw ConfigError("unknown criterion '" + name + "'");
  }
  Suite suite(options);
  std::vector<CriterionResult> out;
  for (const std::string& name : all) {
    if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), name) == options.only.end()) {
      continue;
    }
    out.push_back(suite.Run(name));
  }
  return out;
}

}  // namespace imloc
