#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "imloc/bench.h"
#include "imloc/errors.h"
#include "imloc/geometry.h"
#include "imloc/localizer.h"
#include "imloc/mapping.h"
#include "imloc/mapstore.h"
#include "imloc/matchio.h"
#include "imloc/parallel.h"
#include "imloc/posest.h"
#include "imloc/retrieval.h"
#include "imloc/scene_io.h"
#include "imloc/synth.h"

namespace py = pybind11;
using namespace imloc;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Pose MakePose(const std::array<double, 4>& wxyz, const Eigen::Vector3d& t) {
  return Pose(Eigen::Quaterniond(wxyz[0], wxyz[1], wxyz[2], wxyz[3]), t);
}

std::array<double, 4> Wxyz(const Pose& p) {
  return {p.rotation.w(), p.rotation.x(), p.rotation.y(), p.rotation.z()};
}

py::array_t<float> DepthArray(const DepthMap& d) {
  py::array_t<float> out({d.height, d.width});
  std::copy(d.values.begin(), d.values.end(), out.mutable_data());
  return out;
}

DepthMap DepthFromArray(const FloatArray& a) {
  if (a.ndim() != 2) throw ValidationError("depth must be a 2-D array");
  DepthMap d(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), d.values.begin());
  return d;
}

std::vector<float> Vector(const FloatArray& a) {
  if (a.ndim() != 1) throw ValidationError("descriptor must be a 1-D array");
  return std::vector<float>(a.data(), a.data() + a.size());
}

py::dict FieldDict(const CorrespondenceField& f) {
  const py::ssize_t n = static_cast<py::ssize_t>(f.cells.size());
  py::array_t<float> targets({n, py::ssize_t{2}});
  py::array_t<float> confidence(n);
  auto t = targets.mutable_unchecked<2>();
  auto c = confidence.mutable_unchecked<1>();
  for (py::ssize_t i = 0; i < n; ++i) {
    t(i, 0) = f.cells[i].target_x;
    t(i, 1) = f.cells[i].target_y;
    c(i) = f.cells[i].confidence;
  }
  py::dict d;
  d["source"] = f.source_id;
  d["target"] = f.target_id;
  d["grid_width"] = f.grid_width;
  d["grid_height"] = f.grid_height;
  d["scale"] = py::make_tuple(f.scale_x, f.scale_y);
  d["targets"] = targets;
  d["confidence"] = confidence;
  return d;
}

py::dict ResultDict(const LocalizeResult& r) {
  py::dict d;
  d["id"] = r.query_id;
  d["status"] = StatusName(r.status);
  d["retrieved"] = r.retrieved;
  d["num_matches"] = r.num_matches;
  if (r.status == LocalizeStatus::kOk || r.status == LocalizeStatus::kNotConverged) {
    d["pose"] = r.estimate.pose;
    d["num_inliers"] = r.estimate.num_inliers;
    d["iterations"] = r.estimate.iterations;
  } else {
    d["pose"] = py::none();
  }
  if (r.status == LocalizeStatus::kError) d["error"] = r.error;
  return d;
}

py::dict ReportDict(const EvalReport& r, const std::vector<EvalThreshold>& thresholds) {
  py::list recalls;
  for (size_t i = 0; i < thresholds.size(); ++i) {
    recalls.append(py::make_tuple(thresholds[i].translation_m, thresholds[i].rotation_deg, r.recall[i]));
  }
  py::dict d;
  d["recall"] = recalls;
  d["median_rotation_deg"] = r.median_rotation_deg;
  d["median_translation_m"] = r.median_translation_m;
  d["num_queries"] = r.num_queries;
  d["num_success"] = r.num_success;
  return d;
}

py::dict StatsDict(const MapStats& s) {
  py::dict d;
  d["rgb"] = s.rgb;
  d["depth"] = s.depth;
  d["descriptors"] = s.descriptors;
  d["manifest"] = s.manifest;
  d["other"] = s.other;
  d["total"] = s.total;
  return d;
}

}  // namespace

PYBIND11_MODULE(_imloc, m) {
  m.doc() = "Visual localization against compact scene maps";

  auto validation = py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<RetrievalError>(m, "RetrievalError", validation.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<ContractViolation>(m, "ContractViolation", PyExc_ValueError);
  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("set_num_threads", &SetNumThreads, py::arg("n"));
  m.def("num_threads", &NumThreads);

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init([](double fx, double fy, double cx, double cy, int width, int height) {
             CameraIntrinsics c;
             c.fx = fx;
             c.fy = fy;
             c.cx = cx;
             c.cy = cy;
             c.width = width;
             c.height = height;
             c.Validate();
             return c;
           }),
           py::arg("fx"), py::arg("fy"), py::arg("cx"), py::arg("cy"), py::arg("width"), py::arg("height"))
      .def_readwrite("fx", &CameraIntrinsics::fx)
      .def_readwrite("fy", &CameraIntrinsics::fy)
      .def_readwrite("cx", &CameraIntrinsics::cx)
      .def_readwrite("cy", &CameraIntrinsics::cy)
      .def_readwrite("width", &CameraIntrinsics::width)
      .def_readwrite("height", &CameraIntrinsics::height)
      .def("K", &CameraIntrinsics::K)
      .def("resized", &CameraIntrinsics::Resized)
      .def("__eq__", [](const CameraIntrinsics& a, const CameraIntrinsics& b) { return a == b; })
      .def("__repr__", [](const CameraIntrinsics& c) {
        return py::str("CameraIntrinsics(fx={}, fy={}, cx={}, cy={}, width={}, height={})")
            .format(c.fx, c.fy, c.cx, c.cy, c.width, c.height);
      });

  py::class_<Pose>(m, "Pose", "Camera-from-world rigid transform")
      .def(py::init<>())
      .def(py::init(&MakePose), py::arg("rotation_wxyz"), py::arg("translation"))
      .def_static("from_matrix",
                  [](const Eigen::Matrix3d& R, const Eigen::Vector3d& t) { return Pose(R, t); }, py::arg("R"),
                  py::arg("t"))
      .def_property_readonly("rotation_wxyz", &Wxyz)
      .def_property_readonly("translation", [](const Pose& p) { return p.translation; })
      .def_property_readonly("R", &Pose::R)
      .def_property_readonly("center", &Pose::Center)
      .def("inverse", &Pose::Inverse)
      .def("apply", &Pose::Apply)
      .def("__mul__", &Pose::operator*)
      .def("__repr__", [](const Pose& p) {
        const auto q = Wxyz(p);
        return py::str("Pose(rotation_wxyz=[{}, {}, {}, {}], translation=[{}, {}, {}])")
            .format(q[0], q[1], q[2], q[3], p.translation.x(), p.translation.y(), p.translation.z());
      });

  m.def("project", &Project, py::arg("camera"), py::arg("pose"), py::arg("world_point"));
  m.def("unproject", &Unproject, py::arg("camera"), py::arg("pixel"), py::arg("depth"));
  m.def(
      "solve_p3p",
      [](const Eigen::Matrix3d& bearings, const Eigen::Matrix3d& points) {
        std::array<Eigen::Vector3d, 3> b, x;
        for (int i = 0; i < 3; ++i) {
          b[i] = bearings.row(i).transpose();
          x[i] = points.row(i).transpose();
        }
        return SolveP3P(b, x);
      },
      py::arg("bearings"), py::arg("points"), "Rows are unit bearings and world points");
  m.def(
      "pose_error",
      [](const Pose& est, const Pose& gt) {
        const PoseError e = ComputePoseError(est, gt);
        return py::make_tuple(e.rotation_deg, e.translation_m);
      },
      py::arg("estimated"), py::arg("ground_truth"), "(rotation_deg, translation_m)");

  m.def("quantization_error_bound", &QuantizationErrorBound, py::arg("d_min") = 0.25, py::arg("d_max") = 128.0,
        py::arg("bits") = 8);
  m.def(
      "quantize_depth",
      [](const FloatArray& depth, double d_min, double d_max, int bits) {
        const QuantizedDepthMap q = QuantizeDepth(DepthFromArray(depth), d_min, d_max, bits);
        py::array_t<uint16_t> out({q.height, q.width});
        std::copy(q.codes.begin(), q.codes.end(), out.mutable_data());
        return out;
      },
      py::arg("depth"), py::arg("d_min") = 0.25, py::arg("d_max") = 128.0, py::arg("bits") = 8);
  m.def(
      "dequantize_depth",
      [](const py::array_t<uint16_t, py::array::c_style | py::array::forcecast>& codes, double d_min, double d_max,
         int bits) {
        if (codes.ndim() != 2) throw ValidationError("codes must be a 2-D array");
        QuantizedDepthMap q;
        q.height = static_cast<int>(codes.shape(0));
        q.width = static_cast<int>(codes.shape(1));
        q.d_min = d_min;
        q.d_max = d_max;
        q.bits = bits;
        q.codes.assign(codes.data(), codes.data() + codes.size());
        q.Validate();
        return DepthArray(DequantizeDepth(q));
      },
      py::arg("codes"), py::arg("d_min") = 0.25, py::arg("d_max") = 128.0, py::arg("bits") = 8);

  py::class_<RansacConfig>(m, "RansacConfig")
      .def(py::init<>())
      .def_readwrite("max_iterations", &RansacConfig::max_iterations)
      .def_readwrite("batch_size", &RansacConfig::batch_size)
      .def_readwrite("miss_probability", &RansacConfig::miss_probability)
      .def_readwrite("reproj_threshold", &RansacConfig::reproj_threshold)
      .def_readwrite("max_scoring", &RansacConfig::max_scoring)
      .def_readwrite("cauchy_scale", &RansacConfig::cauchy_scale)
      .def_readwrite("lm_max_iterations", &RansacConfig::lm_max_iterations)
      .def_readwrite("seed", &RansacConfig::seed);

  m.def("required_iterations", &RequiredIterations, py::arg("inlier_ratio"), py::arg("miss_probability") = 1e-4,
        py::arg("sample_size") = 3, py::arg("max_iterations") = 100000);
  m.def(
      "ransac_pnp",
      [](const DoubleArray& points, const DoubleArray& pixels, std::optional<DoubleArray> weights,
         const CameraIntrinsics& camera, const RansacConfig& cfg) {
        if (points.ndim() != 2 || points.shape(1) != 3 || pixels.ndim() != 2 || pixels.shape(1) != 2 ||
            pixels.shape(0) != points.shape(0)) {
          throw ValidationError("expected points (N, 3) and pixels (N, 2)");
        }
        const py::ssize_t n = points.shape(0);
        if (weights && (weights->ndim() != 1 || weights->shape(0) != n)) {
          throw ValidationError("weights must have shape (N,)");
        }
        std::vector<Match2D3D> matches(n);
        auto p = points.unchecked<2>();
        auto x = pixels.unchecked<2>();
        for (py::ssize_t i = 0; i < n; ++i) {
          matches[i].point = Eigen::Vector3d(p(i, 0), p(i, 1), p(i, 2));
          matches[i].pixel = Eigen::Vector2d(x(i, 0), x(i, 1));
          if (weights) matches[i].weight = weights->at(i);
        }
        PoseEstimate est;
        {
          py::gil_scoped_release release;
          est = RansacPnp(matches, camera, cfg);
        }
        py::array_t<bool> inliers(n);
        for (py::ssize_t i = 0; i < n; ++i) inliers.mutable_at(i) = est.inliers.empty() ? false : est.inliers[i] != 0;
        py::dict d;
        d["pose"] = est.pose;
        d["num_inliers"] = est.num_inliers;
        d["inliers"] = inliers;
        d["score"] = est.score;
        d["iterations"] = est.iterations;
        d["converged"] = est.converged;
        return d;
      },
      py::arg("points"), py::arg("pixels"), py::arg("weights") = py::none(), py::arg("camera"),
      py::arg("config") = RansacConfig());

  py::class_<DescriptorIndex>(m, "DescriptorIndex")
      .def(py::init<int>(), py::arg("dim"))
      .def_property_readonly("dim", &DescriptorIndex::dim)
      .def("__len__", &DescriptorIndex::size)
      .def("__contains__", &DescriptorIndex::contains)
      .def(
          "add", [](DescriptorIndex& index, const std::string& id, const FloatArray& d) { index.Add(id, Vector(d)); },
          py::arg("id"), py::arg("descriptor"))
      .def(
          "top_k",
          [](const DescriptorIndex& index, const FloatArray& q, int k) {
            std::vector<std::pair<std::string, double>> out;
            for (const RetrievalHit& h : index.TopK(Vector(q), k)) out.emplace_back(h.id, h.similarity);
            return out;
          },
          py::arg("query"), py::arg("k"), "[(id, cosine similarity)] best first, ties by id");

  m.def(
      "read_field",
      [](const std::filesystem::path& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw IoError(path.string(), "cannot open " + path.string());
        const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return FieldDict(ParseField(bytes));
      },
      py::arg("path"));
  m.def("field_file_name", &FieldFileName, py::arg("source"), py::arg("target"));

  py::class_<Map>(m, "Map")
      .def_readonly("rgb_codec", &Map::rgb_codec)
      .def_readonly("rgb_quality", &Map::rgb_quality)
      .def_readonly("descriptor_dim", &Map::descriptor_dim)
      .def("__len__", [](const Map& map) { return map.entries.size(); })
      .def_property_readonly("ids",
                             [](const Map& map) {
                               std::vector<std::string> ids;
                               for (const auto& e : map.entries) ids.push_back(e.id);
                               return ids;
                             })
      .def(
          "entry",
          [](const Map& map, const std::string& id) {
            const int i = map.Find(id);
            if (i < 0) throw py::key_error(id);
            const MapEntry& e = map.entries[i];
            py::dict d;
            d["id"] = e.id;
            d["pose"] = e.pose;
            d["intrinsics"] = e.intrinsics;
            d["depth"] = DepthArray(DequantizeDepth(e.depth));
            d["depth_bits"] = e.depth.bits;
            d["descriptor"] = py::array_t<float>(e.descriptor.size(), e.descriptor.data());
            d["rgb"] = py::bytes(reinterpret_cast<const char*>(e.rgb.data()), e.rgb.size());
            return d;
          },
          py::arg("id"));

  m.def("read_map", &ReadMap, py::arg("dir"));
  m.def("write_map", &WriteMap, py::arg("map"), py::arg("dir"));
  m.def(
      "reduce_map",
      [](const Map& map, int keyframe_stride, int rgb_factor, const std::string& rgb_codec, int rgb_quality,
         int depth_factor, int depth_bits) {
        ReduceParams p;
        p.keyframe_stride = keyframe_stride;
        p.rgb_factor = rgb_factor;
        p.rgb_codec = rgb_codec;
        p.rgb_quality = rgb_quality;
        p.depth_factor = depth_factor;
        p.depth_bits = depth_bits;
        return ReduceMap(map, p);
      },
      py::arg("map"), py::arg("keyframe_stride") = 1, py::arg("rgb_factor") = 1, py::arg("rgb_codec") = "",
      py::arg("rgb_quality") = -1, py::arg("depth_factor") = 1, py::arg("depth_bits") = 8);
  m.def(
      "map_stats", [](const std::filesystem::path& dir) { return StatsDict(ComputeMapStats(dir)); }, py::arg("dir"));

  py::enum_<SurfaceModel>(m, "SurfaceModel")
      .value("PLANE", SurfaceModel::kPlane)
      .value("SURFELS", SurfaceModel::kSurfels);

  py::class_<SceneSpec>(m, "SceneSpec")
      .def(py::init<>())
      .def_static("level_aligned", &LevelAlignedSceneSpec, py::arg("num_queries"), py::arg("seed"))
      .def_readwrite("num_cameras", &SceneSpec::num_cameras)
      .def_readwrite("num_queries", &SceneSpec::num_queries)
      .def_readwrite("width", &SceneSpec::width)
      .def_readwrite("height", &SceneSpec::height)
      .def_readwrite("focal", &SceneSpec::focal)
      .def_readwrite("surface", &SceneSpec::surface)
      .def_readwrite("plane_distance", &SceneSpec::plane_distance)
      .def_readwrite("plane_tilt_deg", &SceneSpec::plane_tilt_deg)
      .def_readwrite("baseline", &SceneSpec::baseline)
      .def_readwrite("setback", &SceneSpec::setback)
      .def_readwrite("converge", &SceneSpec::converge)
      .def_readwrite("descriptor_dim", &SceneSpec::descriptor_dim)
      .def_readwrite("seed", &SceneSpec::seed);

  py::class_<Scene>(m, "Scene")
      .def(py::init(&MakeScene), py::arg("spec"))
      .def_property_readonly("num_database", &Scene::num_database)
      .def_property_readonly("num_queries", &Scene::num_queries)
      .def_property_readonly("ids",
                             [](const Scene& s) {
                               std::vector<std::string> ids;
                               for (const auto& v : s.views) ids.push_back(v.id);
                               return ids;
                             })
      .def(
          "pose", [](const Scene& s, int v) { return s.views.at(v).pose; }, py::arg("view"))
      .def(
          "intrinsics", [](const Scene& s, int v) { return s.views.at(v).intrinsics; }, py::arg("view"))
      .def(
          "true_depth", [](const Scene& s, int v) { return DepthArray(s.depth.at(v)); }, py::arg("view"));

  m.def(
      "export_scene",
      [](const Scene& scene, const std::filesystem::path& dir, int k_map, int k_loc, double outlier_fraction,
         double pixel_sigma, uint64_t seed) {
        ExportOptions opts;
        opts.k_map = k_map;
        opts.k_loc = k_loc;
        opts.fields.seed = seed;
        opts.fields.corrupt_queries = outlier_fraction > 0.0 || pixel_sigma > 0.0;
        opts.fields.query_noise.outlier_fraction = outlier_fraction;
        opts.fields.query_noise.pixel_sigma = pixel_sigma;
        py::gil_scoped_release release;
        ExportScene(scene, opts, dir);
      },
      py::arg("scene"), py::arg("dir"), py::arg("k_map") = 50, py::arg("k_loc") = 10,
      py::arg("outlier_fraction") = 0.0, py::arg("pixel_sigma") = 0.0, py::arg("seed") = 0);

  m.def(
      "build_map",
      [](const std::filesystem::path& scene_dir, std::optional<std::filesystem::path> fields_dir, int k_map,
         int depth_bits) {
        MapBuildConfig cfg;
        cfg.triangulation.k_map = k_map;
        cfg.depth_bits = depth_bits;
        cfg.Validate();
        const SceneExport exported = ReadSceneExport(scene_dir);
        std::vector<EntryBuildReport> report;
        Map map;
        {
          py::gil_scoped_release release;
          map = BuildMap(exported.database, DirectoryFieldLoader(fields_dir.value_or(scene_dir / "fields")), cfg,
                         &report);
        }
        py::list fractions;
        for (const auto& r : report) fractions.append(py::make_tuple(r.id, r.valid_fraction));
        return py::make_tuple(map, fractions);
      },
      py::arg("scene_dir"), py::arg("fields_dir") = py::none(), py::arg("k_map") = 50, py::arg("depth_bits") = 8,
      "Returns (map, [(id, valid depth fraction)])");

  py::class_<Localizer>(m, "Localizer")
      .def(py::init<Map>(), py::arg("map"))
      .def_property_readonly("map", &Localizer::map, py::return_value_policy::reference_internal)
      .def(
          "localize_export",
          [](const Localizer& localizer, const std::filesystem::path& scene_dir,
             std::optional<std::filesystem::path> fields_dir, int k_loc, double reproj_threshold, uint64_t seed) {
            LocalizerConfig cfg;
            cfg.k_loc = k_loc;
            cfg.ransac.reproj_threshold = reproj_threshold;
            cfg.ransac.seed = seed;
            cfg.Validate();
            const SceneExport exported = ReadSceneExport(scene_dir);
            std::vector<LocalizeResult> results;
            {
              py::gil_scoped_release release;
              results = LocalizeAll(localizer, exported.queries,
                                    DirectoryFieldLoader(fields_dir.value_or(scene_dir / "fields")), cfg);
            }
            py::list out;
            for (const auto& r : results) out.append(ResultDict(r));
            return out;
          },
          py::arg("scene_dir"), py::arg("fields_dir") = py::none(), py::arg("k_loc") = 10,
          py::arg("reproj_threshold") = 12.0, py::arg("seed") = 0, "Localizes every query of a scene export");

  m.def(
      "read_poses",
      [](const std::filesystem::path& path) {
        std::vector<std::pair<std::string, Pose>> out;
        for (const auto& p : ReadPoses(path)) out.emplace_back(p.name, p.pose);
        return out;
      },
      py::arg("path"));

  m.def(
      "evaluate",
      [](const std::vector<std::optional<Pose>>& estimates, const std::vector<Pose>& ground_truth,
         const std::string& thresholds) {
        if (estimates.size() != ground_truth.size()) throw ValidationError("estimates and ground truth differ in size");
        const auto t = ParseThresholds(thresholds);
        std::vector<EvalSample> samples(estimates.size());
        for (size_t i = 0; i < samples.size(); ++i) {
          samples[i].success = estimates[i].has_value();
          if (estimates[i]) samples[i].estimate = *estimates[i];
          samples[i].ground_truth = ground_truth[i];
        }
        return ReportDict(Evaluate(samples, t), t);
      },
      py::arg("estimates"), py::arg("ground_truth"), py::arg("thresholds") = std::string(kDefaultThresholds),
      "None marks a failed query");

  m.def("acceptance_criteria", &AcceptanceCriteria);
  m.def(
      "run_acceptance",
      [](const std::vector<std::string>& only, const std::filesystem::path& work_dir, uint64_t seed,
         const std::string& cli_path) {
        AcceptanceOptions opts;
        opts.only = only;
        opts.work_dir = work_dir;
        opts.seed = seed;
        opts.cli_path = cli_path;
        std::vector<CriterionResult> results;
        {
          py::gil_scoped_release release;
          results = RunAcceptanceSuite(opts);
        }
        py::list out;
        for (const auto& r : results) {
          py::dict d;
          d["name"] = r.name;
          d["pass"] = r.pass;
          d["detail"] = r.detail;
          d["seconds"] = r.seconds;
          out.append(d);
        }
        return out;
      },
      py::arg("only") = std::vector<std::string>(), py::arg("work_dir") = std::filesystem::path("imloc-bench"),
      py::arg("seed") = 0, py::arg("cli_path") = std::string(),
      "Runs the acceptance criteria; cli-determinism needs the imloc executable");
}
