#include "commands.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "imloc/bench.h"
#include "imloc/errors.h"
#include "imloc/image_codec.h"
#include "imloc/localizer.h"
#include "imloc/mapping.h"
#include "imloc/mapstore.h"
#include "imloc/random.h"
#include "imloc/scene_io.h"

namespace imloc::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kPi = 3.14159265358979323846;

void RequireDir(const std::string& path, const std::string& what) {
  std::error_code ec;
  if (!fs::is_directory(path, ec)) throw IoError(path, what + " directory " + path + " does not exist");
}

void RequireFile(const std::string& path, const std::string& what) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw IoError(path, what + " file " + path + " does not exist");
}

// Creates the parent directory of an output file.
void PrepareOutput(const std::string& path) {
  if (path.empty()) throw ConfigError("output path is empty");
  const fs::path parent = fs::path(path).parent_path();
  std::error_code ec;
  if (!parent.empty()) fs::create_directories(parent, ec);
  if (ec) throw IoError(path, "cannot create " + parent.string() + ": " + ec.message());
}

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path, "cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError(path, "failed writing " + path);
}

std::string ReadText(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Shortest text that reads back to the same double.
std::string Num(double v) {
  if (std::isnan(v)) return "nan";
  return json(v).dump();
}

std::string CsvField(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c == '\n' ? ' ' : c);
  return out + "\"";
}

SceneSpec SpecFor(const SynthExportArgs& a) {
  const uint64_t seed = DeriveSeed(a.seed, "scene");
  SceneSpec spec;
  if (a.scene == "level") {
    spec = LevelAlignedSceneSpec(a.queries, seed);
  } else if (a.scene == "ring") {
    spec.setback = 1.2;
  } else if (a.scene == "orbit") {
    spec.setback = 0.0;
    spec.converge = true;
  } else if (a.scene == "tilted") {
    spec.plane_tilt_deg = 20.0;
  } else if (a.scene == "surfels") {
    spec.surface = SurfaceModel::kSurfels;
    spec.setback = 1.2;
  } else {
    throw ConfigError("unknown scene '" + a.scene + "' (level, ring, orbit, tilted, surfels)");
  }
  spec.num_cameras = a.cameras;
  if (a.baseline >= 0.0) spec.baseline = a.baseline;
  spec.num_queries = a.queries;
  spec.seed = seed;
  spec.Validate();
  return spec;
}

NoiseSpec Noise(double outliers, double sigma) {
  NoiseSpec n;
  n.outlier_fraction = outliers;
  n.pixel_sigma = sigma;
  n.Validate();
  return n;
}

LocalizerConfig LocalizerConfigFor(const LocalizeArgs& a) {
  LocalizerConfig cfg;
  cfg.k_loc = a.k_loc;
  cfg.confidence_threshold = a.confidence_threshold;
  cfg.ransac.reproj_threshold = a.reproj_threshold;
  cfg.ransac.max_iterations = a.max_iterations;
  cfg.ransac.batch_size = std::min(cfg.ransac.batch_size, a.max_iterations);
  cfg.ransac.seed = a.seed;
  cfg.Validate();
  return cfg;
}

json PoseFields(const Pose& p) {
  const Eigen::Quaterniond& q = p.rotation;
  return {{"rotation_wxyz", {q.w(), q.x(), q.y(), q.z()}},
          {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

json ResultRecord(const LocalizeResult& r) {
  json j = {{"id", r.query_id}, {"status", StatusName(r.status)}};
  if (r.status == LocalizeStatus::kOk || r.status == LocalizeStatus::kNotConverged) {
    j.update(PoseFields(r.estimate.pose));
    j["num_inliers"] = r.estimate.num_inliers;
    j["iterations"] = r.estimate.iterations;
    j["score"] = r.estimate.score;
  }
  j["num_matches"] = r.num_matches;
  j["retrieved"] = r.retrieved;
  if (r.status == LocalizeStatus::kError) j["error"] = r.error;
  return j;
}

// Reads a results file written by `localize`.
std::vector<LocalizeResult> ReadResults(const std::string& path) {
  std::istringstream in(ReadText(path));
  std::vector<LocalizeResult> out;
  std::string line;
  for (int n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    const std::string where = path + ":" + std::to_string(n);
    try {
      const json j = json::parse(line);
      LocalizeResult r;
      r.query_id = j.at("id").get<std::string>();
      const std::string status = j.at("status").get<std::string>();
      if (status == "ok") {
        r.status = LocalizeStatus::kOk;
        const auto& q = j.at("rotation_wxyz");
        const auto& t = j.at("translation");
        r.estimate.pose.rotation = Eigen::Quaterniond(q.at(0).get<double>(), q.at(1).get<double>(),
                                                      q.at(2).get<double>(), q.at(3).get<double>());
        r.estimate.pose.translation =
            Eigen::Vector3d(t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>());
      } else {
        r.status = LocalizeStatus::kError;
      }
      out.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw IoError(where, std::string("malformed result record: ") + e.what());
    }
  }
  return out;
}

std::string ThresholdName(const EvalThreshold& t) { return Num(t.translation_m) + "m_" + Num(t.rotation_deg) + "deg"; }

}  // namespace

int SynthExport(const SynthExportArgs& a) {
  const SceneSpec spec = SpecFor(a);
  if (a.k_map < 1 || a.k_loc < 1) throw ConfigError("k_map and k_loc must be at least 1");
  ExportOptions opts;
  opts.k_map = a.k_map;
  opts.k_loc = a.k_loc;
  opts.fields.seed = DeriveSeed(a.seed, "fields");
  opts.fields.corrupt_queries = a.outlier_fraction > 0.0 || a.pixel_sigma > 0.0;
  opts.fields.query_noise = Noise(a.outlier_fraction, a.pixel_sigma);
  opts.fields.corrupt_map = a.map_outlier_fraction > 0.0 || a.map_pixel_sigma > 0.0;
  opts.fields.map_noise = Noise(a.map_outlier_fraction, a.map_pixel_sigma);
  PrepareOutput((fs::path(a.out) / "views.json").string());

  const Scene scene = MakeScene(spec);
  ExportScene(scene, opts, a.out);
  size_t fields = 0;
  for (const auto& e : fs::directory_iterator(fs::path(a.out) / "fields")) fields += e.is_regular_file();
  std::cout << json{{"database", scene.num_database()}, {"queries", scene.num_queries()}, {"fields", fields}}.dump()
            << "\n";
  return 0;
}

int BuildMapCommand(const BuildMapArgs& a) {
  const std::string fields = a.fields.empty() ? (fs::path(a.scene) / "fields").string() : a.fields;
  RequireFile((fs::path(a.scene) / "views.json").string(), "scene");
  RequireDir(fields, "fields");
  MapBuildConfig cfg;
  cfg.triangulation.k_map = a.k_map;
  cfg.triangulation.confidence_threshold = a.confidence_threshold;
  cfg.triangulation.angular_threshold_rad = a.angular_threshold_deg * kPi / 180.0;
  cfg.triangulation.min_inliers = a.min_inliers;
  cfg.depth_bits = a.depth_bits;
  cfg.d_min = a.d_min;
  cfg.d_max = a.d_max;
  cfg.rgb_codec = a.rgb_codec;
  cfg.rgb_quality = a.rgb_quality;
  cfg.Validate();
  PrepareOutput((fs::path(a.out) / "manifest.json").string());

  SceneExport exported = ReadSceneExport(a.scene);
  if (cfg.rgb_codec != "png") {
    for (MapInput& in : exported.database) in.rgb = EncodeRgb(DecodePng(in.rgb), cfg.rgb_codec, cfg.rgb_quality);
  }
  std::vector<EntryBuildReport> report;
  const Map map = BuildMap(exported.database, DirectoryFieldLoader(fields), cfg, &report);
  WriteMap(map, a.out);
  for (const EntryBuildReport& r : report) {
    std::cout << json{{"id", r.id}, {"valid_fraction", r.valid_fraction}, {"covisible", r.covisible.size()}}.dump()
              << "\n";
  }
  return 0;
}

int Localize(const LocalizeArgs& a) {
  const std::string fields = a.fields.empty() ? (fs::path(a.queries) / "fields").string() : a.fields;
  RequireDir(a.map, "map");
  RequireFile((fs::path(a.queries) / "views.json").string(), "query");
  RequireDir(fields, "fields");
  const LocalizerConfig cfg = LocalizerConfigFor(a);
  PrepareOutput(a.out);

  const Localizer localizer(ReadMap(a.map));
  const SceneExport exported = ReadSceneExport(a.queries);
  const auto results = LocalizeAll(localizer, exported.queries, DirectoryFieldLoader(fields), cfg);
  std::string text;
  size_t ok = 0;
  for (const LocalizeResult& r : results) {
    text += ResultRecord(r).dump() + "\n";
    ok += r.success();
  }
  WriteText(a.out, text);
  std::cout << json{{"queries", results.size()}, {"localized", ok}}.dump() << "\n";
  return 0;
}

int Eval(const EvalArgs& a) {
  RequireFile(a.results, "results");
  RequireFile(a.gt, "ground-truth");
  const std::vector<EvalThreshold> thresholds = ParseThresholds(a.thresholds);
  if (!a.out.empty()) PrepareOutput(a.out);

  const auto results = ReadResults(a.results);
  const auto gt = ReadPoses(a.gt);
  const EvalReport report = Evaluate(MatchGroundTruth(results, gt), thresholds);

  std::string csv = "# imloc eval v1\nthreshold_t_m,threshold_r_deg,recall\n";
  for (size_t t = 0; t < thresholds.size(); ++t) {
    std::printf("recall@(%s m, %s deg): %s\n", Num(thresholds[t].translation_m).c_str(),
                Num(thresholds[t].rotation_deg).c_str(), Num(report.recall[t]).c_str());
    csv += Num(thresholds[t].translation_m) + "," + Num(thresholds[t].rotation_deg) + "," + Num(report.recall[t]) +
           "\n";
  }
  std::printf("median rotation error: %s deg\nmedian translation error: %s m\nlocalized: %zu/%zu\n",
              Num(report.median_rotation_deg).c_str(), Num(report.median_translation_m).c_str(), report.num_success,
              report.num_queries);
  csv += "median_rotation_deg,," + Num(report.median_rotation_deg) + "\n";
  csv += "median_translation_m,," + Num(report.median_translation_m) + "\n";
  if (!a.out.empty()) WriteText(a.out, csv);
  return 0;
}

int CompressSweepCommand(const SweepArgs& a) {
  const LocalizeArgs& l = a.localize;
  const std::string fields = l.fields.empty() ? (fs::path(l.queries) / "fields").string() : l.fields;
  RequireDir(l.map, "map");
  RequireFile((fs::path(l.queries) / "views.json").string(), "query");
  RequireDir(fields, "fields");
  RequireFile(a.gt, "ground-truth");
  const LocalizerConfig cfg = LocalizerConfigFor(l);
  const std::vector<EvalThreshold> thresholds = ParseThresholds(a.thresholds);
  std::vector<SweepSetting> settings;
  if (!a.settings.empty()) {
    for (const std::string& s : a.settings) settings.push_back(ParseSweepSetting(s));
  } else {
    std::vector<std::string> codecs;
    for (const std::string& c : a.rgb_codecs) codecs.push_back(c == "keep" ? "" : c);
    settings = SweepGrid(a.strides, a.rgb_factors, codecs, a.rgb_qualities, a.depth_factors, a.depth_bits);
  }
  PrepareOutput(a.out);
  const std::string scratch = a.scratch.empty() ? a.out + ".maps" : a.scratch;

  const Map map = ReadMap(l.map);
  const SceneExport exported = ReadSceneExport(l.queries);
  const auto gt = ReadPoses(a.gt);
  const auto rows = CompressSweep(map, settings, exported.queries, gt, DirectoryFieldLoader(fields), cfg, thresholds,
                                  scratch);

  std::string csv =
      "# imloc compress-sweep v1\nlabel,keyframe_stride,rgb_factor,rgb_codec,rgb_quality,depth_factor,depth_bits,ok,"
      "entries,bytes_rgb,bytes_depth,bytes_descriptors,bytes_manifest,bytes_other,bytes_total";
  for (const EvalThreshold& t : thresholds) csv += ",recall_" + ThresholdName(t);
  csv += ",median_rotation_deg,median_translation_m,error\n";
  size_t ok = 0;
  for (const SweepRow& row : rows) {
    const ReduceParams& p = row.setting.params;
    csv += row.setting.Label() + "," + std::to_string(p.keyframe_stride) + "," + std::to_string(p.rgb_factor) + "," +
           (p.rgb_codec.empty() ? map.rgb_codec : p.rgb_codec) + "," +
           std::to_string(p.rgb_quality < 0 ? map.rgb_quality : p.rgb_quality) + "," + std::to_string(p.depth_factor) +
           "," + std::to_string(p.depth_bits) + "," + (row.ok ? "1" : "0") + "," + std::to_string(row.entries);
    for (uint64_t b : {row.bytes.rgb, row.bytes.depth, row.bytes.descriptors, row.bytes.manifest, row.bytes.other,
                       row.bytes.total}) {
      csv += "," + std::to_string(b);
    }
    for (size_t t = 0; t < thresholds.size(); ++t) csv += "," + (row.ok ? Num(row.report.recall[t]) : "");
    csv += "," + (row.ok ? Num(row.report.median_rotation_deg) : "") + "," +
           (row.ok ? Num(row.report.median_translation_m) : "") + "," + CsvField(row.error) + "\n";
    ok += row.ok;
  }
  WriteText(a.out, csv);
  std::cout << json{{"settings", rows.size()}, {"ok", ok}}.dump() << "\n";
  return 0;
}

int SynthBench(const BenchArgs& a) {
  AcceptanceOptions opts;
  opts.seed = a.seed;
  opts.work_dir = a.work;
  opts.only = a.only;
  opts.localizer.ransac.reproj_threshold = a.reproj_threshold;
  std::error_code ec;
  opts.cli_path = fs::read_symlink("/proc/self/exe", ec).string();
  if (!a.out.empty()) PrepareOutput(a.out);
  fs::create_directories(opts.work_dir, ec);
  if (ec) throw IoError(a.work, "cannot create work directory: " + ec.message());

  const auto results = RunAcceptanceSuite(opts);
  std::string csv = "# imloc synth-bench v1\ncriterion,pass,detail\n";
  bool all = true;
  for (const CriterionResult& r : results) {
    std::printf("%s %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(), r.detail.c_str());
    csv += r.name + "," + (r.pass ? "1" : "0") + "," + CsvField(r.detail) + "\n";
    all &= r.pass;
  }
  if (!a.out.empty()) WriteText(a.out, csv);
  return all ? 0 : kExitFailure;
}

}  // namespace imloc::cli
