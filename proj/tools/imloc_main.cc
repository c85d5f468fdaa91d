#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "commands.h"
#include "imloc/errors.h"
#include "imloc/parallel.h"

namespace {

using namespace imloc;
using namespace imloc::cli;

const char* ParseKindName(ParseError::Kind k) {
  switch (k) {
    case ParseError::Kind::kBadMagic: return "bad_magic";
    case ParseError::Kind::kBadVersion: return "bad_version";
    case ParseError::Kind::kTruncated: return "truncated";
    case ParseError::Kind::kInvalidValue: return "invalid_value";
    case ParseError::Kind::kTrailingBytes: return "trailing_bytes";
  }
  return "unknown";
}

int ReportError(const std::string& kind, const std::string& message, const std::string& subject = "") {
  nlohmann::json j = {{"error", kind}, {"message", message}};
  if (!subject.empty()) j["subject"] = subject;
  std::cerr << j.dump() << std::endl;
  return kExitError;
}

void AddLocalizeOptions(CLI::App* cmd, LocalizeArgs& a) {
  cmd->add_option("--map", a.map, "Map directory")->required();
  cmd->add_option("--queries", a.queries, "Scene export with query views")->required();
  cmd->add_option("--fields", a.fields, "Correspondence field directory (default <queries>/fields)");
  cmd->add_option("--seed", a.seed, "RANSAC seed");
  cmd->add_option("--k-loc", a.k_loc, "Retrieved database entries per query");
  cmd->add_option("--reproj-threshold", a.reproj_threshold, "Inlier threshold in pixels");
  cmd->add_option("--confidence-threshold", a.confidence_threshold, "Minimum match confidence");
  cmd->add_option("--max-iterations", a.max_iterations, "RANSAC sample budget");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual localization against compact scene maps"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (0 = all cores)")->check(CLI::NonNegativeNumber);

  SynthExportArgs ex;
  auto* synth = app.add_subcommand("synth-export", "Render a synthetic scene with fields and ground truth");
  synth->add_option("--out", ex.out, "Output directory")->required();
  synth->add_option("--seed", ex.seed, "Scene seed");
  synth->add_option("--scene", ex.scene, "level, ring, orbit, tilted or surfels");
  synth->add_option("--cameras", ex.cameras, "Database views");
  synth->add_option("--baseline", ex.baseline, "Database ring radius");
  synth->add_option("--queries", ex.queries, "Query views");
  synth->add_option("--outlier-fraction", ex.outlier_fraction, "Outlier fraction in query fields");
  synth->add_option("--pixel-sigma", ex.pixel_sigma, "Gaussian target noise in query fields");
  synth->add_option("--map-outlier-fraction", ex.map_outlier_fraction, "Outlier fraction in mapping fields");
  synth->add_option("--map-pixel-sigma", ex.map_pixel_sigma, "Gaussian target noise in mapping fields");
  synth->add_option("--k-map", ex.k_map, "Covisible views per database entry");
  synth->add_option("--k-loc", ex.k_loc, "Retrieved entries per query");

  BuildMapArgs bm;
  auto* build = app.add_subcommand("build-map", "Triangulate depth and write a map");
  build->add_option("--scene", bm.scene, "Scene export directory")->required();
  build->add_option("--fields", bm.fields, "Correspondence field directory (default <scene>/fields)");
  build->add_option("--out", bm.out, "Map directory")->required();
  build->add_option("--k-map", bm.k_map, "Covisible views per entry");
  build->add_option("--depth-bits", bm.depth_bits, "Depth quantization bits");
  build->add_option("--d-min", bm.d_min, "Smallest representable depth");
  build->add_option("--d-max", bm.d_max, "Largest representable depth");
  build->add_option("--rgb-codec", bm.rgb_codec, "png or jpeg");
  build->add_option("--rgb-quality", bm.rgb_quality, "JPEG quality");
  build->add_option("--confidence-threshold", bm.confidence_threshold, "Minimum match confidence");
  build->add_option("--angular-threshold-deg", bm.angular_threshold_deg, "Ray inlier threshold");
  build->add_option("--min-inliers", bm.min_inliers, "Minimum supporting rays");

  LocalizeArgs lo;
  auto* loc = app.add_subcommand("localize", "Localize query views against a map");
  AddLocalizeOptions(loc, lo);
  loc->add_option("--out", lo.out, "Results file (JSON lines)")->required();

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Score localization results against ground truth");
  eval->add_option("--results", ev.results, "Results from localize")->required();
  eval->add_option("--gt", ev.gt, "Ground-truth poses")->required();
  eval->add_option("--thresholds", ev.thresholds, "t_m:r_deg pairs, comma separated");
  eval->add_option("--out", ev.out, "CSV report");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("compress-sweep", "Evaluate localization over map reductions");
  AddLocalizeOptions(sweep, sw.localize);
  sweep->add_option("--gt", sw.gt, "Ground-truth poses")->required();
  sweep->add_option("--out", sw.out, "CSV report")->required();
  sweep->add_option("--scratch", sw.scratch, "Directory for reduced maps (default <out>.maps)");
  sweep->add_option("--thresholds", sw.thresholds, "t_m:r_deg pairs, comma separated");
  sweep->add_option("--strides", sw.strides, "Keyframe strides")->delimiter(',');
  sweep->add_option("--rgb-factors", sw.rgb_factors, "RGB downsampling factors")->delimiter(',');
  sweep->add_option("--rgb-codecs", sw.rgb_codecs, "RGB codecs (keep, png, jpeg)")->delimiter(',');
  sweep->add_option("--rgb-qualities", sw.rgb_qualities, "JPEG qualities (-1 keeps)")->delimiter(',');
  sweep->add_option("--depth-factors", sw.depth_factors, "Depth downsampling factors")->delimiter(',');
  sweep->add_option("--depth-bits", sw.depth_bits, "Depth quantization bits")->delimiter(',');
  sweep->add_option("--setting", sw.settings, "Explicit setting such as k=2,bits=6 (repeatable)");

  BenchArgs be;
  auto* bench = app.add_subcommand("synth-bench", "Run the synthetic acceptance criteria");
  bench->add_option("--seed", be.seed, "Base seed");
  bench->add_option("--work", be.work, "Work directory");
  bench->add_option("--out", be.out, "CSV report");
  bench->add_option("--only", be.only, "Criteria to run")->delimiter(',');
  bench->add_option("--reproj-threshold", be.reproj_threshold, "Inlier threshold used by the pipeline criteria");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return ReportError("usage", e.what());
  }

  try {
    SetNumThreads(threads);
    if (*synth) return SynthExport(ex);
    if (*build) return BuildMapCommand(bm);
    if (*loc) return Localize(lo);
    if (*eval) return Eval(ev);
    if (*sweep) return CompressSweepCommand(sw);
    if (*bench) return SynthBench(be);
  } catch (const IoError& e) {
    return ReportError("io", e.what(), e.subject());
  } catch (const ParseError& e) {
    return ReportError(std::string("parse:") + ParseKindName(e.kind()), e.what());
  } catch (const ConfigError& e) {
    return ReportError("config", e.what());
  } catch (const ValidationError& e) {
    return ReportError("validation", e.what());
  } catch (const ContractViolation& e) {
    return ReportError("contract", e.what());
  } catch (const std::exception& e) {
    return ReportError("internal", e.what());
  }
  return kExitError;
}
