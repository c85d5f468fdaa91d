#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace imloc::cli {

inline constexpr int kExitFailure = 1;  // synth-bench: a criterion failed
inline constexpr int kExitError = 2;    // systemic error, one JSON line on stderr

struct SynthExportArgs {
  std::string out;
  uint64_t seed = 0;
  std::string scene = "level";  // level | ring | orbit | tilted | surfels
  int cameras = 6;
  double baseline = -1.0;  // < 0 keeps the scene default
  int queries = 50;
  double outlier_fraction = 0.0;
  double pixel_sigma = 0.0;
  double map_outlier_fraction = 0.0;
  double map_pixel_sigma = 0.0;
  int k_map = 50;
  int k_loc = 10;
};

struct BuildMapArgs {
  std::string scene;
  std::string fields;  // default <scene>/fields
  std::string out;
  int k_map = 50;
  int depth_bits = 8;
  double d_min = 0.25;
  double d_max = 128.0;
  std::string rgb_codec = "png";
  int rgb_quality = 90;
  double confidence_threshold = 0.05;
  double angular_threshold_deg = 2.0;
  int min_inliers = 4;
};

struct LocalizeArgs {
  std::string map;
  std::string queries;
  std::string fields;  // default <queries>/fields
  std::string out;
  uint64_t seed = 0;
  int k_loc = 10;
  double reproj_threshold = 12.0;
  double confidence_threshold = 0.05;
  int max_iterations = 100000;
};

struct EvalArgs {
  std::string results;
  std::string gt;
  std::string thresholds = "0.25:2,0.5:5,1:10";
  std::string out;  // optional CSV
};

struct SweepArgs {
  LocalizeArgs localize;  // out unused
  std::string gt;
  std::string out;
  std::string scratch;  // default <out>.maps
  std::string thresholds = "0.25:2,0.5:5,1:10";
  std::vector<int> strides{1};
  std::vector<int> rgb_factors{1};
  std::vector<std::string> rgb_codecs{"keep"};
  std::vector<int> rgb_qualities{-1};
  std::vector<int> depth_factors{1};
  std::vector<int> depth_bits{8};
  std::vector<std::string> settings;  // explicit settings replace the grid
};

struct BenchArgs {
  uint64_t seed = 0;
  std::string work = "imloc-bench";
  std::string out;
  std::vector<std::string> only;
  double reproj_threshold = 12.0;
};

int SynthExport(const SynthExportArgs& args);
int BuildMapCommand(const BuildMapArgs& args);
int Localize(const LocalizeArgs& args);
int Eval(const EvalArgs& args);
int CompressSweepCommand(const SweepArgs& args);
int SynthBench(const BenchArgs& args);

}  // namespace imloc::cli
