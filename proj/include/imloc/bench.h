#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "imloc/localizer.h"
#include "imloc/mapstore.h"
#include "imloc/scene_io.h"
#include "imloc/synth.h"

namespace imloc {

// Six fronto-parallel database cameras at z = 0 facing a plane whose depth is
// exactly an 8-bit level of the default range, stored as a float. Quantizing
// the triangulated depth is then lossless.
SceneSpec LevelAlignedSceneSpec(int num_queries, uint64_t seed);

// Localizes every query, in parallel over queries. Results keep query order.
// IoError and ValidationError from one query are recorded as kError.
std::vector<LocalizeResult> LocalizeAll(const Localizer& localizer, std::span<const QueryJob> queries,
                                        const FieldLoader& load, const LocalizerConfig& cfg);

// Pairs results with ground truth by query id. Throws ValidationError listing
// ids present on one side only.
std::vector<EvalSample> MatchGroundTruth(std::span<const LocalizeResult> results,
                                         std::span<const NamedPose> ground_truth);

struct SweepSetting {
  ReduceParams params;

  // Compact "k1-r1-keep-qkeep-d1-b8" form, used as the scratch directory name.
  std::string Label() const;
};

// Parses "k=2,rgb=2,codec=jpeg,q=80,depth=2,bits=6" style settings (any
// subset of keys, defaults otherwise). Throws ConfigError.
SweepSetting ParseSweepSetting(const std::string& text);

// Cartesian product of the listed values, in lexicographic order of
// (k, rgb factor, codec, quality, depth factor, bits).
std::vector<SweepSetting> SweepGrid(std::span<const int> strides, std::span<const int> rgb_factors,
                                    std::span<const std::string> codecs, std::span<const int> qualities,
                                    std::span<const int> depth_factors, std::span<const int> depth_bits);

struct SweepRow {
  SweepSetting setting;
  bool ok = false;
  std::string error;  // set when !ok
  MapStats bytes;
  size_t entries = 0;
  EvalReport report;
};

// Reduces `map`, writes it under scratch/<label>, reads it back, localizes
// every query against it and evaluates. Failures are recorded per row.
std::vector<SweepRow> CompressSweep(const Map& map, std::span<const SweepSetting> settings,
                                    std::span<const QueryJob> queries, std::span<const NamedPose> ground_truth,
                                    const FieldLoader& load, const LocalizerConfig& cfg,
                                    std::span<const EvalThreshold> thresholds, const std::filesystem::path& scratch);

struct CriterionResult {
  std::string name;
  bool pass = false;
  std::string detail;  // deterministic; no timings
  double seconds = 0.0;
};

struct AcceptanceOptions {
  uint64_t seed = 0;
  // The imloc executable, for the CLI determinism criterion. Empty skips it
  // (reported as failing).
  std::string cli_path;
  std::filesystem::path work_dir;
  // Used by the pipeline criteria. Not validated up front, so a bad value
  // shows up as failing criteria.
  LocalizerConfig localizer;
  // Criterion names to run; empty runs all.
  std::vector<std::string> only;
};

std::vector<std::string> AcceptanceCriteria();

std::vector<CriterionResult> RunAcceptanceSuite(const AcceptanceOptions& options);

}  // namespace imloc
