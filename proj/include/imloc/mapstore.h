#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "imloc/depth_map.h"
#include "imloc/geometry.h"
#include "imloc/retrieval.h"

namespace imloc {

// Log-space depth codes. Code 0 marks an invalid pixel; codes 1..2^bits-1
// are levels spaced uniformly in ln(depth) between d_min and d_max.
struct QuantizedDepthMap {
  int width = 0;
  int height = 0;
  int bits = 8;
  double d_min = 0.25;
  double d_max = 128.0;
  std::vector<uint16_t> codes;  // row-major

  int max_code() const { return (1 << bits) - 1; }
  size_t size() const { return codes.size(); }

  // Throws ValidationError for bad ranges, sizes or out-of-range codes.
  void Validate() const;
};

inline constexpr int kMinDepthBits = 5;
inline constexpr int kMaxDepthBits = 16;

// Single-value forms; invalid or non-positive depth maps to code 0.
uint16_t QuantizeValue(double depth, double d_min, double d_max, int bits);
double DequantizeCode(uint16_t code, double d_min, double d_max, int bits);

QuantizedDepthMap QuantizeDepth(const DepthMap& depth, double d_min = 0.25, double d_max = 128.0, int bits = 8);
DepthMap DequantizeDepth(const QuantizedDepthMap& q);

// Worst-case relative round-trip error for valid depths inside the range:
// exp(ln(d_max / d_min) / (2 * (levels - 1))) - 1.
double QuantizationErrorBound(double d_min, double d_max, int bits);

struct MapEntry {
  std::string id;
  Pose pose;
  // Camera of the full-resolution image. Depth and RGB may be stored at a
  // coarser grid covering the same field of view.
  CameraIntrinsics intrinsics;
  std::vector<uint8_t> rgb;  // encoded with the map's codec
  QuantizedDepthMap depth;
  std::vector<float> descriptor;

  CameraIntrinsics DepthIntrinsics() const { return intrinsics.Resized(depth.width, depth.height); }
};

struct Map {
  std::string rgb_codec = "png";
  int rgb_quality = 90;
  int descriptor_dim = 0;
  std::vector<MapEntry> entries;

  // Index of `id` or -1.
  int Find(const std::string& id) const;
  DescriptorIndex BuildIndex() const;
  // Throws ValidationError on duplicate or unsafe ids, descriptor size
  // mismatch, or inconsistent depth quantization across entries.
  void Validate() const;
};

inline constexpr int kMapFormatVersion = 1;

// IMLD layout, little-endian: "IMLD" | u32 dim | u32 count | count*dim f16.
std::vector<uint8_t> SerializeDescriptors(std::span<const std::vector<float>> descriptors, int dim);
std::vector<std::vector<float>> ParseDescriptors(std::span<const uint8_t> bytes, int* dim = nullptr);

// Round to half precision and back.
float RoundToHalf(float x);

// Map directory:
//   manifest.json       entries, poses, intrinsics, codecs
//   rgb/<id>.<ext>      encoded RGB
//   depth/<id>.png      depth codes, 8-bit gray (16-bit above 8 bits)
//   descriptors.bin     IMLD, omitted for an empty map
// Existing map files in `dir` are replaced.
void WriteMap(const Map& map, const std::filesystem::path& dir);
// Throws IoError naming the entry (or file) that is missing or corrupt.
Map ReadMap(const std::filesystem::path& dir);

struct ReduceParams {
  int keyframe_stride = 1;
  int rgb_factor = 1;
  std::string rgb_codec;  // empty keeps the map's codec
  int rgb_quality = -1;   // < 0 keeps the map's quality
  int depth_factor = 1;
  int depth_bits = 8;

  void Validate() const;
};

// Keeps every k-th entry in lexicographic id order, box-downsamples RGB,
// takes the valid depth sample nearest each block centre and requantizes.
// The depth grid must be divisible by the depth factor (ConfigError).
Map ReduceMap(const Map& map, const ReduceParams& params);

struct MapStats {
  uint64_t rgb = 0;
  uint64_t depth = 0;
  uint64_t descriptors = 0;
  uint64_t manifest = 0;
  uint64_t other = 0;
  uint64_t total = 0;
};

MapStats ComputeMapStats(const std::filesystem::path& dir);

}  // namespace imloc
