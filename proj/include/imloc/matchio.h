#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace imloc {

// One cell of a correspondence field. confidence == 0 means "no match", in
// which case the target may be NaN.
struct MatchCell {
  float target_x = 0.0f;
  float target_y = 0.0f;
  float confidence = 0.0f;
};

// Dense (or zero-padded sparse) matches from a source image to a target
// image, on a grid that may be coarser or finer than the source image.
//
// Grid cell (col, row) covers the source pixel
//   ((col + 0.5) * scale_x - 0.5, (row + 0.5) * scale_y - 0.5),
// with pixel centers at integer coordinates. Targets are in target-image
// pixels using the same convention.
struct CorrespondenceField {
  std::string source_id;
  std::string target_id;
  uint32_t grid_width = 0;
  uint32_t grid_height = 0;
  double scale_x = 1.0;
  double scale_y = 1.0;
  std::vector<MatchCell> cells;  // row-major, grid_width * grid_height

  CorrespondenceField() = default;
  CorrespondenceField(std::string source, std::string target, uint32_t width, uint32_t height,
                      double sx = 1.0, double sy = 1.0);

  MatchCell& at(uint32_t col, uint32_t row) { return cells[static_cast<size_t>(row) * grid_width + col]; }
  const MatchCell& at(uint32_t col, uint32_t row) const {
    return cells[static_cast<size_t>(row) * grid_width + col];
  }

  // Source-image pixel of a grid cell.
  Eigen::Vector2d SourcePixel(uint32_t col, uint32_t row) const {
    return {(col + 0.5) * scale_x - 0.5, (row + 0.5) * scale_y - 0.5};
  }
  Eigen::Vector2d SourcePixel(size_t cell_index) const {
    return SourcePixel(static_cast<uint32_t>(cell_index % grid_width), static_cast<uint32_t>(cell_index / grid_width));
  }

  // Throws ValidationError if any invariant is broken.
  void Validate() const;
};

struct FilteredMatch {
  Eigen::Vector2d source_pixel;
  Eigen::Vector2d target_pixel;
  double confidence = 0.0;
  uint32_t cell = 0;  // row-major cell index
};

// IMLC binary layout, little-endian:
//   "IMLC" | u32 version=1 | u32 len + utf8 source id | u32 len + utf8 target id
//   | u32 grid_w | u32 grid_h | f64 scale_x | f64 scale_y
//   | grid_w*grid_h x (f32 target_x, f32 target_y, f32 confidence), row-major
inline constexpr uint32_t kFieldFormatVersion = 1;
inline constexpr size_t kFieldRecordBytes = 12;

std::vector<uint8_t> SerializeField(const CorrespondenceField& field);
// Throws ParseError (bad magic / version / truncation / invalid values) with
// the failing byte offset.
CorrespondenceField ParseField(std::span<const uint8_t> bytes);

void WriteField(const CorrespondenceField& field, const std::filesystem::path& path);
CorrespondenceField ReadField(const std::filesystem::path& path);

// Conventional file name of the field from `source` to `target`.
std::string FieldFileName(const std::string& source, const std::string& target);

// Returns the field from `source` to `target`. Implementations must be safe
// to call from several threads and throw IoError naming the pair on failure.
using FieldLoader = std::function<CorrespondenceField(const std::string& source, const std::string& target)>;

// Loads <dir>/FieldFileName(source, target) and checks its ids.
FieldLoader DirectoryFieldLoader(const std::filesystem::path& dir);

// Cells with confidence >= threshold, in row-major order. Zero-confidence
// cells are never emitted, even for threshold 0.
std::vector<FilteredMatch> FilterMatches(const CorrespondenceField& field, double threshold);

}  // namespace imloc
