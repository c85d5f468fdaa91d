#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace imloc {

// Metric z-depth per pixel, row-major. A value of 0 marks an invalid pixel;
// every valid value is positive and finite.
struct DepthMap {
  int width = 0;
  int height = 0;
  std::vector<float> values;

  DepthMap() = default;
  DepthMap(int w, int h) : width(w), height(h), values(static_cast<size_t>(w) * h, 0.0f) {}

  size_t size() const { return values.size(); }
  float at(int col, int row) const { return values[static_cast<size_t>(row) * width + col]; }
  float& at(int col, int row) { return values[static_cast<size_t>(row) * width + col]; }
  bool valid(size_t i) const { return values[i] > 0.0f && std::isfinite(values[i]); }
  bool valid(int col, int row) const { return valid(static_cast<size_t>(row) * width + col); }

  double ValidFraction() const {
    if (values.empty()) return 0.0;
    size_t n = 0;
    for (size_t i = 0; i < values.size(); ++i) n += valid(i);
    return static_cast<double>(n) / static_cast<double>(values.size());
  }
};

}  // namespace imloc
