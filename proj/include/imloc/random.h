#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace imloc {

// Deterministic random source. The distributions are implemented here rather
// than taken from <random> so that streams are identical across standard
// libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). n must be positive.
  uint64_t index(uint64_t n);

  // Standard normal via Box-Muller (one value per call).
  double normal();

 private:
  std::mt19937_64 engine_;
};

// FNV-1a 64-bit hash of a task name.
uint64_t HashName(std::string_view name);

// Per-task seed: task-name hash XOR the global seed.
inline uint64_t DeriveSeed(uint64_t seed, std::string_view task) { return HashName(task) ^ seed; }

}  // namespace imloc
