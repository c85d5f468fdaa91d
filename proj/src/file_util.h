#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "imloc/errors.h"

namespace imloc::internal {

inline std::vector<uint8_t> ReadFileBytes(const std::filesystem::path& path, const std::string& subject) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(subject, "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(subject, "failed reading " + path.string());
  return bytes;
}

inline void WriteFileBytes(const std::filesystem::path& path, std::span<const uint8_t> bytes,
                           const std::string& subject) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(subject, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(subject, "failed writing " + path.string());
}

inline void WriteFileText(const std::filesystem::path& path, const std::string& text, const std::string& subject) {
  WriteFileBytes(path, std::span(reinterpret_cast<const uint8_t*>(text.data()), text.size()), subject);
}

}  // namespace imloc::internal
