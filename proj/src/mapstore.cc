#include "imloc/mapstore.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include <Eigen/Core>
#include <json.hpp>

#include "file_util.h"
#include "json_util.h"
#include "imloc/errors.h"
#include "imloc/image_codec.h"

namespace imloc {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using internal::IntrinsicsFromJson;
using internal::IntrinsicsJson;
using internal::PoseFromJson;
using internal::PoseJson;

constexpr char kDescriptorMagic[4] = {'I', 'M', 'L', 'D'};
constexpr size_t kDescriptorHeader = 12;

void CheckRange(double d_min, double d_max, int bits) {
  if (!(d_min > 0.0) || !(d_max > d_min) || !std::isfinite(d_max)) {
    throw ValidationError("depth range must satisfy 0 < d_min < d_max");
  }
  if (bits < kMinDepthBits || bits > kMaxDepthBits) {
    throw ValidationError("depth bits must lie in [" + std::to_string(kMinDepthBits) + ", " +
                          std::to_string(kMaxDepthBits) + "], got " + std::to_string(bits));
  }
}

bool SafeId(const std::string& id) {
  if (id.empty() || id[0] == '.' || id.size() > 200) return false;
  return std::all_of(id.begin(), id.end(), [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '-' ||
           c == '.';
  });
}

void PutU32(std::vector<uint8_t>* out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t GetU32(std::span<const uint8_t> b, size_t at) {
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[at + i]) << (8 * i);
  return v;
}

uint16_t HalfBits(float x) { return Eigen::numext::bit_cast<uint16_t>(Eigen::half(x)); }
float HalfValue(uint16_t bits) { return static_cast<float>(Eigen::numext::bit_cast<Eigen::half>(bits)); }

std::vector<uint8_t> EncodeDepthCodes(const QuantizedDepthMap& q) {
  Image im;
  im.width = q.width;
  im.height = q.height;
  im.channels = 1;
  if (q.bits > 8) {
    im.pixels16 = q.codes;
  } else {
    im.pixels.resize(q.codes.size());
    for (size_t i = 0; i < q.codes.size(); ++i) im.pixels[i] = static_cast<uint8_t>(q.codes[i]);
  }
  return EncodePng(im);
}

std::string RgbPath(const std::string& id, const std::string& codec) { return "rgb/" + id + "." + CodecExtension(codec); }
std::string DepthPath(const std::string& id) { return "depth/" + id + ".png"; }

// The coarse grid must tile the fine one exactly so that the coarse depth
// camera (intrinsics resized to the new grid) samples the same rays.
QuantizedDepthMap DownsampleDepth(const QuantizedDepthMap& q, int factor, int bits) {
  if (q.width % factor != 0 || q.height % factor != 0) {
    throw ConfigError("depth grid " + std::to_string(q.width) + "x" + std::to_string(q.height) +
                      " is not divisible by the depth factor " + std::to_string(factor));
  }
  QuantizedDepthMap out;
  out.width = q.width / factor;
  out.height = q.height / factor;
  out.bits = bits;
  out.d_min = q.d_min;
  out.d_max = q.d_max;
  out.codes.assign(static_cast<size_t>(out.width) * out.height, 0);
  for (int row = 0; row < out.height; ++row) {
    for (int col = 0; col < out.width; ++col) {
      const double cx = (col + 0.5) * factor - 0.5;
      const double cy = (row + 0.5) * factor - 0.5;
      double best = std::numeric_limits<double>::infinity();
      uint16_t code = 0;
      for (int y = row * factor; y < (row + 1) * factor; ++y) {
        for (int x = col * factor; x < (col + 1) * factor; ++x) {
          const uint16_t c = q.codes[static_cast<size_t>(y) * q.width + x];
          if (c == 0) continue;
          const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          if (d2 < best) {
            best = d2;
            code = c;
          }
        }
      }
      if (code != 0) {
        code = bits == q.bits ? code
                              : QuantizeValue(DequantizeCode(code, q.d_min, q.d_max, q.bits), q.d_min, q.d_max, bits);
      }
      out.codes[static_cast<size_t>(row) * out.width + col] = code;
    }
  }
  return out;
}

}  // namespace

void QuantizedDepthMap::Validate() const {
  CheckRange(d_min, d_max, bits);
  if (width <= 0 || height <= 0) throw ValidationError("quantized depth map has zero area");
  if (codes.size() != static_cast<size_t>(width) * height) throw ValidationError("depth code count mismatch");
  const int top = max_code();
  for (uint16_t c : codes) {
    if (c > top) throw ValidationError("depth code " + std::to_string(c) + " exceeds " + std::to_string(top));
  }
}

uint16_t QuantizeValue(double depth, double d_min, double d_max, int bits) {
  if (!(depth > 0.0) || !std::isfinite(depth)) return 0;
  const double steps = static_cast<double>((1 << bits) - 2);
  const double clamped = std::clamp(depth, d_min, d_max);
  const double u = (std::log(clamped) - std::log(d_min)) / (std::log(d_max) - std::log(d_min));
  return static_cast<uint16_t>(1 + std::lround(u * steps));
}

double DequantizeCode(uint16_t code, double d_min, double d_max, int bits) {
  if (code == 0) return 0.0;
  const double steps = static_cast<double>((1 << bits) - 2);
  return d_min * std::exp(((code - 1) / steps) * std::log(d_max / d_min));
}

QuantizedDepthMap QuantizeDepth(const DepthMap& depth, double d_min, double d_max, int bits) {
  CheckRange(d_min, d_max, bits);
  QuantizedDepthMap q;
  q.width = depth.width;
  q.height = depth.height;
  q.bits = bits;
  q.d_min = d_min;
  q.d_max = d_max;
  q.codes.resize(depth.size());
  for (size_t i = 0; i < depth.size(); ++i) {
    q.codes[i] = depth.valid(i) ? QuantizeValue(depth.values[i], d_min, d_max, bits) : 0;
  }
  return q;
}

DepthMap DequantizeDepth(const QuantizedDepthMap& q) {
  DepthMap d(q.width, q.height);
  for (size_t i = 0; i < q.codes.size(); ++i) {
    d.values[i] = static_cast<float>(DequantizeCode(q.codes[i], q.d_min, q.d_max, q.bits));
  }
  return d;
}

double QuantizationErrorBound(double d_min, double d_max, int bits) {
  const double levels = static_cast<double>((1 << bits) - 1);
  return std::exp(std::log(d_max / d_min) / (2.0 * (levels - 1.0))) - 1.0;
}

int Map::Find(const std::string& id) const {
  for (size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

DescriptorIndex Map::BuildIndex() const {
  DescriptorIndex index(std::max(descriptor_dim, 1));
  for (const MapEntry& e : entries) index.Add(e.id, e.descriptor);
  return index;
}

void Map::Validate() const {
  CheckRgbCodec(rgb_codec);
  std::set<std::string> seen;
  for (const MapEntry& e : entries) {
    if (!SafeId(e.id)) throw ValidationError("map entry id '" + e.id + "' is not a safe file name");
    if (!seen.insert(e.id).second) throw ValidationError("duplicate map entry id '" + e.id + "'");
    e.intrinsics.Validate();
    e.depth.Validate();
    if (e.rgb.empty()) throw ValidationError("map entry '" + e.id + "' has no RGB payload");
    if (static_cast<int>(e.descriptor.size()) != descriptor_dim) {
      throw ValidationError("map entry '" + e.id + "' descriptor has dimension " + std::to_string(e.descriptor.size()) +
                            ", map expects " + std::to_string(descriptor_dim));
    }
    const QuantizedDepthMap& first = entries.front().depth;
    if (e.depth.bits != first.bits || e.depth.d_min != first.d_min || e.depth.d_max != first.d_max) {
      throw ValidationError("map entry '" + e.id + "' uses a different depth quantization");
    }
  }
  if (!entries.empty() && descriptor_dim <= 0) throw ValidationError("descriptor dimension must be positive");
}

float RoundToHalf(float x) { return HalfValue(HalfBits(x)); }

std::vector<uint8_t> SerializeDescriptors(std::span<const std::vector<float>> descriptors, int dim) {
  if (dim <= 0) throw ValidationError("descriptor dimension must be positive");
  std::vector<uint8_t> out(kDescriptorMagic, kDescriptorMagic + 4);
  PutU32(&out, static_cast<uint32_t>(dim));
  PutU32(&out, static_cast<uint32_t>(descriptors.size()));
  out.reserve(kDescriptorHeader + 2 * descriptors.size() * dim);
  for (const auto& d : descriptors) {
    if (static_cast<int>(d.size()) != dim) throw ValidationError("descriptor dimension mismatch");
    for (float x : d) {
      const uint16_t h = HalfBits(x);
      out.push_back(static_cast<uint8_t>(h & 0xff));
      out.push_back(static_cast<uint8_t>(h >> 8));
    }
  }
  return out;
}

std::vector<std::vector<float>> ParseDescriptors(std::span<const uint8_t> bytes, int* dim_out) {
  if (bytes.size() < 4) throw ParseError(ParseError::Kind::kTruncated, 0, "truncated descriptor file: expected magic");
  if (!std::equal(kDescriptorMagic, kDescriptorMagic + 4, bytes.begin())) {
    throw ParseError(ParseError::Kind::kBadMagic, 0, "descriptor file does not start with IMLD");
  }
  if (bytes.size() < kDescriptorHeader) {
    throw ParseError(ParseError::Kind::kTruncated, 4, "truncated descriptor file: expected header");
  }
  const uint32_t dim = GetU32(bytes, 4);
  const uint32_t count = GetU32(bytes, 8);
  if (dim == 0) throw ParseError(ParseError::Kind::kInvalidValue, 4, "descriptor dimension is zero");
  const uint64_t payload = 2ull * dim * count;
  if (bytes.size() - kDescriptorHeader < payload) {
    throw ParseError(ParseError::Kind::kTruncated, bytes.size(), "truncated descriptor file: expected payload");
  }
  if (bytes.size() - kDescriptorHeader > payload) {
    throw ParseError(ParseError::Kind::kTrailingBytes, kDescriptorHeader + payload, "trailing bytes in descriptor file");
  }
  std::vector<std::vector<float>> out(count, std::vector<float>(dim));
  size_t at = kDescriptorHeader;
  for (auto& d : out) {
    for (float& x : d) {
      x = HalfValue(static_cast<uint16_t>(bytes[at] | (bytes[at + 1] << 8)));
      at += 2;
    }
  }
  if (dim_out) *dim_out = static_cast<int>(dim);
  return out;
}

void WriteMap(const Map& map, const fs::path& dir) {
  map.Validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError(dir.string(), "cannot create map directory " + dir.string() + ": " + ec.message());
  for (const char* stale : {"rgb", "depth", "descriptors.bin", "manifest.json"}) fs::remove_all(dir / stale, ec);
  fs::create_directories(dir / "rgb");
  fs::create_directories(dir / "depth");

  json entries = json::array();
  std::vector<std::vector<float>> descriptors;
  for (size_t i = 0; i < map.entries.size(); ++i) {
    const MapEntry& e = map.entries[i];
    const std::string rgb_path = RgbPath(e.id, map.rgb_codec);
    const std::string depth_path = DepthPath(e.id);
    internal::WriteFileBytes(dir / rgb_path, e.rgb, e.id);
    internal::WriteFileBytes(dir / depth_path, EncodeDepthCodes(e.depth), e.id);
    descriptors.push_back(e.descriptor);
    json j = PoseJson(e.pose);
    j["id"] = e.id;
    j["intrinsics"] = IntrinsicsJson(e.intrinsics);
    j["rgb"] = rgb_path;
    j["depth"] = depth_path;
    j["depth_width"] = e.depth.width;
    j["depth_height"] = e.depth.height;
    j["descriptor_index"] = i;
    entries.push_back(std::move(j));
  }
  const QuantizedDepthMap defaults;
  const QuantizedDepthMap& q = map.entries.empty() ? defaults : map.entries.front().depth;
  json manifest = {
      {"format_version", kMapFormatVersion},
      {"rgb_codec", map.rgb_codec},
      {"rgb_quality", map.rgb_quality},
      {"descriptor_dim", map.descriptor_dim},
      {"descriptor_count", map.entries.size()},
      {"depth_codec", "png"},
      {"depth_quantization", {{"bits", q.bits}, {"d_min", q.d_min}, {"d_max", q.d_max}}},
      {"entries", std::move(entries)},
  };
  if (!descriptors.empty()) {
    internal::WriteFileBytes(dir / "descriptors.bin", SerializeDescriptors(descriptors, map.descriptor_dim),
                             "descriptors.bin");
  }
  internal::WriteFileText(dir / "manifest.json", manifest.dump(1) + "\n", "manifest.json");
}

Map ReadMap(const fs::path& dir) {
  const std::vector<uint8_t> text = internal::ReadFileBytes(dir / "manifest.json", "manifest.json");
  json manifest;
  Map map;
  int bits = 8;
  double d_min = 0.25, d_max = 128.0;
  size_t descriptor_count = 0;
  try {
    manifest = json::parse(text.begin(), text.end());
    const int version = manifest.at("format_version").get<int>();
    if (version != kMapFormatVersion) {
      throw IoError("manifest.json", "unsupported map format version " + std::to_string(version));
    }
    map.rgb_codec = manifest.at("rgb_codec").get<std::string>();
    map.rgb_quality = manifest.at("rgb_quality").get<int>();
    map.descriptor_dim = manifest.at("descriptor_dim").get<int>();
    descriptor_count = manifest.at("descriptor_count").get<size_t>();
    const json& dq = manifest.at("depth_quantization");
    bits = dq.at("bits").get<int>();
    d_min = dq.at("d_min").get<double>();
    d_max = dq.at("d_max").get<double>();
    CheckRgbCodec(map.rgb_codec);
    CheckRange(d_min, d_max, bits);
  } catch (const json::exception& e) {
    throw IoError("manifest.json", std::string("malformed manifest.json: ") + e.what());
  } catch (const ValidationError& e) {
    throw IoError("manifest.json", std::string("invalid manifest.json: ") + e.what());
  } catch (const ConfigError& e) {
    throw IoError("manifest.json", std::string("invalid manifest.json: ") + e.what());
  }
  const json& entries = manifest.at("entries");
  if (!entries.is_array() || entries.size() != descriptor_count) {
    throw IoError("manifest.json", "manifest entry count does not match descriptor count");
  }

  std::vector<std::vector<float>> descriptors;
  if (descriptor_count > 0) {
    const auto bytes = internal::ReadFileBytes(dir / "descriptors.bin", "descriptors.bin");
    int dim = 0;
    try {
      descriptors = ParseDescriptors(bytes, &dim);
    } catch (const ParseError& e) {
      throw IoError("descriptors.bin", std::string("corrupt descriptors.bin: ") + e.what());
    }
    if (dim != map.descriptor_dim || descriptors.size() != descriptor_count) {
      throw IoError("descriptors.bin", "descriptors.bin header disagrees with manifest.json");
    }
  }

  std::set<std::string> seen;
  for (const json& j : entries) {
    MapEntry e;
    size_t descriptor_index = 0;
    std::string rgb_path, depth_path;
    int depth_width = 0, depth_height = 0;
    try {
      e.id = j.at("id").get<std::string>();
      e.pose = PoseFromJson(j);
      e.intrinsics = IntrinsicsFromJson(j.at("intrinsics"));
      rgb_path = j.at("rgb").get<std::string>();
      depth_path = j.at("depth").get<std::string>();
      depth_width = j.at("depth_width").get<int>();
      depth_height = j.at("depth_height").get<int>();
      descriptor_index = j.at("descriptor_index").get<size_t>();
    } catch (const json::exception& ex) {
      throw IoError(e.id.empty() ? "manifest.json" : e.id, std::string("malformed manifest entry: ") + ex.what());
    }
    if (!SafeId(e.id)) throw IoError(e.id, "map entry id '" + e.id + "' is not a safe file name");
    if (!seen.insert(e.id).second) throw ValidationError("duplicate map entry id '" + e.id + "' in manifest.json");
    if (rgb_path != RgbPath(e.id, map.rgb_codec) || depth_path != DepthPath(e.id)) {
      throw IoError(e.id, "entry '" + e.id + "' references unexpected file names");
    }
    if (descriptor_index >= descriptors.size()) throw IoError(e.id, "entry '" + e.id + "' descriptor index out of range");
    e.descriptor = descriptors[descriptor_index];

    e.rgb = internal::ReadFileBytes(dir / rgb_path, e.id);
    const auto depth_bytes = internal::ReadFileBytes(dir / depth_path, e.id);
    try {
      e.intrinsics.Validate();
      DecodeRgb(e.rgb, map.rgb_codec);
      const Image im = DecodePng(depth_bytes);
      if (im.channels != 1 || im.is16() != (bits > 8)) throw ValidationError("depth image has the wrong layout");
      if (im.width != depth_width || im.height != depth_height) {
        throw ValidationError("depth image size disagrees with manifest.json");
      }
      e.depth.width = im.width;
      e.depth.height = im.height;
      e.depth.bits = bits;
      e.depth.d_min = d_min;
      e.depth.d_max = d_max;
      if (im.is16()) {
        e.depth.codes = im.pixels16;
      } else {
        e.depth.codes.assign(im.pixels.begin(), im.pixels.end());
      }
      e.depth.Validate();
    } catch (const ValidationError& ex) {
      throw IoError(e.id, "entry '" + e.id + "': " + ex.what());
    }
    map.entries.push_back(std::move(e));
  }
  return map;
}

void ReduceParams::Validate() const {
  if (keyframe_stride < 1) throw ConfigError("keyframe stride must be at least 1");
  if (rgb_factor < 1 || depth_factor < 1) throw ConfigError("resolution factors must be at least 1");
  if (depth_bits < kMinDepthBits || depth_bits > kMaxDepthBits) {
    throw ConfigError("depth bits must lie in [" + std::to_string(kMinDepthBits) + ", " +
                      std::to_string(kMaxDepthBits) + "]");
  }
  if (!rgb_codec.empty()) CheckRgbCodec(rgb_codec);
  if (rgb_quality > 100) throw ConfigError("RGB quality must lie in [1, 100]");
}

Map ReduceMap(const Map& map, const ReduceParams& params) {
  params.Validate();
  Map out;
  out.rgb_codec = params.rgb_codec.empty() ? map.rgb_codec : params.rgb_codec;
  out.rgb_quality = params.rgb_quality < 0 ? map.rgb_quality : params.rgb_quality;
  out.descriptor_dim = map.descriptor_dim;
  const bool reencode = params.rgb_factor != 1 || out.rgb_codec != map.rgb_codec ||
                        (out.rgb_codec != "png" && out.rgb_quality != map.rgb_quality);

  std::vector<size_t> order(map.entries.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return map.entries[a].id < map.entries[b].id; });
  for (size_t rank = 0; rank < order.size(); rank += params.keyframe_stride) {
    const MapEntry& src = map.entries[order[rank]];
    MapEntry e;
    e.id = src.id;
    e.pose = src.pose;
    e.intrinsics = src.intrinsics;
    e.descriptor = src.descriptor;
    if (reencode) {
      const Image rgb = DownsampleBox(DecodeRgb(src.rgb, map.rgb_codec), params.rgb_factor);
      e.rgb = EncodeRgb(rgb, out.rgb_codec, out.rgb_quality);
    } else {
      e.rgb = src.rgb;
    }
    e.depth = DownsampleDepth(src.depth, params.depth_factor, params.depth_bits);
    out.entries.push_back(std::move(e));
  }
  return out;
}

MapStats ComputeMapStats(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError(dir.string(), "map directory " + dir.string() + " does not exist");
  MapStats s;
  for (const auto& item : fs::recursive_directory_iterator(dir)) {
    if (!item.is_regular_file()) continue;
    const uint64_t bytes = item.file_size();
    const fs::path rel = fs::relative(item.path(), dir);
    const std::string top = rel.begin()->string();
    if (top == "rgb") {
      s.rgb += bytes;
    } else if (top == "depth") {
      s.depth += bytes;
    } else if (rel == "descriptors.bin") {
      s.descriptors += bytes;
    } else if (rel == "manifest.json") {
      s.manifest += bytes;
    } else {
      s.other += bytes;
    }
    s.total += bytes;
  }
  return s;
}

}  // namespace imloc
