#include "imloc/matchio.h"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "imloc/errors.h"

namespace imloc {
namespace {

constexpr char kMagic[4] = {'I', 'M', 'L', 'C'};

class ByteWriter {
 public:
  explicit ByteWriter(std::vector<uint8_t>* out) : out_(out) {}

  void U32(uint32_t v) {
    for (int i = 0; i < 4; ++i) out_->push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void U64(uint64_t v) {
    for (int i = 0; i < 8; ++i) out_->push_back(static_cast<uint8_t>(v >> (8 * i)));
  }
  void F32(float v) { U32(std::bit_cast<uint32_t>(v)); }
  void F64(double v) { U64(std::bit_cast<uint64_t>(v)); }
  void Str(const std::string& s) {
    U32(static_cast<uint32_t>(s.size()));
    out_->insert(out_->end(), s.begin(), s.end());
  }

 private:
  std::vector<uint8_t>* out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const uint8_t> data) : data_(data) {}

  size_t offset() const { return pos_; }
  size_t remaining() const { return data_.size() - pos_; }

  void Need(size_t n, const char* what) {
    if (remaining() < n) {
      throw ParseError(ParseError::Kind::kTruncated, pos_, std::string("truncated field file: expected ") + what);
    }
  }
  uint32_t U32(const char* what) {
    Need(4, what);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  uint64_t U64(const char* what) {
    Need(8, what);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  float F32(const char* what) { return std::bit_cast<float>(U32(what)); }
  double F64(const char* what) { return std::bit_cast<double>(U64(what)); }
  std::string Str(const char* what) {
    const uint32_t n = U32(what);
    Need(n, what);
    std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const uint8_t> data_;
  size_t pos_ = 0;
};

}  // namespace

CorrespondenceField::CorrespondenceField(std::string source, std::string target, uint32_t width, uint32_t height,
                                         double sx, double sy)
    : source_id(std::move(source)),
      target_id(std::move(target)),
      grid_width(width),
      grid_height(height),
      scale_x(sx),
      scale_y(sy),
      cells(static_cast<size_t>(width) * height) {}

void CorrespondenceField::Validate() const {
  if (grid_width == 0 || grid_height == 0) {
    throw ValidationError("correspondence field grid must be non-empty");
  }
  if (cells.size() != static_cast<size_t>(grid_width) * grid_height) {
    throw ValidationError("correspondence field cell count does not match its grid");
  }
  if (!(scale_x > 0.0) || !(scale_y > 0.0) || !std::isfinite(scale_x) || !std::isfinite(scale_y)) {
    throw ValidationError("correspondence field scale factors must be positive and finite");
  }
  for (const MatchCell& c : cells) {
    if (!(c.confidence >= 0.0f && c.confidence <= 1.0f)) {
      throw ValidationError("correspondence confidence outside [0, 1]");
    }
    if (c.confidence > 0.0f && (!std::isfinite(c.target_x) || !std::isfinite(c.target_y))) {
      throw ValidationError("correspondence with positive confidence has a non-finite target");
    }
  }
}

std::vector<uint8_t> SerializeField(const CorrespondenceField& field) {
  field.Validate();
  std::vector<uint8_t> out;
  out.reserve(64 + field.source_id.size() + field.target_id.size() + field.cells.size() * kFieldRecordBytes);
  out.insert(out.end(), kMagic, kMagic + 4);
  ByteWriter w(&out);
  w.U32(kFieldFormatVersion);
  w.Str(field.source_id);
  w.Str(field.target_id);
  w.U32(field.grid_width);
  w.U32(field.grid_height);
  w.F64(field.scale_x);
  w.F64(field.scale_y);
  for (const MatchCell& c : field.cells) {
    w.F32(c.target_x);
    w.F32(c.target_y);
    w.F32(c.confidence);
  }
  return out;
}

CorrespondenceField ParseField(std::span<const uint8_t> bytes) {
  ByteReader r(bytes);
  r.Need(4, "magic");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw ParseError(ParseError::Kind::kBadMagic, 0, "not a correspondence field (magic mismatch)");
  }
  r.U32("magic");
  const size_t version_offset = r.offset();
  const uint32_t version = r.U32("version");
  if (version != kFieldFormatVersion) {
    throw ParseError(ParseError::Kind::kBadVersion, version_offset,
                     "unsupported correspondence field version " + std::to_string(version));
  }
  CorrespondenceField field;
  field.source_id = r.Str("source id");
  field.target_id = r.Str("target id");
  const size_t dims_offset = r.offset();
  field.grid_width = r.U32("grid width");
  field.grid_height = r.U32("grid height");
  if (field.grid_width == 0 || field.grid_height == 0) {
    throw ParseError(ParseError::Kind::kInvalidValue, dims_offset, "correspondence field grid must be non-empty");
  }
  const size_t scale_offset = r.offset();
  field.scale_x = r.F64("scale x");
  field.scale_y = r.F64("scale y");
  if (!(field.scale_x > 0.0) || !(field.scale_y > 0.0) || !std::isfinite(field.scale_x) ||
      !std::isfinite(field.scale_y)) {
    throw ParseError(ParseError::Kind::kInvalidValue, scale_offset, "scale factors must be positive and finite");
  }
  const uint64_t count = static_cast<uint64_t>(field.grid_width) * field.grid_height;
  if (r.remaining() / kFieldRecordBytes < count) {
    throw ParseError(ParseError::Kind::kTruncated, r.offset(),
                     "truncated field file: expected " + std::to_string(count) + " records");
  }
  field.cells.resize(count);
  for (MatchCell& c : field.cells) {
    const size_t at = r.offset();
    c.target_x = r.F32("record");
    c.target_y = r.F32("record");
    c.confidence = r.F32("record");
    if (!(c.confidence >= 0.0f && c.confidence <= 1.0f)) {
      throw ParseError(ParseError::Kind::kInvalidValue, at + 8, "confidence outside [0, 1]");
    }
    if (c.confidence > 0.0f && (!std::isfinite(c.target_x) || !std::isfinite(c.target_y))) {
      throw ParseError(ParseError::Kind::kInvalidValue, at, "non-finite target for a positive-confidence match");
    }
  }
  if (r.remaining() != 0) {
    throw ParseError(ParseError::Kind::kTrailingBytes, r.offset(), "unexpected bytes after the last record");
  }
  return field;
}

void WriteField(const CorrespondenceField& field, const std::filesystem::path& path) {
  const std::vector<uint8_t> bytes = SerializeField(field);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(path.string(), "failed writing " + path.string());
}

CorrespondenceField ReadField(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open " + path.string());
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return ParseField(bytes);
}

std::string FieldFileName(const std::string& source, const std::string& target) {
  return source + "__" + target + ".imlc";
}

FieldLoader DirectoryFieldLoader(const std::filesystem::path& dir) {
  return [dir](const std::string& source, const std::string& target) {
    const std::string pair = source + "__" + target;
    const std::filesystem::path path = dir / FieldFileName(source, target);
    std::error_code ec;
    if (!std::filesystem::is_regular_file(path, ec)) throw IoError(pair, "missing field file " + path.string());
    CorrespondenceField field;
    try {
      field = ReadField(path);
    } catch (const ParseError& e) {
      throw IoError(pair, "corrupt field file " + path.string() + ": " + e.what());
    } catch (const IoError& e) {
      throw IoError(pair, e.what());
    }
    if (field.source_id != source || field.target_id != target) {
      throw IoError(pair, "field file " + path.string() + " holds " + field.source_id + " -> " + field.target_id);
    }
    return field;
  };
}

std::vector<FilteredMatch> FilterMatches(const CorrespondenceField& field, double threshold) {
  std::vector<FilteredMatch> out;
  for (size_t i = 0; i < field.cells.size(); ++i) {
    const MatchCell& c = field.cells[i];
    if (c.confidence <= 0.0f || c.confidence < threshold) continue;
    FilteredMatch m;
    m.source_pixel = field.SourcePixel(i);
    m.target_pixel = Eigen::Vector2d(c.target_x, c.target_y);
    m.confidence = c.confidence;
    m.cell = static_cast<uint32_t>(i);
    out.push_back(m);
  }
  return out;
}

}  // namespace imloc
