#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include <gtest/gtest.h>

#include "imloc/errors.h"
#include "imloc/matchio.h"
#include "imloc/random.h"

namespace imloc {
namespace {

CorrespondenceField RandomField(Rng& rng, bool with_nan) {
  const uint32_t w = 1 + static_cast<uint32_t>(rng.index(17));
  const uint32_t h = 1 + static_cast<uint32_t>(rng.index(13));
  CorrespondenceField f("src_" + std::to_string(rng.index(1000)), "tgt", w, h, rng.uniform(0.5, 4.0),
                        rng.uniform(0.5, 4.0));
  for (MatchCell& c : f.cells) {
    if (rng.uniform() < 0.3) {
      c.confidence = 0.0f;
      if (with_nan) {
        // Arbitrary quiet-NaN payloads must survive byte-for-byte.
        const uint32_t payload = 0x7fc00000u | static_cast<uint32_t>(rng.index(1u << 22));
        c.target_x = std::bit_cast<float>(payload);
        c.target_y = std::bit_cast<float>(payload ^ 0x5u);
      }
    } else {
      c.target_x = static_cast<float>(rng.uniform(-10, 600));
      c.target_y = static_cast<float>(rng.uniform(-10, 600));
      c.confidence = static_cast<float>(rng.uniform(1e-6, 1.0));
    }
  }
  return f;
}

TEST(FieldFormat, RoundTripIsBitExact) {
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    const CorrespondenceField f = RandomField(rng, /*with_nan=*/true);
    const std::vector<uint8_t> bytes = SerializeField(f);
    const CorrespondenceField g = ParseField(bytes);
    ASSERT_EQ(g.source_id, f.source_id);
    ASSERT_EQ(g.target_id, f.target_id);
    ASSERT_EQ(g.grid_width, f.grid_width);
    ASSERT_EQ(g.grid_height, f.grid_height);
    ASSERT_EQ(std::bit_cast<uint64_t>(g.scale_x), std::bit_cast<uint64_t>(f.scale_x));
    ASSERT_EQ(std::memcmp(g.cells.data(), f.cells.data(), f.cells.size() * sizeof(MatchCell)), 0);
    ASSERT_EQ(SerializeField(g), bytes);
  }
}

TEST(FieldFormat, TwoByTwoFileSize) {
  CorrespondenceField f("a", "bb", 2, 2);
  const size_t header = 4 + 4 + (4 + 1) + (4 + 2) + 4 + 4 + 8 + 8;
  EXPECT_EQ(SerializeField(f).size(), header + 4 * kFieldRecordBytes);
  EXPECT_EQ(4 * kFieldRecordBytes, 48u);
}

TEST(FieldFormat, LittleEndianLayout) {
  CorrespondenceField f("s", "t", 1, 1, 2.0, 0.5);
  f.cells[0] = {1.0f, -2.0f, 0.25f};
  const std::vector<uint8_t> b = SerializeField(f);
  EXPECT_EQ(std::string(b.begin(), b.begin() + 4), "IMLC");
  EXPECT_EQ(b[4], 1);  // version, low byte first
  EXPECT_EQ(b[5] | b[6] | b[7], 0);
  float tx;
  std::memcpy(&tx, b.data() + b.size() - 12, 4);
  EXPECT_EQ(tx, 1.0f);
}

TEST(FieldFormat, BadMagic) {
  std::vector<uint8_t> b = SerializeField(CorrespondenceField("a", "b", 1, 1));
  std::memcpy(b.data(), "XXXX", 4);
  try {
    ParseField(b);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ParseError::Kind::kBadMagic);
    EXPECT_EQ(e.offset(), 0u);
  }
}

TEST(FieldFormat, BadVersion) {
  std::vector<uint8_t> b = SerializeField(CorrespondenceField("a", "b", 1, 1));
  b[4] = 2;
  try {
    ParseField(b);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.kind(), ParseError::Kind::kBadVersion);
    EXPECT_EQ(e.offset(), 4u);
  }
}

TEST(FieldFormat, TruncationAtEveryLength) {
  const std::vector<uint8_t> b = SerializeField(CorrespondenceField("ab", "cd", 2, 3));
  for (size_t n = 0; n < b.size(); ++n) {
    try {
      ParseField(std::span<const uint8_t>(b.data(), n));
      FAIL() << "length " << n;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.kind(), ParseError::Kind::kTruncated) << n;
      EXPECT_LE(e.offset(), n);
    }
  }
}

TEST(FieldFormat, TrailingBytesAndBadConfidence) {
  std::vector<uint8_t> b = SerializeField(CorrespondenceField("a", "b", 1, 1));
  b.push_back(0);
  EXPECT_THROW(ParseField(b), ParseError);

  CorrespondenceField f("a", "b", 1, 1);
  f.cells[0].confidence = 1.5f;
  EXPECT_THROW(SerializeField(f), ValidationError);
}

TEST(FieldFormat, FileRoundTrip) {
  Rng rng(3);
  const CorrespondenceField f = RandomField(rng, false);
  const auto path = std::filesystem::temp_directory_path() / "imloc_matchio_test.imlc";
  WriteField(f, path);
  EXPECT_EQ(SerializeField(ReadField(path)), SerializeField(f));
  std::filesystem::remove(path);
  EXPECT_THROW(ReadField(path), IoError);
}

TEST(FilterMatches, ZeroConfidenceIsNeverAMatch) {
  CorrespondenceField f("a", "b", 2, 1);
  f.cells[0] = {std::numeric_limits<float>::quiet_NaN(), 0.0f, 0.0f};
  f.cells[1] = {3.0f, 4.0f, 0.5f};
  const auto m = FilterMatches(f, 0.0);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].cell, 1u);
  EXPECT_EQ(m[0].target_pixel, Eigen::Vector2d(3, 4));
}

TEST(FilterMatches, ThresholdIsInclusive) {
  CorrespondenceField f("a", "b", 3, 1);
  f.cells[0].confidence = 0.04f;
  f.cells[1].confidence = 0.05f;
  f.cells[2].confidence = 0.9f;
  EXPECT_EQ(FilterMatches(f, 0.05).size(), 2u);
}

TEST(FilterMatches, SourcePixelUsesCellCenterAndScale) {
  CorrespondenceField f("a", "b", 2, 2, 4.0, 2.0);
  f.at(1, 1) = {0.0f, 0.0f, 1.0f};
  const auto m = FilterMatches(f, 0.05);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0].source_pixel, Eigen::Vector2d(1.5 * 4.0 - 0.5, 1.5 * 2.0 - 0.5));
}

TEST(FilterMatches, CountAndOrderMatchBruteForce) {
  Rng rng(5);
  for (int i = 0; i < 200; ++i) {
    const CorrespondenceField f = RandomField(rng, true);
    const double thr = rng.uniform();
    std::vector<uint32_t> expected;
    for (uint32_t row = 0; row < f.grid_height; ++row) {
      for (uint32_t col = 0; col < f.grid_width; ++col) {
        const float c = f.at(col, row).confidence;
        if (c > 0.0f && c >= thr) expected.push_back(row * f.grid_width + col);
      }
    }
    const auto got = FilterMatches(f, thr);
    ASSERT_EQ(got.size(), expected.size());
    for (size_t k = 0; k < got.size(); ++k) {
      EXPECT_EQ(got[k].cell, expected[k]);
      EXPECT_GE(got[k].confidence, thr);
    }
  }
}

TEST(FilterMatches, SparseFieldEqualsZeroPaddedDense) {
  // A sparse matcher fills only k cells; the rest stay at the zero sentinel.
  Rng rng(8);
  CorrespondenceField sparse("q", "db", 40, 30);
  std::vector<uint32_t> chosen;
  for (int k = 0; k < 25; ++k) {
    const uint32_t idx = static_cast<uint32_t>(rng.index(sparse.cells.size()));
    sparse.cells[idx] = {static_cast<float>(rng.uniform(0, 40)), static_cast<float>(rng.uniform(0, 30)), 0.7f};
  }
  CorrespondenceField dense = sparse;
  for (MatchCell& c : dense.cells) {
    if (c.confidence == 0.0f) c.target_x = c.target_y = std::numeric_limits<float>::quiet_NaN();
  }
  const auto a = FilterMatches(sparse, 0.05);
  const auto b = FilterMatches(dense, 0.05);
  ASSERT_EQ(a.size(), b.size());
  for (size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k].cell, b[k].cell);
    EXPECT_EQ(a[k].target_pixel, b[k].target_pixel);
  }
}

}  // namespace
}  // namespace imloc
