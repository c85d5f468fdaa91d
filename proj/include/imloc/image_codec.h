#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace imloc {

// 8- or 16-bit interleaved raster. 16-bit samples are stored in host order
// inside `pixels16`.
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<uint8_t> pixels;
  std::vector<uint16_t> pixels16;

  static Image Rgb8(int w, int h) {
    Image im;
    im.width = w;
    im.height = h;
    im.channels = 3;
    im.pixels.assign(static_cast<size_t>(w) * h * 3, 0);
    return im;
  }
  bool is16() const { return !pixels16.empty(); }
};

// Lossless PNG. Supports 8-bit gray, 8-bit RGB and 16-bit gray.
std::vector<uint8_t> EncodePng(const Image& image);
Image DecodePng(std::span<const uint8_t> bytes);

// Baseline JPEG (lossy), 8-bit RGB only. quality in [1, 100].
std::vector<uint8_t> EncodeJpeg(const Image& image, int quality);
Image DecodeJpeg(std::span<const uint8_t> bytes);

// RGB codecs by name: "png" (lossless, mandatory) and "jpeg" (lossy). Throws
// ConfigError for anything else.
std::vector<uint8_t> EncodeRgb(const Image& image, const std::string& codec, int quality);
Image DecodeRgb(std::span<const uint8_t> bytes, const std::string& codec);
std::string CodecExtension(const std::string& codec);
void CheckRgbCodec(const std::string& codec);

// Box-filter downsampling by an integer factor (partial edge blocks averaged
// over the pixels they contain).
Image DownsampleBox(const Image& image, int factor);

}  // namespace imloc
