#include "imloc/image_codec.h"

#include <csetjmp>
#include <cstdio>
#include <cstring>

#include <jpeglib.h>
#include <png.h>

#include "imloc/errors.h"

namespace imloc {
namespace {

struct PngWriteBuffer {
  std::vector<uint8_t>* out;
};

void PngWriteCallback(png_structp png, png_bytep data, png_size_t length) {
  auto* buf = static_cast<PngWriteBuffer*>(png_get_io_ptr(png));
  buf->out->insert(buf->out->end(), data, data + length);
}

void PngFlushCallback(png_structp) {}

struct PngReadBuffer {
  std::span<const uint8_t> data;
  size_t pos = 0;
};

void PngReadCallback(png_structp png, png_bytep out, png_size_t length) {
  auto* buf = static_cast<PngReadBuffer*>(png_get_io_ptr(png));
  if (buf->pos + length > buf->data.size()) png_error(png, "truncated PNG stream");
  std::memcpy(out, buf->data.data() + buf->pos, length);
  buf->pos += length;
}

[[noreturn]] void PngErrorCallback(png_structp png, png_const_charp msg) {
  auto* message = static_cast<std::string*>(png_get_error_ptr(png));
  if (message) *message = msg;
  png_longjmp(png, 1);
}

void PngWarningCallback(png_structp, png_const_charp) {}

}  // namespace

std::vector<uint8_t> EncodePng(const Image& image) {
  if (image.width <= 0 || image.height <= 0) throw ValidationError("cannot encode an empty image");
  if (!(image.channels == 1 || (image.channels == 3 && !image.is16()))) {
    throw ValidationError("PNG encoder supports 8-bit gray, 8-bit RGB and 16-bit gray");
  }
  std::vector<uint8_t> out;
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, PngErrorCallback, PngWarningCallback);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("libpng initialisation failed");
  }
  // Row storage must outlive the setjmp region.
  std::vector<uint8_t> row_bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("PNG encoding failed: " + message);
  }
  PngWriteBuffer buffer{&out};
  png_set_write_fn(png, &buffer, PngWriteCallback, PngFlushCallback);
  const int depth = image.is16() ? 16 : 8;
  const int color = image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, image.width, image.height, depth, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 9);
  png_write_info(png, info);
  const size_t stride = static_cast<size_t>(image.width) * image.channels * (depth / 8);
  row_bytes.resize(stride);
  for (int r = 0; r < image.height; ++r) {
    if (depth == 16) {
      const uint16_t* src = image.pixels16.data() + static_cast<size_t>(r) * image.width;
      for (int c = 0; c < image.width; ++c) {
        row_bytes[2 * c] = static_cast<uint8_t>(src[c] >> 8);  // PNG is big-endian
        row_bytes[2 * c + 1] = static_cast<uint8_t>(src[c] & 0xff);
      }
    } else {
      std::memcpy(row_bytes.data(), image.pixels.data() + r * stride, stride);
    }
    png_write_row(png, row_bytes.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

Image DecodePng(std::span<const uint8_t> bytes) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) {
    throw ValidationError("not a PNG stream");
  }
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, PngErrorCallback, PngWarningCallback);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng initialisation failed");
  }
  Image image;
  std::vector<uint8_t> row_bytes;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("corrupt PNG stream: " + message);
  }
  PngReadBuffer buffer{bytes, 0};
  png_set_read_fn(png, &buffer, PngReadCallback);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE ||
      !(color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_RGB) || !(depth == 8 || depth == 16) ||
      (color == PNG_COLOR_TYPE_RGB && depth != 8)) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw ValidationError("unsupported PNG layout (expected 8-bit gray/RGB or 16-bit gray)");
  }
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  image.channels = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
  const size_t stride = static_cast<size_t>(image.width) * image.channels * (depth / 8);
  row_bytes.resize(stride);
  if (depth == 16) {
    image.pixels16.resize(static_cast<size_t>(image.width) * image.height);
  } else {
    image.pixels.resize(stride * image.height);
  }
  for (int r = 0; r < image.height; ++r) {
    png_read_row(png, row_bytes.data(), nullptr);
    if (depth == 16) {
      uint16_t* dst = image.pixels16.data() + static_cast<size_t>(r) * image.width;
      for (int c = 0; c < image.width; ++c) {
        dst[c] = static_cast<uint16_t>((row_bytes[2 * c] << 8) | row_bytes[2 * c + 1]);
      }
    } else {
      std::memcpy(image.pixels.data() + r * stride, row_bytes.data(), stride);
    }
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

namespace {

struct JpegErrorManager {
  jpeg_error_mgr pub;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void JpegErrorExit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace

std::vector<uint8_t> EncodeJpeg(const Image& image, int quality) {
  if (image.channels != 3 || image.is16()) throw ValidationError("JPEG encoder expects 8-bit RGB");
  if (quality < 1 || quality > 100) throw ConfigError("JPEG quality must lie in [1, 100]");
  jpeg_compress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = JpegErrorExit;
  unsigned char* mem = nullptr;
  unsigned long mem_size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(mem);
    throw std::runtime_error(std::string("JPEG encoding failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &mem, &mem_size);
  cinfo.image_width = image.width;
  cinfo.image_height = image.height;
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  const size_t stride = static_cast<size_t>(image.width) * 3;
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW row = const_cast<JSAMPROW>(image.pixels.data() + cinfo.next_scanline * stride);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  std::vector<uint8_t> out(mem, mem + mem_size);
  jpeg_destroy_compress(&cinfo);
  std::free(mem);
  return out;
}

Image DecodeJpeg(std::span<const uint8_t> bytes) {
  jpeg_decompress_struct cinfo;
  JpegErrorManager err;
  cinfo.err = jpeg_std_error(&err.pub);
  err.pub.error_exit = JpegErrorExit;
  Image image;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw ValidationError(std::string("corrupt JPEG stream: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  image.width = static_cast<int>(cinfo.output_width);
  image.height = static_cast<int>(cinfo.output_height);
  image.channels = 3;
  const size_t stride = static_cast<size_t>(image.width) * 3;
  image.pixels.resize(stride * image.height);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = image.pixels.data() + cinfo.output_scanline * stride;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return image;
}

void CheckRgbCodec(const std::string& codec) {
  if (codec != "png" && codec != "jpeg") throw ConfigError("unsupported RGB codec '" + codec + "'");
}

std::string CodecExtension(const std::string& codec) {
  CheckRgbCodec(codec);
  return codec == "png" ? "png" : "jpg";
}

std::vector<uint8_t> EncodeRgb(const Image& image, const std::string& codec, int quality) {
  CheckRgbCodec(codec);
  if (codec == "png") return EncodePng(image);
  return EncodeJpeg(image, quality);
}

Image DecodeRgb(std::span<const uint8_t> bytes, const std::string& codec) {
  CheckRgbCodec(codec);
  if (codec == "png") return DecodePng(bytes);
  return DecodeJpeg(bytes);
}

Image DownsampleBox(const Image& image, int factor) {
  if (factor < 1) throw ConfigError("downsampling factor must be >= 1");
  if (factor == 1) return image;
  if (image.is16()) throw ValidationError("box downsampling expects an 8-bit image");
  Image out;
  out.width = (image.width + factor - 1) / factor;
  out.height = (image.height + factor - 1) / factor;
  out.channels = image.channels;
  out.pixels.resize(static_cast<size_t>(out.width) * out.height * out.channels);
  for (int r = 0; r < out.height; ++r) {
    for (int c = 0; c < out.width; ++c) {
      for (int ch = 0; ch < image.channels; ++ch) {
        unsigned sum = 0, n = 0;
        for (int y = r * factor; y < std::min((r + 1) * factor, image.height); ++y) {
          for (int x = c * factor; x < std::min((c + 1) * factor, image.width); ++x) {
            sum += image.pixels[(static_cast<size_t>(y) * image.width + x) * image.channels + ch];
            ++n;
          }
        }
        out.pixels[(static_cast<size_t>(r) * out.width + c) * out.channels + ch] =
            static_cast<uint8_t>((sum + n / 2) / n);
      }
    }
  }
  return out;
}

}  // namespace imloc
