#include <png.h>

#include <cstdio>
#include <memory>
#include <vector>

#include "clipforge/error.hpp"
#include "clipforge/image.hpp"

namespace clipforge {

namespace {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace

RawImage read_png(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(ErrorCode::io, "cannot open PNG for reading: " + path);

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorCode::io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    fail(ErrorCode::io, "png_create_info_struct failed");
  }

  RawImage out;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::io, "undecodable PNG: " + path);
  }

  png_init_io(png, fp.get());
  png_read_info(png, info);

  // Normalize everything to 8-bit RGB.
  png_set_expand(png);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_gray_to_rgb(png);
  png_read_update_info(png, info);

  const png_uint_32 w = png_get_image_width(png, info);
  const png_uint_32 h = png_get_image_height(png, info);
  if (png_get_channels(png, info) != 3 || png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::io, "unsupported PNG layout after expansion: " + path);
  }

  out.width = static_cast<int>(w);
  out.height = static_cast<int>(h);
  out.rgb.resize(static_cast<std::size_t>(w) * h * 3);
  rows.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) {
    rows[y] = out.rgb.data() + static_cast<std::size_t>(y) * w * 3;
  }
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const std::string& path, const RawImage& img) {
  if (img.height <= 0 || img.width <= 0 ||
      img.rgb.size() != static_cast<std::size_t>(img.height) * img.width * 3) {
    fail_invalid("write_png: malformed raw image");
  }
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) fail(ErrorCode::io, "cannot open PNG for writing: " + path);

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) fail(ErrorCode::io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    fail(ErrorCode::io, "png_create_info_struct failed");
  }

  std::vector<png_bytep> rows(static_cast<std::size_t>(img.height));
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::io, "PNG encode failed: " + path);
  }

  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width),
               static_cast<png_uint_32>(img.height), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < img.height; ++y) {
    rows[static_cast<std::size_t>(y)] =
        const_cast<png_bytep>(img.rgb.data() + static_cast<std::size_t>(y) * img.width * 3);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace clipforge
