#include "crackbench/data_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace crackbench {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using File = std::unique_ptr<std::FILE, FileCloser>;

// libpng reports errors by longjmp; the message is parked here first.
thread_local char g_png_error[256];

[[noreturn]] void png_fail(png_structp png, png_const_charp msg) {
  std::snprintf(g_png_error, sizeof g_png_error, "%s", msg);
  png_longjmp(png, 1);
}

// Decodes into preallocated rows; returns false on a libpng error.
bool read_rows(png_structp png, png_infop info, std::FILE* fp, Image8* img) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, fp);
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  img->width = static_cast<int>(png_get_image_width(png, info));
  img->height = static_cast<int>(png_get_image_height(png, info));
  img->channels = png_get_channels(png, info);
  if (img->channels != 1 && img->channels != 3) {
    std::snprintf(g_png_error, sizeof g_png_error, "unsupported channel count %d", img->channels);
    return false;
  }
  const std::size_t stride = png_get_rowbytes(png, info);
  img->pixels.resize(stride * static_cast<std::size_t>(img->height));
  for (int y = 0; y < img->height; ++y)
    png_read_row(png, img->pixels.data() + stride * static_cast<std::size_t>(y), nullptr);
  png_read_end(png, nullptr);
  return true;
}

bool write_rows(png_structp png, png_infop info, std::FILE* fp, const Image8& img) {
  if (setjmp(png_jmpbuf(png))) return false;
  png_init_io(png, fp);
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y)
    png_write_row(png, img.pixels.data() + stride * static_cast<std::size_t>(y));
  png_write_end(png, nullptr);
  return true;
}

void png_warn(png_structp, png_const_charp) {}

}  // namespace

Image8 read_png(const std::filesystem::path& path) {
  File fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open image '" + path.string() + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw std::runtime_error("'" + path.string() + "' is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  Image8 img;
  const bool ok = read_rows(png, info, fp.get(), &img);
  png_destroy_read_struct(&png, &info, nullptr);
  if (!ok) throw std::runtime_error("reading '" + path.string() + "': " + g_png_error);
  return img;
}

void write_png(const std::filesystem::path& path, const Image8& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: channels must be 1 or 3");
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels)
    throw std::invalid_argument("write_png: pixel buffer size mismatch");
  File fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("cannot create '" + path.string() + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  png_infop info = png_create_info_struct(png);
  const bool ok = write_rows(png, info, fp.get(), img);
  png_destroy_write_struct(&png, &info);
  if (!ok) throw std::runtime_error("writing '" + path.string() + "': " + g_png_error);
}


}  // namespace crackbench
