#pragma once

#include <csetjmp>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <png.h>

#include "evrep/error.hpp"
#include "evrep/image.hpp"

namespace evrep {

/// Encodes an image as an 8-bit RGB PNG in memory (v -> round(255 v)).
inline std::vector<std::uint8_t> encode_png(const Image& img) {
  if (img.height <= 0 || img.width <= 0) throw Error(Errc::ShapeMismatch, "cannot encode an empty image");
  const auto rgb = to_rgb8(img);
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = png_uint_32(img.width);
  desc.height = png_uint_32(img.height);
  desc.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&desc, nullptr, &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(Errc::IOFailure, std::string("png sizing failed: ") + desc.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&desc, out.data(), &size, 0, rgb.data(), 0, nullptr)) {
    throw Error(Errc::IOFailure, std::string("png encode failed: ") + desc.message);
  }
  out.resize(size);
  return out;
}

inline void export_png(const Image& img, const std::filesystem::path& path) {
  if (!values_in_unit_range(img)) throw Error(Errc::Precondition, "image values outside [0,1]");
  const auto bytes = encode_png(img);
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.string().c_str(), "wb"), &std::fclose);
  if (!f || std::fwrite(bytes.data(), 1, bytes.size(), f.get()) != bytes.size()) {
    throw Error(Errc::IOFailure, "cannot write " + path.string());
  }
}

inline void export_png(const RepImage& img, const std::filesystem::path& path) { export_png(img.pixels, path); }

/// Reads any PNG (gray, palette, RGB, with or without alpha; 8 or 16 bit) as
/// RGB floats in [0,1]. 8-bit samples divide by 255, 16-bit ones by 65535.
/// Alpha is dropped.
inline Image read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> f(std::fopen(path.string().c_str(), "rb"), &std::fclose);
  if (!f) throw Error(Errc::IOFailure, "cannot open " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw Error(Errc::IOFailure, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  struct Guard {
    png_structp* png;
    png_infop* info;
    ~Guard() { png_destroy_read_struct(png, info, nullptr); }
  } guard{&png, &info};
  if (!info) throw Error(Errc::IOFailure, "png_create_info_struct failed");

  std::vector<std::uint8_t> raw;
  std::vector<png_bytep> rows;
  png_uint_32 width = 0, height = 0;
  int bit_depth = 0;
  if (setjmp(png_jmpbuf(png))) {
    throw Error(Errc::IOFailure, "corrupt PNG " + path.string());
  }
  png_init_io(png, f.get());
  png_read_info(png, info);
  width = png_get_image_width(png, info);
  height = png_get_image_height(png, info);
  const int color = png_get_color_type(png, info);
  bit_depth = png_get_bit_depth(png, info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
  png_set_strip_alpha(png);
  if (bit_depth == 16) png_set_swap(png);  // host little-endian order
  png_read_update_info(png, info);
  bit_depth = png_get_bit_depth(png, info);

  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = raw.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);

  Image img(static_cast<int>(height), static_cast<int>(width));
  if (bit_depth == 16) {
    for (std::size_t i = 0; i < img.data.size(); ++i) {
      const std::uint16_t v = std::uint16_t(raw[2 * i]) | std::uint16_t(raw[2 * i + 1]) << 8;
      img.data[i] = float(double(v) / 65535.0);
    }
  } else {
    for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = raw[i] / 255.0f;
  }
  return img;
}

/// Writes a 16-bit RGB PNG; used for fixtures of externally reconstructed frames.
inline void write_png16(const std::filesystem::path& path, int height, int width,
                        const std::vector<std::uint16_t>& rgb) {
  png_image desc{};
  desc.version = PNG_IMAGE_VERSION;
  desc.width = png_uint_32(width);
  desc.height = png_uint_32(height);
  desc.format = PNG_FORMAT_LINEAR_RGB;
  if (rgb.size() != std::size_t(width) * height * 3) throw Error(Errc::ShapeMismatch, "16-bit buffer size");
  if (!png_image_write_to_file(&desc, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw Error(Errc::IOFailure, std::string("png16 write failed: ") + desc.message);
  }
}

}  // namespace evrep
