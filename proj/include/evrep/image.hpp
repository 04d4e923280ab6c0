#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evrep/error.hpp"

namespace evrep {

/// Row-major H x W x 3 image (channels R, G, B interleaved).
template <std::floating_point T>
struct BasicImage {
  static constexpr int kChannels = 3;

  int height = 0;
  int width = 0;
  std::vector<T> data;

  BasicImage() = default;
  BasicImage(int h, int w, T fill = T(0)) : height(h), width(w), data(std::size_t(h) * w * kChannels, fill) {}

  T& at(int y, int x, int c) { return data[(std::size_t(y) * width + x) * kChannels + c]; }
  T at(int y, int x, int c) const { return data[(std::size_t(y) * width + x) * kChannels + c]; }

  std::size_t pixel_count() const noexcept { return std::size_t(height) * width; }
  bool same_shape(const BasicImage& o) const noexcept { return height == o.height && width == o.width; }

  template <std::floating_point U>
  BasicImage<U> cast() const {
    BasicImage<U> out;
    out.height = height;
    out.width = width;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  friend bool operator==(const BasicImage&, const BasicImage&) = default;
};

using Image = BasicImage<float>;

enum class RepKind { event_frame, tencode, evrep, external_frame };

constexpr std::string_view rep_kind_name(RepKind k) {
  switch (k) {
    case RepKind::event_frame: return "event_frame";
    case RepKind::tencode: return "tencode";
    case RepKind::evrep: return "evrep";
    case RepKind::external_frame: return "external_frame";
  }
  return "?";
}

inline RepKind parse_rep_kind(std::string_view s) {
  for (auto k : {RepKind::event_frame, RepKind::tencode, RepKind::evrep, RepKind::external_frame}) {
    if (rep_kind_name(k) == s) return k;
  }
  throw Error(Errc::InvalidConfig, "unknown representation kind '" + std::string(s) + "'");
}

/// An image tagged with the representation that produced it.
struct RepImage {
  Image pixels;
  RepKind kind = RepKind::external_frame;
};

template <std::floating_point T>
bool values_in_unit_range(const BasicImage<T>& img) {
  return std::all_of(img.data.begin(), img.data.end(), [](T v) { return v >= T(0) && v <= T(1); });
}

template <std::floating_point T>
void clamp_unit(BasicImage<T>& img) {
  for (auto& v : img.data) v = std::clamp(v, T(0), T(1));
}

/// v -> round(255 v), clamped to [0, 255].
inline std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

/// Interleaved RGB8 bytes, row-major.
inline std::vector<std::uint8_t> to_rgb8(const Image& img) {
  std::vector<std::uint8_t> out(img.data.size());
  std::transform(img.data.begin(), img.data.end(), out.begin(), to_byte);
  return out;
}

inline Image from_rgb8(std::span<const std::uint8_t> bytes, int height, int width) {
  if (bytes.size() != std::size_t(height) * width * 3) {
    throw Error(Errc::ShapeMismatch, "RGB8 buffer size does not match " + std::to_string(height) + "x" +
                                         std::to_string(width));
  }
  Image img(height, width);
  for (std::size_t i = 0; i < bytes.size(); ++i) img.data[i] = bytes[i] / 255.0f;
  return img;
}

/// Bilinear resampling with half-pixel centers.
inline Image resize_bilinear(const Image& src, int height, int width) {
  if (src.height == height && src.width == width) return src;
  if (src.height <= 0 || src.width <= 0 || height <= 0 || width <= 0) {
    throw Error(Errc::ShapeMismatch, "cannot resize an empty image");
  }
  Image out(height, width);
  const double sy = double(src.height) / height;
  const double sx = double(src.width) / width;
  for (int y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int y0 = std::min(int(fy), src.height - 1);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int x0 = std::min(int(fx), src.width - 1);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = src.at(y0, x0, c) * (1 - wx) + src.at(y0, x1, c) * wx;
        const double bot = src.at(y1, x0, c) * (1 - wx) + src.at(y1, x1, c) * wx;
        out.at(y, x, c) = float(top * (1 - wy) + bot * wy);
      }
    }
  }
  return out;
}

}  // namespace evrep
