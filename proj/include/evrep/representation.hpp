#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <vector>

#include "evrep/error.hpp"
#include "evrep/events.hpp"
#include "evrep/image.hpp"

namespace evrep {

struct TencodeFrame {
  Image pixels;
  std::uint64_t t0 = 0;
  std::uint64_t t1 = 0;
};

struct TencodeOptions {
  std::array<float, 3> background{0.0f, 0.0f, 0.0f};
};

namespace detail {

inline void check_encode_args(const EventStream& s, std::uint64_t t0, std::uint64_t t1, bool strict) {
  if (s.width == 0 || s.height == 0) throw Error(Errc::EmptyResolution, "stream has zero resolution");
  if (strict ? t0 >= t1 : t0 > t1) {
    throw Error(Errc::InvalidWindow, "window [" + std::to_string(t0) + ", " + std::to_string(t1) + ") is empty");
  }
}

}  // namespace detail

/// Tencode: for each pixel the latest event in [t0, t1) sets
///   R = 1 if positive, B = 1 if negative, G = (t - t0) / (t1 - t0).
/// Pixels without events keep the background colour.
inline TencodeFrame encode_tencode(const EventStream& stream, std::uint64_t t0, std::uint64_t t1,
                                   TencodeOptions opt = {}) {
  detail::check_encode_args(stream, t0, t1, true);
  TencodeFrame frame{Image(int(stream.height), int(stream.width)), t0, t1};
  auto& img = frame.pixels;
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    for (int c = 0; c < 3; ++c) img.data[i * 3 + c] = opt.background[c];
  }
  const double span = double(t1 - t0);
  // events are time-ordered, so a forward pass leaves the latest one per pixel
  for (const auto& e : stream.events) {
    if (e.t < t0 || e.t >= t1) continue;
    if (e.x >= stream.width || e.y >= stream.height) {
      throw Error(Errc::CoordinateOutOfRange, "event outside sensor");
    }
    const int y = int(e.y), x = int(e.x);
    img.at(y, x, 0) = e.p > 0 ? 1.0f : 0.0f;
    img.at(y, x, 1) = float(double(e.t - t0) / span);
    img.at(y, x, 2) = e.p > 0 ? 0.0f : 1.0f;
  }
  return frame;
}

/// Event-count frame: R = positive count / max positive count, B likewise for
/// negative events, G = 0. A polarity with no events yields a zero channel.
inline RepImage encode_event_frame(const EventStream& stream, std::uint64_t t0, std::uint64_t t1) {
  detail::check_encode_args(stream, t0, t1, false);
  const std::size_t n = std::size_t(stream.width) * stream.height;
  std::vector<std::uint32_t> pos(n, 0), neg(n, 0);
  for (const auto& e : stream.events) {
    if (e.t < t0 || e.t >= t1) continue;
    if (e.x >= stream.width || e.y >= stream.height) {
      throw Error(Errc::CoordinateOutOfRange, "event outside sensor");
    }
    auto& counts = e.p > 0 ? pos : neg;
    ++counts[std::size_t(e.y) * stream.width + e.x];
  }
  const auto max_pos = *std::max_element(pos.begin(), pos.end());
  const auto max_neg = *std::max_element(neg.begin(), neg.end());
  RepImage out{Image(int(stream.height), int(stream.width)), RepKind::event_frame};
  for (std::size_t i = 0; i < n; ++i) {
    out.pixels.data[i * 3 + 0] = max_pos ? float(pos[i]) / float(max_pos) : 0.0f;
    out.pixels.data[i * 3 + 2] = max_neg ? float(neg[i]) / float(max_neg) : 0.0f;
  }
  return out;
}

}  // namespace evrep
