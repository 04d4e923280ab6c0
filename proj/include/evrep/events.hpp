#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evrep/error.hpp"

namespace evrep {

struct Event {
  std::uint32_t x = 0;
  std::uint32_t y = 0;
  std::uint64_t t = 0;  // microseconds
  std::int8_t p = 1;    // +1 or -1

  friend bool operator==(const Event&, const Event&) = default;
};

/// An ordered window of events on a width x height sensor.
/// Invariants: timestamps nondecreasing, every event inside the sensor.
struct EventStream {
  std::vector<Event> events;
  std::uint32_t width = 34;
  std::uint32_t height = 34;

  bool empty() const noexcept { return events.empty(); }
  std::size_t size() const noexcept { return events.size(); }

  friend bool operator==(const EventStream&, const EventStream&) = default;
};

namespace detail {

inline void check_bounds(const Event& e, std::uint32_t width, std::uint32_t height,
                         const std::string& where) {
  if (e.x >= width || e.y >= height) {
    throw Error(Errc::CoordinateOutOfRange, where + ": event (" + std::to_string(e.x) + "," +
                                                std::to_string(e.y) + ") outside " +
                                                std::to_string(width) + "x" +
                                                std::to_string(height));
  }
}

}  // namespace detail

/// Checks the EventStream invariants, throwing on the first violation.
inline void validate(const EventStream& s) {
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    detail::check_bounds(e, s.width, s.height, "event " + std::to_string(i));
    if (e.p != 1 && e.p != -1) {
      throw Error(Errc::MalformedRow, "event " + std::to_string(i) + ": polarity must be +1/-1");
    }
    if (i > 0 && e.t < s.events[i - 1].t) {
      throw Error(Errc::UnsortedTimestamps, "event " + std::to_string(i) + " precedes its predecessor");
    }
  }
}

struct NmnistOptions {
  std::uint32_t width = 34;
  std::uint32_t height = 34;
};

inline constexpr std::size_t kNmnistRecordBytes = 5;
inline constexpr std::uint64_t kNmnistMaxTimestamp = (1u << 23) - 1;

/// Decodes the 5-byte ATIS record layout used by N-MNIST / N-Caltech101:
///   byte0 = x, byte1 = y, byte2 bit 7 = polarity (1 -> +1),
///   bits 22..0 spread over byte2[6:0], byte3, byte4 = timestamp (big-endian, us).
inline EventStream parse_nmnist_bin(std::span<const std::uint8_t> bytes, NmnistOptions opt = {}) {
  if (bytes.size() % kNmnistRecordBytes != 0) {
    throw Error(Errc::TruncatedRecord, "byte length " + std::to_string(bytes.size()) +
                                           " is not a multiple of 5 (trailing record at offset " +
                                           std::to_string(bytes.size() / 5 * 5) + ")");
  }
  EventStream out;
  out.width = opt.width;
  out.height = opt.height;
  out.events.reserve(bytes.size() / kNmnistRecordBytes);
  for (std::size_t off = 0; off < bytes.size(); off += kNmnistRecordBytes) {
    Event e;
    e.x = bytes[off];
    e.y = bytes[off + 1];
    e.p = (bytes[off + 2] & 0x80) ? 1 : -1;
    e.t = (std::uint64_t(bytes[off + 2] & 0x7F) << 16) | (std::uint64_t(bytes[off + 3]) << 8) |
          std::uint64_t(bytes[off + 4]);
    detail::check_bounds(e, out.width, out.height, "offset " + std::to_string(off));
    if (!out.events.empty() && e.t < out.events.back().t) {
      throw Error(Errc::UnsortedTimestamps, "offset " + std::to_string(off) + ": timestamp decreases");
    }
    out.events.push_back(e);
  }
  return out;
}

/// Inverse of parse_nmnist_bin. Requires x, y < 256 and t < 2^23.
inline std::vector<std::uint8_t> encode_nmnist_bin(const EventStream& s) {
  std::vector<std::uint8_t> out;
  out.reserve(s.events.size() * kNmnistRecordBytes);
  for (const auto& e : s.events) {
    if (e.x > 255 || e.y > 255) {
      throw Error(Errc::CoordinateOutOfRange, "ATIS records hold 8-bit coordinates");
    }
    if (e.t > kNmnistMaxTimestamp) {
      throw Error(Errc::MalformedRow, "timestamp exceeds 23 bits");
    }
    out.push_back(static_cast<std::uint8_t>(e.x));
    out.push_back(static_cast<std::uint8_t>(e.y));
    out.push_back(static_cast<std::uint8_t>((e.p > 0 ? 0x80 : 0x00) | ((e.t >> 16) & 0x7F)));
    out.push_back(static_cast<std::uint8_t>((e.t >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>(e.t & 0xFF));
  }
  return out;
}

struct CsvOptions {
  std::uint32_t width = 0;
  std::uint32_t height = 0;
  bool sort = false;  // stable-sort by t instead of rejecting unsorted input
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace detail

/// Parses rows "t,x,y,p" with p in {0,1} (0 -> -1). Blank lines, '#' comments
/// and a leading "t,x,y,p" header are skipped.
inline EventStream parse_csv_events(std::string_view text, CsvOptions opt) {
  if (opt.width == 0 || opt.height == 0) {
    throw Error(Errc::EmptyResolution, "CSV events need a nonzero sensor resolution");
  }
  EventStream out;
  out.width = opt.width;
  out.height = opt.height;
  std::size_t line_no = 0;
  while (!text.empty()) {
    auto nl = text.find('\n');
    std::string_view line = detail::trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    if (out.events.empty() && line_no == 1 && line.starts_with("t")) continue;

    std::string_view fields[4];
    std::size_t n = 0;
    while (n < 4) {
      auto comma = line.find(',');
      fields[n++] = line.substr(0, comma);
      if (comma == std::string_view::npos) {
        line = {};
        break;
      }
      line = line.substr(comma + 1);
    }
    const std::string where = "line " + std::to_string(line_no);
    Event e;
    int pol = 0;
    if (n != 4 || !line.empty() || !detail::parse_int(fields[0], e.t) ||
        !detail::parse_int(fields[1], e.x) || !detail::parse_int(fields[2], e.y) ||
        !detail::parse_int(fields[3], pol) || (pol != 0 && pol != 1)) {
      throw Error(Errc::MalformedRow, where + ": expected \"t,x,y,p\" with p in {0,1}");
    }
    e.p = pol == 1 ? 1 : -1;
    detail::check_bounds(e, out.width, out.height, where);
    if (!opt.sort && !out.events.empty() && e.t < out.events.back().t) {
      throw Error(Errc::UnsortedTimestamps, where + ": timestamp decreases (pass --sort to accept)");
    }
    out.events.push_back(e);
  }
  if (opt.sort) {
    std::stable_sort(out.events.begin(), out.events.end(),
                     [](const Event& a, const Event& b) { return a.t < b.t; });
  }
  return out;
}

/// Events with t0 <= t < t1, order preserved.
inline EventStream window_events(const EventStream& s, std::uint64_t t0, std::uint64_t t1) {
  if (t0 > t1) {
    throw Error(Errc::InvalidWindow, "window start " + std::to_string(t0) + " after end " + std::to_string(t1));
  }
  auto by_time = [](const Event& e, std::uint64_t t) { return e.t < t; };
  auto first = std::lower_bound(s.events.begin(), s.events.end(), t0, by_time);
  auto last = std::lower_bound(first, s.events.end(), t1, by_time);
  EventStream out;
  out.width = s.width;
  out.height = s.height;
  out.events.assign(first, last);
  return out;
}

/// [first t, last t + 1), or [0, 1) for an empty stream.
inline std::pair<std::uint64_t, std::uint64_t> full_window(const EventStream& s) {
  if (s.events.empty()) return {0, 1};
  return {s.events.front().t, s.events.back().t + 1};
}

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IOFailure, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

enum class EventFormat { nmnist, csv };

struct EventFileOptions {
  std::uint32_t width = 34;
  std::uint32_t height = 34;
  bool sort = false;
};

/// ".csv" files are parsed as text, everything else as 5-byte ATIS records.
inline EventFormat detect_event_format(const std::filesystem::path& path) {
  return path.extension() == ".csv" ? EventFormat::csv : EventFormat::nmnist;
}

inline EventStream load_event_file(const std::filesystem::path& path, EventFormat format,
                                   EventFileOptions opt = {}) {
  auto bytes = read_file_bytes(path);
  try {
    if (format == EventFormat::csv) {
      std::string_view text(reinterpret_cast<const char*>(bytes.data()), bytes.size());
      return parse_csv_events(text, {opt.width, opt.height, opt.sort});
    }
    return parse_nmnist_bin(bytes, {opt.width, opt.height});
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.detail());
  }
}

inline EventStream load_event_file(const std::filesystem::path& path, EventFileOptions opt = {}) {
  return load_event_file(path, detect_event_format(path), opt);
}

}  // namespace evrep
