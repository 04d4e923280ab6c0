#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "evrep/evrep.hpp"

namespace evrep::testing {

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("evrep_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary) << text;
}

inline void write_bytes(const std::filesystem::path& p, const std::vector<std::uint8_t>& bytes) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream(p, std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

inline std::string read_text(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& v : img.data) v = float(uniform01(rng));
  return img;
}

template <std::floating_point T>
Tensor<T> random_tensor(int n, int c, int h, int w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  Tensor<T> t(n, c, h, w);
  for (auto& v : t.data) v = T(lo + (hi - lo) * uniform01(rng));
  return t;
}

/// A bright axis-aligned rectangle on black, tinted by `color`.
inline Image rectangle_image(int h, int w, int y0, int x0, int y1, int x1, std::array<float, 3> color) {
  Image img(h, w);
  for (int y = y0; y < y1; ++y)
    for (int x = x0; x < x1; ++x)
      for (int c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
  return img;
}

/// Events tracing the outline of a rectangle: positive on the left/top
/// edges, negative on the right/bottom, timestamps increasing along the walk.
inline EventStream rectangle_events(int h, int w, int y0, int x0, int y1, int x1) {
  EventStream s;
  s.width = std::uint32_t(w);
  s.height = std::uint32_t(h);
  std::uint64_t t = 10;
  auto emit = [&](int x, int y, int p) { s.events.push_back({std::uint32_t(x), std::uint32_t(y), t, std::int8_t(p)}); t += 7; };
  for (int x = x0; x < x1; ++x) emit(x, y0, +1);
  for (int y = y0; y < y1; ++y) emit(x0, y, +1);
  for (int x = x0; x < x1; ++x) emit(x, y1 - 1, -1);
  for (int y = y0; y < y1; ++y) emit(x1 - 1, y, -1);
  return s;
}

struct SyntheticPair {
  EventStream events;
  Image rgb;
};

/// Four distinct rectangle scenes used by the small training runs.
inline std::vector<SyntheticPair> synthetic_pairs(int h, int w, int count = 4) {
  const std::array<std::array<int, 4>, 6> boxes{{{2, 2, 9, 9}, {6, 5, 14, 12}, {1, 8, 7, 15}, {9, 1, 15, 8},
                                                  {4, 4, 12, 12}, {3, 9, 13, 14}}};
  const std::array<std::array<float, 3>, 6> colors{{{1.0f, 0.2f, 0.1f}, {0.1f, 0.9f, 0.2f}, {0.2f, 0.3f, 1.0f},
                                                    {0.9f, 0.9f, 0.1f}, {0.8f, 0.2f, 0.8f}, {0.2f, 0.9f, 0.9f}}};
  std::vector<SyntheticPair> out;
  for (int i = 0; i < count; ++i) {
    const auto& b = boxes[std::size_t(i) % boxes.size()];
    const int y0 = b[0] * h / 16, x0 = b[1] * w / 16, y1 = b[2] * h / 16, x1 = b[3] * w / 16;
    out.push_back({rectangle_events(h, w, y0, x0, y1, x1), rectangle_image(h, w, y0, x0, y1, x1, colors[i % 6])});
  }
  return out;
}

inline std::vector<TrainSample> to_train_samples(const std::vector<SyntheticPair>& pairs) {
  std::vector<TrainSample> out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto [t0, t1] = full_window(pairs[i].events);
    out.push_back({"s" + std::to_string(i), encode_tencode(pairs[i].events, t0, t1).pixels, pairs[i].rgb});
  }
  return out;
}

/// Writes pairs to disk plus a manifest; returns the manifest path.
inline std::filesystem::path write_synthetic_dataset(const std::filesystem::path& dir,
                                                     const std::vector<SyntheticPair>& pairs,
                                                     const std::vector<std::string>& labels, bool with_rgb = true) {
  std::filesystem::create_directories(dir);
  std::string manifest;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const std::string id = "s" + std::to_string(i);
    write_bytes(dir / (id + ".bin"), encode_nmnist_bin(pairs[i].events));
    nlohmann::json j{{"id", id}, {"events_path", id + ".bin"}, {"label", labels[i % labels.size()]}};
    if (with_rgb) {
      export_png(pairs[i].rgb, dir / (id + ".png"));
      j["rgb_path"] = id + ".png";
    }
    manifest += j.dump() + "\n";
  }
  write_file(dir / "manifest.jsonl", manifest);
  return dir / "manifest.jsonl";
}

/// n distinct 34x34 rectangle recordings with labels cycling over `labels`.
inline std::filesystem::path write_recognition_dataset(const std::filesystem::path& dir, int n,
                                                       const std::vector<std::string>& labels) {
  std::vector<SyntheticPair> pairs;
  for (int i = 0; i < n; ++i) {
    const int y0 = 1 + i % 7, x0 = 1 + (i * 3) % 11, y1 = y0 + 8 + i % 5, x1 = x0 + 6 + (i * 5) % 9;
    pairs.push_back({rectangle_events(34, 34, y0, x0, y1, x1), rectangle_image(34, 34, y0, x0, y1, x1, {1, 1, 1})});
  }
  return write_synthetic_dataset(dir, pairs, labels, false);
}

/// Replay fixture answering the recognition prompt for `kind` with answers[i]
/// for the i-th sample of `index`.
inline std::vector<FixtureEntry> recognition_fixture(const DatasetIndex& index, RepKind kind,
                                                     const std::vector<std::string>& answers) {
  const auto prompt = sha256_hex(recognition_prompt(index.class_list()));
  std::vector<FixtureEntry> out;
  for (std::size_t i = 0; i < index.size(); ++i) {
    const auto img = representation_for(index.samples()[i], kind, {});
    out.push_back({prompt, image_sha256(img), answers[i]});
  }
  return out;
}

inline GeneratorConfig tiny_config(int stem = 8, int stage = 16, BlockKind kind = BlockKind::fused) {
  GeneratorConfig c;
  c.stem_channels = stem;
  c.stage_channels = {stage};
  c.stage_repeats = {1};
  c.stage_kind = {kind};
  return c;
}

/// Backend that answers every request with a scripted function of the request.
class ScriptedBackend final : public Backend {
 public:
  explicit ScriptedBackend(std::function<std::string(const CaptionRequest&)> fn, std::string id = "scripted")
      : fn_(std::move(fn)), id_(std::move(id)) {}
  std::string id() const override { return id_; }
  std::size_t concurrency_cap() const override { return 2; }

 protected:
  LLMResponse do_complete(const CaptionRequest& req) override { return {fn_(req), {}, 0.0, {}}; }

 private:
  std::function<std::string(const CaptionRequest&)> fn_;
  std::string id_;
};

}  // namespace evrep::testing
