#pragma once

#include <cstdint>
#include <cstring>
#include <iterator>
#include <map>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

#include "json.hpp"

#include "evrep/error.hpp"
#include "evrep/generator.hpp"
#include "evrep/hashing.hpp"

// File layout (little-endian):
//   "EVREPCKP" | u32 version | u64 header_len | header JSON | u64 blob_len | blob | sha256(all preceding bytes)
// The header lists every tensor as {name, shape, offset, count}; offsets index
// the blob in elements of the header's dtype.

namespace evrep {

inline constexpr char kCheckpointMagic[8] = {'E', 'V', 'R', 'E', 'P', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t step = 0;
  nlohmann::json metric_tail = nlohmann::json::array();  // last few metric rows
  nlohmann::json extra = nlohmann::json::object();        // trainer state, free-form
};

template <std::floating_point T>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<T, float>) return "float32";
  else if constexpr (std::is_same_v<T, double>) return "float64";
  else return "unknown";
}

template <std::floating_point T>
struct LoadedCheckpoint {
  Generator<T> generator;
  CheckpointMeta meta;
  std::vector<NamedBuffer<T>> extra_tensors;
};

namespace detail {

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(char((std::uint64_t(v) >> (8 * i)) & 0xFF));
}

template <class U>
U get_le(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(U) > in.size()) throw Error(Errc::ChecksumMismatch, "checkpoint truncated");
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= std::uint64_t(std::uint8_t(in[pos + i])) << (8 * i);
  pos += sizeof(U);
  return U(v);
}

}  // namespace detail

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& path, const Generator<T>& gen, const CheckpointMeta& meta,
                     const std::vector<NamedBuffer<T>>& extra_tensors = {}) {
  nlohmann::json tensors = nlohmann::json::array();
  std::vector<const Tensor<T>*> order;
  std::uint64_t offset = 0;
  auto add = [&](const std::string& name, const Tensor<T>& t) {
    tensors.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}, {"count", t.numel()}});
    order.push_back(&t);
    offset += t.numel();
  };
  for (const auto& p : gen.params()) add("param/" + p.name, p.var->value);
  for (const auto& b : gen.buffers()) add("buffer/" + b.name, b.value);
  for (const auto& e : extra_tensors) add("extra/" + e.name, e.value);

  nlohmann::json header{{"version", kCheckpointVersion},
                        {"dtype", dtype_name<T>()},
                        {"config", gen.config()},
                        {"seed", gen.seed()},
                        {"step", meta.step},
                        {"metric_tail", meta.metric_tail},
                        {"extra", meta.extra},
                        {"tensors", tensors}};
  const std::string header_text = header.dump();

  std::string buf(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(buf, kCheckpointVersion);
  detail::put_le<std::uint64_t>(buf, header_text.size());
  buf += header_text;
  detail::put_le<std::uint64_t>(buf, offset * sizeof(T));
  for (const auto* t : order) buf.append(reinterpret_cast<const char*>(t->data.data()), t->numel() * sizeof(T));
  const auto digest = sha256(buf);
  buf.append(reinterpret_cast<const char*>(digest.data()), digest.size());

  // write-then-rename keeps the previous checkpoint intact on failure
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out || !out.write(buf.data(), std::streamsize(buf.size()))) {
      throw Error(Errc::IOFailure, "cannot write checkpoint " + tmp.string());
    }
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(Errc::IOFailure, "cannot move checkpoint into place: " + ec.message());
}

namespace detail {

struct RawCheckpoint {
  nlohmann::json header;
  std::string blob;
};

inline RawCheckpoint read_raw_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IOFailure, "cannot open checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kCheckpointMagic) + 32 || std::memcmp(buf.data(), kCheckpointMagic, 8) != 0) {
    throw Error(Errc::ChecksumMismatch, path.string() + " is not a checkpoint or is truncated");
  }
  const std::string body = buf.substr(0, buf.size() - 32);
  const auto digest = sha256(body);
  if (std::memcmp(digest.data(), buf.data() + body.size(), 32) != 0) {
    throw Error(Errc::ChecksumMismatch, path.string() + ": checksum does not match contents");
  }
  std::size_t pos = 8;
  const auto version = get_le<std::uint32_t>(body, pos);
  if (version != kCheckpointVersion) {
    throw Error(Errc::ConfigMismatch, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(body, pos);
  if (pos + header_len > body.size()) throw Error(Errc::ChecksumMismatch, "header overruns file");
  RawCheckpoint raw;
  raw.header = nlohmann::json::parse(body.substr(pos, header_len));
  pos += header_len;
  const auto blob_len = get_le<std::uint64_t>(body, pos);
  if (pos + blob_len != body.size()) throw Error(Errc::ChecksumMismatch, "blob length mismatch");
  raw.blob = body.substr(pos);
  return raw;
}

template <std::floating_point T>
Tensor<T> read_tensor(const RawCheckpoint& raw, const nlohmann::json& entry) {
  Tensor<T> t;
  t.shape = entry.at("shape").get<std::array<int, 4>>();
  const auto offset = entry.at("offset").get<std::uint64_t>();
  const auto count = entry.at("count").get<std::uint64_t>();
  if ((offset + count) * sizeof(T) > raw.blob.size()) throw Error(Errc::ChecksumMismatch, "tensor overruns blob");
  t.data.resize(count);
  std::memcpy(t.data.data(), raw.blob.data() + offset * sizeof(T), count * sizeof(T));
  return t;
}

template <std::floating_point T>
CheckpointMeta restore_into(const RawCheckpoint& raw, Generator<T>& gen, std::vector<NamedBuffer<T>>* extra) {
  if (raw.header.at("dtype").get<std::string>() != dtype_name<T>()) {
    throw Error(Errc::ConfigMismatch, "checkpoint dtype " + raw.header.at("dtype").get<std::string>() +
                                          " does not match " + dtype_name<T>());
  }
  const auto cfg = raw.header.at("config").get<GeneratorConfig>();
  if (!(cfg == gen.config())) {
    throw Error(Errc::ConfigMismatch, "checkpoint architecture " + raw.header.at("config").dump() +
                                          " differs from " + nlohmann::json(gen.config()).dump());
  }
  std::map<std::string, const nlohmann::json*> by_name;
  for (const auto& e : raw.header.at("tensors")) by_name[e.at("name").get<std::string>()] = &e;
  auto fetch = [&](const std::string& name, Tensor<T>& dst) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(Errc::ConfigMismatch, "checkpoint lacks tensor " + name);
    auto t = read_tensor<T>(raw, *it->second);
    if (!t.same_shape(dst)) throw Error(Errc::ConfigMismatch, "shape mismatch for " + name);
    dst = std::move(t);
  };
  for (auto& p : gen.params()) fetch("param/" + p.name, p.var->value);
  for (auto& b : gen.buffers()) fetch("buffer/" + b.name, b.value);
  if (extra) {
    extra->clear();
    for (const auto& e : raw.header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      if (name.rfind("extra/", 0) == 0) extra->push_back({name.substr(6), read_tensor<T>(raw, e)});
    }
  }
  CheckpointMeta meta;
  meta.step = raw.header.value("step", std::uint64_t(0));
  meta.metric_tail = raw.header.value("metric_tail", nlohmann::json::array());
  meta.extra = raw.header.value("extra", nlohmann::json::object());
  return meta;
}

}  // namespace detail

/// Rebuilds the generator described by the checkpoint and restores its weights.
template <std::floating_point T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path) {
  const auto raw = detail::read_raw_checkpoint(path);
  const auto cfg = raw.header.at("config").get<GeneratorConfig>();
  auto gen = Generator<T>::build(cfg, raw.header.value("seed", std::uint64_t(0)));
  std::vector<NamedBuffer<T>> extra;
  auto meta = detail::restore_into(raw, gen, &extra);
  return {std::move(gen), std::move(meta), std::move(extra)};
}

/// Restores weights into an existing generator; ConfigMismatch if the
/// architectures differ.
template <std::floating_point T>
CheckpointMeta load_checkpoint_into(const std::filesystem::path& path, Generator<T>& gen,
                                    std::vector<NamedBuffer<T>>* extra = nullptr) {
  return detail::restore_into(detail::read_raw_checkpoint(path), gen, extra);
}

}  // namespace evrep
