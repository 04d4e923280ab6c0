#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "evrep/autograd.hpp"
#include "evrep/error.hpp"
#include "evrep/image.hpp"
#include "evrep/random.hpp"
#include "evrep/tensor.hpp"

namespace evrep {

enum class BlockKind { fused, mbconv };

inline std::string block_kind_name(BlockKind k) { return k == BlockKind::fused ? "fused" : "mbconv"; }

inline BlockKind parse_block_kind(const std::string& s) {
  if (s == "fused") return BlockKind::fused;
  if (s == "mbconv") return BlockKind::mbconv;
  throw Error(Errc::InvalidConfig, "unknown block kind '" + s + "'");
}

/// Architecture of the encoder-decoder generator. Defaults: stem 32, encoder
/// stages [48, 80, 160] x [2, 2, 3] of [fused, fused, mbconv], expansion 4,
/// squeeze-excitation 0.25 on MBConv only, head 1x1 -> 16 -> 3 with sigmoid.
struct GeneratorConfig {
  int stem_channels = 32;
  std::vector<int> stage_channels{48, 80, 160};
  std::vector<int> stage_repeats{2, 2, 3};
  std::vector<BlockKind> stage_kind{BlockKind::fused, BlockKind::fused, BlockKind::mbconv};
  double expansion_ratio = 4.0;
  double se_ratio = 0.25;
  int head_channels = 16;
  std::string output_activation = "sigmoid";

  std::size_t num_stages() const noexcept { return stage_channels.size(); }
  /// Spatial dims fed to forward() must be multiples of this.
  int grid_factor() const noexcept { return 1 << num_stages(); }

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(Errc::InvalidConfig, m); };
    if (stage_channels.size() != stage_repeats.size() || stage_channels.size() != stage_kind.size()) {
      fail("stage_channels, stage_repeats and stage_kind must have equal lengths");
    }
    if (stage_channels.empty()) fail("at least one encoder stage is required");
    if (stem_channels <= 0 || head_channels <= 0) fail("channel counts must be positive");
    for (int c : stage_channels)
      if (c <= 0) fail("stage channels must be positive");
    for (int r : stage_repeats)
      if (r < 1) fail("stage repeats must be >= 1");
    if (!(expansion_ratio >= 1.0)) fail("expansion_ratio must be >= 1");
    if (!(se_ratio > 0.0 && se_ratio <= 1.0)) fail("se_ratio must be in (0, 1]");
    if (output_activation != "sigmoid") fail("output_activation must be 'sigmoid'");
  }

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

inline void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  std::vector<std::string> kinds;
  for (auto k : c.stage_kind) kinds.push_back(block_kind_name(k));
  j = nlohmann::json{{"stem_channels", c.stem_channels},     {"stage_channels", c.stage_channels},
                     {"stage_repeats", c.stage_repeats},     {"stage_kind", kinds},
                     {"expansion_ratio", c.expansion_ratio}, {"se_ratio", c.se_ratio},
                     {"head_channels", c.head_channels},     {"output_activation", c.output_activation}};
}

inline void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  c.stem_channels = j.at("stem_channels").get<int>();
  c.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  c.stage_repeats = j.at("stage_repeats").get<std::vector<int>>();
  c.stage_kind.clear();
  for (const auto& k : j.at("stage_kind")) c.stage_kind.push_back(parse_block_kind(k.get<std::string>()));
  c.expansion_ratio = j.at("expansion_ratio").get<double>();
  c.se_ratio = j.at("se_ratio").get<double>();
  c.head_channels = j.value("head_channels", 16);
  c.output_activation = j.value("output_activation", std::string("sigmoid"));
}

template <std::floating_point T>
struct NamedParam {
  std::string name;
  ag::Var<T> var;
};

template <std::floating_point T>
struct NamedBuffer {
  std::string name;
  Tensor<T> value;
};

enum class Mode { train, inference };

struct ForwardOptions {
  bool zero_skips = false;  // diagnostics: feed zeros instead of encoder skips
};

/// Encoder-decoder generator mapping an N x 3 x H x W Tencode batch to an
/// N x 3 x H x W representation in (0, 1).
///
///   stem: conv3x3 -> BN -> SiLU, twice
///   encoder stage s: maxpool 2x2, then repeats_s blocks to stage_channels[s]
///   decoder stage s (deepest first): bilinear 2x, concat skip from level s,
///     then repeats_s blocks (same kind) back to level-s channels
///   head: conv1x1 -> SiLU -> conv1x1 to 3 -> sigmoid
template <std::floating_point T>
class Generator {
 public:
  static Generator build(const GeneratorConfig& config, std::uint64_t seed) {
    config.validate();
    Generator g;
    g.config_ = config;
    g.seed_ = seed;
    Rng rng(seed);
    g.init(rng);
    return g;
  }

  const GeneratorConfig& config() const noexcept { return config_; }
  std::uint64_t seed() const noexcept { return seed_; }
  int grid_factor() const noexcept { return config_.grid_factor(); }

  std::vector<NamedParam<T>>& params() noexcept { return params_; }
  const std::vector<NamedParam<T>>& params() const noexcept { return params_; }
  std::vector<NamedBuffer<T>>& buffers() noexcept { return buffers_; }
  const std::vector<NamedBuffer<T>>& buffers() const noexcept { return buffers_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var->value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.var->zero_grad();
  }

  /// Training-mode forward: records the graph and updates BN running stats.
  ag::Var<T> forward(const Tensor<T>& batch, Mode mode = Mode::train, ForwardOptions opt = {}) {
    return run(batch, mode, mode == Mode::train ? &buffers_ : nullptr, opt);
  }

  /// Graph-free inference with running statistics; reentrant.
  Tensor<T> infer(const Tensor<T>& batch, ForwardOptions opt = {}) const {
    ag::NoGradGuard no_grad;
    return run(batch, Mode::inference, nullptr, opt)->value;
  }

  /// FNV-1a over the raw bytes of every parameter and buffer.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&](const std::vector<T>& v) {
      const auto* p = reinterpret_cast<const unsigned char*>(v.data());
      for (std::size_t i = 0; i < v.size() * sizeof(T); ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
      }
    };
    for (const auto& p : params_) mix(p.var->value.data);
    for (const auto& b : buffers_) mix(b.value.data);
    return h;
  }

  /// Index of the parameter called `name`, or npos.
  std::size_t find_param(const std::string& name) const {
    for (std::size_t i = 0; i < params_.size(); ++i)
      if (params_[i].name == name) return i;
    return npos;
  }

  Generator(Generator&&) noexcept = default;
  Generator& operator=(Generator&&) noexcept = default;

  /// Deep copy: parameters get fresh nodes so the copies train independently.
  Generator clone() const {
    Generator g(*this);
    for (auto& p : g.params_) p.var = ag::parameter(p.var->value);
    return g;
  }

  static constexpr std::size_t npos = std::size_t(-1);

 private:
  struct ConvRef {
    std::size_t weight = 0;
    std::optional<std::size_t> bias;
    int groups = 1;
  };
  struct BnRef {
    std::size_t gamma = 0, beta = 0, mean = 0, var = 0;
  };
  struct ConvBn {
    ConvRef conv;
    BnRef bn;
  };
  struct SeRef {
    ConvRef reduce, expand;
  };
  struct Block {
    BlockKind kind = BlockKind::fused;
    bool residual = false;
    ConvBn first;                  // fused: 3x3 conv; mbconv: 1x1 expansion
    std::optional<ConvBn> depthwise;
    std::optional<SeRef> se;
    std::optional<ConvBn> project;  // absent for fused blocks with expansion 1
  };

  using Buffers = std::vector<NamedBuffer<T>>;

  Generator() = default;
  // copies would share parameter nodes; use clone()
  Generator(const Generator&) = default;
  Generator& operator=(const Generator&) = default;

  ConvRef add_conv(const std::string& name, int cin, int cout, int k, int groups, bool bias, Rng& rng,
                   double gain = 2.0) {
    const int fan_in = (cin / groups) * k * k;
    Tensor<T> w(cout, cin / groups, k, k);
    const double stddev = std::sqrt(gain / fan_in);
    for (auto& v : w.data) v = T(standard_normal(rng) * stddev);
    ConvRef ref;
    ref.weight = params_.size();
    ref.groups = groups;
    params_.push_back({name + ".weight", ag::parameter(std::move(w))});
    if (bias) {
      ref.bias = params_.size();
      params_.push_back({name + ".bias", ag::parameter(Tensor<T>(cout, 1, 1, 1))});
    }
    return ref;
  }

  BnRef add_bn(const std::string& name, int c) {
    BnRef ref;
    ref.gamma = params_.size();
    params_.push_back({name + ".gamma", ag::parameter(Tensor<T>(c, 1, 1, 1, T(1)))});
    ref.beta = params_.size();
    params_.push_back({name + ".beta", ag::parameter(Tensor<T>(c, 1, 1, 1))});
    ref.mean = buffers_.size();
    buffers_.push_back({name + ".running_mean", Tensor<T>(c, 1, 1, 1)});
    ref.var = buffers_.size();
    buffers_.push_back({name + ".running_var", Tensor<T>(c, 1, 1, 1, T(1))});
    return ref;
  }

  ConvBn add_conv_bn(const std::string& name, int cin, int cout, int k, int groups, Rng& rng) {
    ConvBn cb;
    cb.conv = add_conv(name + ".conv", cin, cout, k, groups, false, rng);
    cb.bn = add_bn(name + ".bn", cout);
    return cb;
  }

  Block add_block(const std::string& name, BlockKind kind, int cin, int cout, Rng& rng) {
    Block b;
    b.kind = kind;
    b.residual = cin == cout;
    const int expanded = int(std::lround(cin * config_.expansion_ratio));
    if (kind == BlockKind::fused) {
      if (config_.expansion_ratio == 1.0) {
        b.first = add_conv_bn(name + ".fused", cin, cout, 3, 1, rng);
      } else {
        b.first = add_conv_bn(name + ".fused", cin, expanded, 3, 1, rng);
        b.project = add_conv_bn(name + ".project", expanded, cout, 1, 1, rng);
      }
      return b;
    }
    const int squeezed = std::max(1, int(cin * config_.se_ratio));
    b.first = add_conv_bn(name + ".expand", cin, expanded, 1, 1, rng);
    b.depthwise = add_conv_bn(name + ".depthwise", expanded, expanded, 3, expanded, rng);
    b.se = SeRef{add_conv(name + ".se.reduce", expanded, squeezed, 1, 1, true, rng),
                 add_conv(name + ".se.expand", squeezed, expanded, 1, 1, true, rng, 1.0)};
    b.project = add_conv_bn(name + ".project", expanded, cout, 1, 1, rng);
    return b;
  }

  void init(Rng& rng) {
    const int stem = config_.stem_channels;
    stem_[0] = add_conv_bn("stem.0", 3, stem, 3, 1, rng);
    stem_[1] = add_conv_bn("stem.1", stem, stem, 3, 1, rng);
    const std::size_t S = config_.num_stages();
    std::vector<int> level{stem};
    level.insert(level.end(), config_.stage_channels.begin(), config_.stage_channels.end());
    encoder_.resize(S);
    decoder_.resize(S);
    for (std::size_t s = 0; s < S; ++s) {
      for (int i = 0; i < config_.stage_repeats[s]; ++i) {
        const int cin = i == 0 ? level[s] : level[s + 1];
        encoder_[s].push_back(add_block("enc" + std::to_string(s) + "." + std::to_string(i), config_.stage_kind[s],
                                        cin, level[s + 1], rng));
      }
    }
    for (std::size_t s = S; s-- > 0;) {
      for (int i = 0; i < config_.stage_repeats[s]; ++i) {
        const int cin = i == 0 ? level[s + 1] + level[s] : level[s];
        decoder_[s].push_back(add_block("dec" + std::to_string(s) + "." + std::to_string(i), config_.stage_kind[s],
                                        cin, level[s], rng));
      }
    }
    head_[0] = add_conv("head.0", stem, config_.head_channels, 1, 1, true, rng);
    head_[1] = add_conv("head.1", config_.head_channels, 3, 1, 1, true, rng, 1.0);
  }

  ag::Var<T> p(std::size_t i) const { return params_[i].var; }

  ag::Var<T> conv(const ag::Var<T>& x, const ConvRef& c) const {
    return ag::conv2d(x, p(c.weight), c.bias ? p(*c.bias) : ag::Var<T>{}, c.groups);
  }

  ag::Var<T> conv_bn(const ag::Var<T>& x, const ConvBn& cb, Mode mode, Buffers* sink) const {
    auto y = conv(x, cb.conv);
    ag::BatchNormStats<T> stats;
    if (sink) stats = {&(*sink)[cb.bn.mean].value, &(*sink)[cb.bn.var].value};
    return ag::batch_norm(y, p(cb.bn.gamma), p(cb.bn.beta), buffers_[cb.bn.mean].value, buffers_[cb.bn.var].value,
                          mode == Mode::train, stats);
  }

  ag::Var<T> block(const ag::Var<T>& x, const Block& b, Mode mode, Buffers* sink) const {
    auto y = ag::silu(conv_bn(x, b.first, mode, sink));
    if (b.depthwise) y = ag::silu(conv_bn(y, *b.depthwise, mode, sink));
    if (b.se) {
      auto s = ag::global_avg_pool(y);
      s = ag::silu(conv(s, b.se->reduce));
      s = ag::sigmoid(conv(s, b.se->expand));
      y = ag::scale_channels(y, s);
    }
    if (b.project) y = conv_bn(y, *b.project, mode, sink);
    return b.residual ? ag::add(y, x) : y;
  }

  // `sink` receives running-stat updates (training forward only)
  ag::Var<T> run(const Tensor<T>& batch, Mode mode, Buffers* sink, const ForwardOptions& opt) const {
    const int f = grid_factor();
    if (batch.c() != 3 || batch.h() % f || batch.w() % f || batch.h() == 0 || batch.w() == 0) {
      throw Error(Errc::ShapeMismatch, "generator input " + shape_string(batch.shape) +
                                           " must be N x 3 x H x W with H, W multiples of " + std::to_string(f));
    }
    auto x = ag::constant(batch);
    x = ag::silu(conv_bn(x, stem_[0], mode, sink));
    x = ag::silu(conv_bn(x, stem_[1], mode, sink));
    std::vector<ag::Var<T>> skips{x};
    for (const auto& stage : encoder_) {
      x = ag::max_pool2(x);
      for (const auto& b : stage) x = block(x, b, mode, sink);
      skips.push_back(x);
    }
    for (std::size_t s = encoder_.size(); s-- > 0;) {
      x = ag::upsample_bilinear2(x);
      auto skip = opt.zero_skips ? ag::constant(Tensor<T>::like(skips[s]->value)) : skips[s];
      x = ag::concat_channels(x, skip);
      for (const auto& b : decoder_[s]) x = block(x, b, mode, sink);
    }
    x = ag::silu(conv(x, head_[0]));
    return ag::sigmoid(conv(x, head_[1]));
  }

  GeneratorConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<NamedParam<T>> params_;
  std::vector<NamedBuffer<T>> buffers_;
  ConvBn stem_[2];
  std::vector<std::vector<Block>> encoder_, decoder_;
  ConvRef head_[2];
};

struct CropRecord {
  int height = 0;
  int width = 0;
};

template <std::floating_point T>
struct PaddedImage {
  BasicImage<T> image;
  CropRecord crop;
};

namespace detail {

/// Mirror index without repeating the edge sample (..., 2, 1, 0, 1, 2, ...).
inline int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

}  // namespace detail

/// Reflection-pads bottom and right edges up to the next multiples of factor.
template <std::floating_point T>
PaddedImage<T> pad_to_grid(const BasicImage<T>& img, int factor) {
  if (factor < 1) throw Error(Errc::Precondition, "pad factor must be >= 1");
  const int h = (img.height + factor - 1) / factor * factor;
  const int w = (img.width + factor - 1) / factor * factor;
  PaddedImage<T> out{BasicImage<T>(h, w), {img.height, img.width}};
  for (int y = 0; y < h; ++y) {
    const int sy = detail::reflect_index(y, img.height);
    for (int x = 0; x < w; ++x) {
      const int sx = detail::reflect_index(x, img.width);
      for (int c = 0; c < 3; ++c) out.image.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

template <std::floating_point T>
BasicImage<T> crop(const BasicImage<T>& img, CropRecord rec) {
  if (rec.height > img.height || rec.width > img.width) throw Error(Errc::ShapeMismatch, "crop larger than image");
  BasicImage<T> out(rec.height, rec.width);
  for (int y = 0; y < rec.height; ++y)
    for (int x = 0; x < rec.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, c);
  return out;
}

/// Pads, runs inference and crops back: Tencode frame in, representation out.
template <std::floating_point T>
Image generate(const Generator<T>& gen, const Image& input) {
  auto padded = pad_to_grid(input, gen.grid_factor());
  auto out = gen.infer(image_to_tensor<T>(padded.image));
  return crop(tensor_to_image<float>(out), padded.crop);
}

}  // namespace evrep
