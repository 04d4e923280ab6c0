#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "evrep/checkpoint.hpp"
#include "evrep/dataset.hpp"
#include "evrep/error.hpp"
#include "evrep/events.hpp"
#include "evrep/generator.hpp"
#include "evrep/llm_client.hpp"
#include "evrep/losses.hpp"
#include "evrep/parallel.hpp"
#include "evrep/png_io.hpp"
#include "evrep/random.hpp"
#include "evrep/representation.hpp"

namespace evrep {

enum class SemanticStrategy { spsa, staged };

inline SemanticStrategy parse_semantic_strategy(std::string_view s) {
  if (s == "spsa") return SemanticStrategy::spsa;
  if (s == "staged") return SemanticStrategy::staged;
  throw Error(Errc::InvalidConfig, "unknown semantic strategy '" + std::string(s) + "'");
}

inline std::string semantic_strategy_name(SemanticStrategy s) { return s == SemanticStrategy::spsa ? "spsa" : "staged"; }

struct TrainConfig {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
  LossWeights weights;
  SemanticStrategy semantic_strategy = SemanticStrategy::spsa;
  int spsa_pairs = 1;
  double spsa_step = 0.05;
  int warmup_epochs = 0;
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // steps; 0 = only at the end
  long max_steps = 0;           // stop after this many global steps; 0 = no limit
  int early_stop_patience = 0;  // epochs without val improvement; 0 = off

  void validate() const {
    if (epochs < 0) throw Error(Errc::InvalidConfig, "epochs must be >= 0");
    if (batch_size < 1) throw Error(Errc::InvalidConfig, "batch_size must be >= 1");
    if (!(learning_rate > 0)) throw Error(Errc::InvalidConfig, "learning_rate must be > 0");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
      throw Error(Errc::InvalidConfig, "adam betas must lie in [0, 1)");
    }
    if (spsa_pairs < 1) throw Error(Errc::InvalidConfig, "spsa_pairs must be >= 1");
    if (!(spsa_step > 0)) throw Error(Errc::InvalidConfig, "spsa_step must be > 0");
    if (warmup_epochs < 0 || checkpoint_interval < 0 || max_steps < 0 || early_stop_patience < 0) {
      throw Error(Errc::InvalidConfig, "counts must be >= 0");
    }
    weights.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"grad_clip", c.grad_clip},
       {"lambda", c.weights.lambda_semantic},
       {"gamma", c.weights.gamma_fidelity},
       {"semantic_strategy", semantic_strategy_name(c.semantic_strategy)},
       {"spsa_pairs", c.spsa_pairs},
       {"spsa_step", c.spsa_step},
       {"warmup_epochs", c.warmup_epochs},
       {"seed", c.seed},
       {"checkpoint_interval", c.checkpoint_interval},
       {"max_steps", c.max_steps},
       {"early_stop_patience", c.early_stop_patience}};
}

// ---------------------------------------------------------------------------
// Data
// ---------------------------------------------------------------------------

struct TrainSample {
  std::string id;
  Image input;  // Tencode over the full recording
  Image rgb;    // paired frame at sensor resolution
};

/// Loads events + paired RGB for every sample. RGB frames whose size differs
/// from the sensor are resized bilinearly.
inline std::vector<TrainSample> load_training_samples(const DatasetIndex& index, EventFileOptions opt = {}) {
  std::vector<TrainSample> out;
  out.reserve(index.size());
  for (const auto& s : index.samples()) {
    if (!s.rgb_path) throw Error(Errc::MissingRGBPair, "sample '" + s.id + "' has no paired RGB frame");
    if (!std::filesystem::exists(*s.rgb_path)) {
      throw Error(Errc::MissingRGBPair, "sample '" + s.id + "': " + s.rgb_path->string() + " not found");
    }
    const auto stream = load_event_file(s.events_path, opt);
    const auto [t0, t1] = full_window(stream);
    auto input = encode_tencode(stream, t0, t1).pixels;
    auto rgb = read_png(*s.rgb_path);
    if (!rgb.same_shape(input)) rgb = resize_bilinear(rgb, input.height, input.width);
    out.push_back({s.id, std::move(input), std::move(rgb)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Zeroth-order gradient
// ---------------------------------------------------------------------------

/// Two-sided SPSA estimate of dL/dx averaged over `pairs` Rademacher draws.
template <std::floating_point T, class LossFn>
Tensor<T> spsa_gradient(const Tensor<T>& x, LossFn&& loss, int pairs, double step, Rng& rng) {
  if (pairs < 1) throw Error(Errc::Precondition, "spsa pairs must be >= 1");
  if (!(step > 0)) throw Error(Errc::Precondition, "spsa step must be > 0");
  auto grad = Tensor<T>::like(x);
  Tensor<T> delta = Tensor<T>::like(x), plus = x, minus = x;
  for (int k = 0; k < pairs; ++k) {
    for (std::size_t i = 0; i < x.numel(); ++i) {
      delta.data[i] = T(rademacher(rng));
      plus.data[i] = x.data[i] + T(step) * delta.data[i];
      minus.data[i] = x.data[i] - T(step) * delta.data[i];
    }
    const double diff = (double(loss(plus)) - double(loss(minus))) / (2.0 * step);
    for (std::size_t i = 0; i < x.numel(); ++i) grad.data[i] += T(diff / pairs) * delta.data[i];
  }
  return grad;
}

namespace detail {

template <std::floating_point T>
std::vector<Image> batch_images(const Tensor<T>& t, bool clamp) {
  std::vector<Image> out;
  out.reserve(std::size_t(t.n()));
  for (int n = 0; n < t.n(); ++n) {
    auto img = tensor_to_image<float>(t, n);
    if (clamp) clamp_unit(img);
    out.push_back(std::move(img));
  }
  return out;
}

inline std::vector<WordSet> caption_words(Backend& backend, const std::vector<Image>& images) {
  std::vector<WordSet> words(images.size());
  parallel_for(images.size(), backend.concurrency_cap(),
               [&](std::size_t i) { words[i] = tokenize_words(caption(backend, {images[i]}).text); });
  return words;
}

inline double mean_jaccard(const std::vector<WordSet>& a, const std::vector<WordSet>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += jaccard_loss(a[i], b[i]);
  return a.empty() ? 0.0 : s / double(a.size());
}

}  // namespace detail

/// Batch-mean semantic loss of `output` (N x 3 x H x W) against fixed RGB
/// caption word sets; images are clamped to [0, 1] before captioning.
template <std::floating_point T>
double semantic_loss_batch(const Tensor<T>& output, const std::vector<WordSet>& rgb_words, Backend& backend) {
  if (rgb_words.size() != std::size_t(output.n())) throw Error(Errc::ShapeMismatch, "one RGB caption per image");
  return detail::mean_jaccard(detail::caption_words(backend, detail::batch_images(output, true)), rgb_words);
}

/// SPSA estimate of the semantic-loss gradient at the generator output. One
/// perturbation spans the whole batch tensor.
template <std::floating_point T>
Tensor<T> semantic_gradient_spsa(const Tensor<T>& output, const std::vector<WordSet>& rgb_words, Backend& backend,
                                 int pairs, double step, Rng& rng) {
  return spsa_gradient(output, [&](const Tensor<T>& x) { return semantic_loss_batch(x, rgb_words, backend); }, pairs,
                       step, rng);
}

struct SemanticPair {
  Image input;
  Image rgb;
};

/// Mean Jaccard loss between captions of gen(input) and of the paired RGB.
inline double evaluate_semantic(const std::function<Image(const Image&)>& gen, const std::vector<SemanticPair>& pairs,
                                Backend& backend) {
  if (pairs.empty()) throw Error(Errc::Precondition, "evaluate_semantic needs a nonempty validation set");
  std::vector<Image> generated, rgb;
  for (const auto& p : pairs) {
    auto g = gen(p.input);
    clamp_unit(g);
    generated.push_back(std::move(g));
    rgb.push_back(p.rgb);
  }
  return detail::mean_jaccard(detail::caption_words(backend, generated), detail::caption_words(backend, rgb));
}

template <std::floating_point T>
double evaluate_semantic(const Generator<T>& gen, const std::vector<TrainSample>& val, Backend& backend) {
  std::vector<SemanticPair> pairs;
  for (const auto& s : val) pairs.push_back({s.input, s.rgb});
  return evaluate_semantic([&](const Image& x) { return generate(gen, x); }, pairs, backend);
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

template <std::floating_point T>
class Adam {
 public:
  Adam(std::vector<NamedParam<T>>& params, double lr, double b1, double b2, double eps)
      : params_(params), lr_(lr), b1_(b1), b2_(b2), eps_(eps) {
    for (const auto& p : params_) {
      m_.push_back(Tensor<T>::like(p.var->value));
      v_.push_back(Tensor<T>::like(p.var->value));
    }
  }

  /// Scales all gradients so their global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm) {
    double sq = 0;
    for (auto& p : params_) sq += double(squared_norm(p.var->grad_buffer()));
    const double norm = std::sqrt(sq);
    if (max_norm > 0 && norm > max_norm) {
      const T s = T(max_norm / (norm + 1e-12));
      for (auto& p : params_)
        for (auto& g : p.var->grad_buffer().data) g *= s;
    }
    return norm;
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, double(t_)), c2 = 1.0 - std::pow(b2_, double(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& w = params_[k].var->value.data;
      const auto& g = params_[k].var->grad_buffer().data;
      auto& m = m_[k].data;
      auto& v = v_[k].data;
      for (std::size_t i = 0; i < w.size(); ++i) {
        m[i] = T(b1_ * m[i] + (1 - b1_) * g[i]);
        v[i] = T(b2_ * v[i] + (1 - b2_) * double(g[i]) * g[i]);
        const double mh = m[i] / c1, vh = v[i] / c2;
        w[i] -= T(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  std::uint64_t steps() const noexcept { return t_; }

  std::vector<NamedBuffer<T>> state() const {
    std::vector<NamedBuffer<T>> out;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      out.push_back({"adam.m/" + params_[k].name, m_[k]});
      out.push_back({"adam.v/" + params_[k].name, v_[k]});
    }
    return out;
  }

  void restore(const std::vector<NamedBuffer<T>>& state, std::uint64_t t) {
    std::map<std::string, const Tensor<T>*> by_name;
    for (const auto& b : state) by_name[b.name] = &b.value;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      for (auto [prefix, dst] : {std::pair{"adam.m/", &m_[k]}, std::pair{"adam.v/", &v_[k]}}) {
        auto it = by_name.find(prefix + params_[k].name);
        if (it == by_name.end()) throw Error(Errc::ConfigMismatch, "checkpoint lacks optimizer state for " + params_[k].name);
        if (!it->second->same_shape(*dst)) throw Error(Errc::ConfigMismatch, "optimizer state shape mismatch");
        *dst = *it->second;
      }
    }
    t_ = t;
  }

 private:
  std::vector<NamedParam<T>>& params_;
  double lr_, b1_, b2_, eps_;
  std::uint64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// One row per optimizer step. `semantic` is NaN when the step made no
/// backend calls; `dual` then holds only the fidelity term.
struct MetricRow {
  std::uint64_t step = 0;
  double semantic = 0;
  double fidelity = 0;
  double dual = 0;
  double lr = 0;
  double wall_ms = 0;
};

inline constexpr std::string_view kMetricsHeader = "step,semantic,fidelity,dual,lr,wall_ms";

inline std::string metric_csv_line(const MetricRow& r) {
  auto num = [](double v) {
    if (std::isnan(v)) return std::string("nan");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::string(buf);
  };
  return std::to_string(r.step) + "," + num(r.semantic) + "," + num(r.fidelity) + "," + num(r.dual) + "," +
         num(r.lr) + "," + num(r.wall_ms);
}

inline nlohmann::json metric_json(const MetricRow& r) {
  auto v = [](double x) { return std::isnan(x) ? nlohmann::json(nullptr) : nlohmann::json(x); };
  return {{"step", r.step}, {"semantic", v(r.semantic)}, {"fidelity", r.fidelity}, {"dual", r.dual}};
}

struct TrainOptions {
  std::filesystem::path out_dir;                 // checkpoints + metrics.csv; empty = keep in memory only
  std::optional<std::filesystem::path> resume;  // checkpoint written by an earlier run
  std::function<void(const MetricRow&)> on_step;
};

struct TrainResult {
  std::uint64_t steps = 0;
  std::vector<MetricRow> metrics;  // rows produced by this invocation
  std::optional<std::filesystem::path> last_checkpoint;
  std::optional<std::filesystem::path> best_checkpoint;
  std::optional<double> best_val_dual;
  std::vector<double> val_dual_per_epoch;
};

namespace detail {

inline constexpr std::uint64_t kOrderStream = 0x6f72646572ull;  // "order"
inline constexpr std::uint64_t kSpsaStream = 0x73707361ull;     // "spsa"

/// Fidelity on the un-padded region; gradient is scattered back to the padded shape.
template <std::floating_point T>
FidelityResult<T> cropped_fidelity(const Tensor<T>& out_padded, const Tensor<T>& target, int h, int w) {
  Tensor<T> out(out_padded.n(), 3, h, w);
  for (int n = 0; n < out.n(); ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(n, c, y, x) = out_padded(n, c, y, x);
  auto res = fidelity_loss_and_grad(out, target);
  auto full = Tensor<T>::like(out_padded);
  for (int n = 0; n < out.n(); ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) full(n, c, y, x) = res.grad(n, c, y, x);
  res.grad = std::move(full);
  return res;
}

template <std::floating_point T>
Tensor<T> crop_tensor(const Tensor<T>& t, int h, int w) {
  Tensor<T> out(t.n(), t.c(), h, w);
  for (int n = 0; n < t.n(); ++n)
    for (int c = 0; c < t.c(); ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out(n, c, y, x) = t(n, c, y, x);
  return out;
}

template <std::floating_point T>
void scatter_add(Tensor<T>& padded, const Tensor<T>& cropped, T scale) {
  for (int n = 0; n < cropped.n(); ++n)
    for (int c = 0; c < cropped.c(); ++c)
      for (int y = 0; y < cropped.h(); ++y)
        for (int x = 0; x < cropped.w(); ++x) padded(n, c, y, x) += scale * cropped(n, c, y, x);
}

}  // namespace detail

/// Trains `gen` in place with the dual alignment loss. The backend is only
/// ever queried; nothing is sent to it that could change its weights.
template <std::floating_point T>
class Trainer {
 public:
  Trainer(Generator<T>& gen, Backend& backend, TrainConfig cfg, TrainOptions opt = {})
      : gen_(gen), backend_(backend), cfg_(std::move(cfg)), opt_(std::move(opt)),
        adam_(gen.params(), cfg_.learning_rate, cfg_.beta1, cfg_.beta2, cfg_.adam_eps) {
    cfg_.validate();
  }

  TrainResult run(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& val_set) {
    TrainResult result;
    if (!opt_.out_dir.empty()) std::filesystem::create_directories(opt_.out_dir);
    const int H = train_set.empty() ? 0 : train_set.front().input.height;
    const int W = train_set.empty() ? 0 : train_set.front().input.width;
    for (const auto& s : train_set) {
      if (s.input.height != H || s.input.width != W || !s.rgb.same_shape(s.input)) {
        throw Error(Errc::ShapeMismatch, "training sample '" + s.id + "' differs in size from the first sample");
      }
    }

    std::uint64_t step = 0;
    if (opt_.resume) step = restore(*opt_.resume);
    if (opt_.out_dir.empty() == false && !opt_.resume) write_metrics_header();

    const std::size_t n = train_set.size();
    const std::size_t per_epoch = n == 0 ? 0 : (n + std::size_t(cfg_.batch_size) - 1) / std::size_t(cfg_.batch_size);
    int stale_epochs = 0;
    bool stop = false;
    for (int epoch = per_epoch ? int(step / per_epoch) : 0; epoch < cfg_.epochs && per_epoch && !stop; ++epoch) {
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      Rng order_rng(derive_seed(derive_seed(cfg_.seed, detail::kOrderStream), std::uint64_t(epoch)));
      fisher_yates(order, order_rng);
      const bool warmup = cfg_.semantic_strategy == SemanticStrategy::staged && epoch < cfg_.warmup_epochs;

      for (std::size_t b = step - std::uint64_t(epoch) * per_epoch; b < per_epoch; ++b) {
        if (cfg_.max_steps && step >= std::uint64_t(cfg_.max_steps)) {
          stop = true;
          break;
        }
        std::vector<const TrainSample*> batch;
        for (std::size_t i = b * cfg_.batch_size; i < std::min(n, (b + 1) * cfg_.batch_size); ++i)
          batch.push_back(&train_set[order[i]]);
        MetricRow row = train_step(batch, step, H, W, warmup);
        ++step;
        result.metrics.push_back(row);
        append_metric(row);
        if (opt_.on_step) opt_.on_step(row);
        if (cfg_.checkpoint_interval && step % std::uint64_t(cfg_.checkpoint_interval) == 0) {
          result.last_checkpoint = save("last.ckpt", step);
        }
      }
      if (stop) break;

      if (!val_set.empty() && !(cfg_.semantic_strategy == SemanticStrategy::staged && epoch < cfg_.warmup_epochs)) {
        const double v = validation_dual(val_set);
        result.val_dual_per_epoch.push_back(v);
        if (!best_val_ || v < *best_val_) {
          best_val_ = v;
          stale_epochs = 0;
          result.best_checkpoint = save("best.ckpt", step);
        } else if (cfg_.early_stop_patience && ++stale_epochs >= cfg_.early_stop_patience) {
          break;
        }
      }
    }
    result.steps = step;
    result.best_val_dual = best_val_;
    result.last_checkpoint = save("last.ckpt", step);
    if (!result.best_checkpoint && !opt_.out_dir.empty() && std::filesystem::exists(opt_.out_dir / "best.ckpt")) {
      result.best_checkpoint = opt_.out_dir / "best.ckpt";
    }
    return result;
  }

  /// Validation dual loss: lambda * semantic + gamma * fidelity over val_set.
  double validation_dual(const std::vector<TrainSample>& val_set) {
    double fid = 0;
    for (const auto& s : val_set) fid += fidelity_loss(generate(gen_, s.input), s.rgb);
    fid /= double(val_set.size());
    double sem = 0;
    if (cfg_.weights.lambda_semantic > 0) sem = evaluate_semantic(gen_, val_set, backend_);
    return cfg_.weights.lambda_semantic * sem + cfg_.weights.gamma_fidelity * fid;
  }

  const Adam<T>& optimizer() const noexcept { return adam_; }

 private:
  MetricRow train_step(const std::vector<const TrainSample*>& batch, std::uint64_t step, int H, int W, bool warmup) {
    const auto start = std::chrono::steady_clock::now();
    const int factor = gen_.grid_factor();
    std::vector<Image> inputs, targets;
    for (const auto* s : batch) {
      inputs.push_back(pad_to_grid(s->input, factor).image);
      targets.push_back(s->rgb);
    }
    const auto x = images_to_tensor<T, float>(inputs);
    const auto target = images_to_tensor<T, float>(targets);

    gen_.zero_grad();
    const auto stats_before = gen_.buffers();
    auto out = gen_.forward(x, Mode::train);
    auto fid = detail::cropped_fidelity(out->value, target, H, W);

    const auto& w = cfg_.weights;
    Tensor<T> upstream = fid.grad;
    for (auto& g : upstream.data) g *= T(w.gamma_fidelity);

    MetricRow row;
    row.step = step + 1;
    row.fidelity = double(fid.loss);
    row.semantic = std::numeric_limits<double>::quiet_NaN();
    row.dual = w.gamma_fidelity * row.fidelity;

    const bool use_semantic = cfg_.semantic_strategy == SemanticStrategy::spsa && w.lambda_semantic > 0 && !warmup;
    if (use_semantic) {
      try {
        const auto out_crop = detail::crop_tensor(out->value, H, W);
        std::vector<WordSet> rgb_words;
        for (const auto* s : batch) rgb_words.push_back(rgb_caption(*s));
        row.semantic = semantic_loss_batch(out_crop, rgb_words, backend_);
        Rng rng(derive_seed(derive_seed(cfg_.seed, detail::kSpsaStream), step));
        const auto ghat = semantic_gradient_spsa(out_crop, rgb_words, backend_, cfg_.spsa_pairs, cfg_.spsa_step, rng);
        detail::scatter_add(upstream, ghat, T(w.lambda_semantic));
        row.dual = w.lambda_semantic * row.semantic + w.gamma_fidelity * row.fidelity;
      } catch (const Error& e) {
        if (!e.is_backend_failure()) throw;
        gen_.buffers() = stats_before;
        save("last.ckpt", step);
        throw Error(Errc::BackendFailure, "step " + std::to_string(step + 1) + ": " + e.detail() +
                                              " (resumable checkpoint saved)");
      }
    }

    ag::backward(out, upstream);
    adam_.clip_grad_norm(cfg_.grad_clip);
    adam_.step();
    row.lr = cfg_.learning_rate;
    row.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return row;
  }

  const WordSet& rgb_caption(const TrainSample& s) {
    {
      std::lock_guard lock(cache_mu_);
      if (auto it = rgb_cache_.find(s.id); it != rgb_cache_.end()) return it->second;
    }
    auto words = tokenize_words(caption(backend_, {s.rgb}).text);
    std::lock_guard lock(cache_mu_);
    return rgb_cache_.emplace(s.id, std::move(words)).first->second;
  }

  std::optional<std::filesystem::path> save(const std::string& name, std::uint64_t step) {
    if (opt_.out_dir.empty()) return std::nullopt;
    CheckpointMeta meta;
    meta.step = step;
    meta.extra = {{"train_config", cfg_}, {"adam_steps", adam_.steps()}};
    if (best_val_) meta.extra["best_val_dual"] = *best_val_;
    const auto path = opt_.out_dir / name;
    save_checkpoint(path, gen_, meta, adam_.state());
    return path;
  }

  std::uint64_t restore(const std::filesystem::path& path) {
    std::vector<NamedBuffer<T>> extra;
    const auto meta = load_checkpoint_into(path, gen_, &extra);
    adam_.restore(extra, meta.extra.value("adam_steps", meta.step));
    if (meta.extra.contains("best_val_dual")) best_val_ = meta.extra["best_val_dual"].template get<double>();
    return meta.step;
  }

  void write_metrics_header() {
    std::ofstream out(opt_.out_dir / "metrics.csv", std::ios::trunc);
    if (!out) throw Error(Errc::IOFailure, "cannot write metrics log in " + opt_.out_dir.string());
    out << kMetricsHeader << '\n';
  }

  void append_metric(const MetricRow& row) {
    if (opt_.out_dir.empty()) return;
    const auto path = opt_.out_dir / "metrics.csv";
    const bool fresh = !std::filesystem::exists(path);
    std::ofstream out(path, std::ios::app);
    if (fresh) out << kMetricsHeader << '\n';
    out << metric_csv_line(row) << '\n';
  }

  Generator<T>& gen_;
  Backend& backend_;
  TrainConfig cfg_;
  TrainOptions opt_;
  Adam<T> adam_;
  std::optional<double> best_val_;
  std::mutex cache_mu_;
  std::map<std::string, WordSet> rgb_cache_;
};

template <std::floating_point T>
TrainResult train(const std::vector<TrainSample>& train_set, const std::vector<TrainSample>& val_set,
                  Generator<T>& gen, Backend& backend, const TrainConfig& cfg, TrainOptions opt = {}) {
  return Trainer<T>(gen, backend, cfg, std::move(opt)).run(train_set, val_set);
}

}  // namespace evrep
