#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "evrep/error.hpp"
#include "evrep/image.hpp"
#include "evrep/tensor.hpp"

namespace evrep {

// ---------------------------------------------------------------------------
// Semantic consistency
// ---------------------------------------------------------------------------

struct WordSet {
  std::set<std::string> words;

  std::size_t size() const noexcept { return words.size(); }
  bool empty() const noexcept { return words.empty(); }
  bool contains(const std::string& w) const { return words.count(w) != 0; }
  friend bool operator==(const WordSet&, const WordSet&) = default;
};

/// Lowercases and splits on every ASCII character that is not a letter or
/// digit. Bytes >= 0x80 are kept inside words so UTF-8 text is not shredded.
inline WordSet tokenize_words(std::string_view text) {
  WordSet out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.words.insert(std::move(cur));
    cur.clear();
  };
  for (unsigned char ch : text) {
    if (ch >= 0x80 || std::isalnum(ch)) {
      cur.push_back(char(std::tolower(ch)));
    } else {
      flush();
    }
  }
  flush();
  return out;
}

/// 1 - |A n B| / |A u B|; two empty sets count as identical (loss 0).
inline double jaccard_loss(const WordSet& a, const WordSet& b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0;
  for (const auto& w : a.words) inter += b.words.count(w);
  const std::size_t uni = a.size() + b.size() - inter;
  return 1.0 - double(inter) / double(uni);
}

inline double jaccard_loss(std::string_view text_e, std::string_view text_r) {
  return jaccard_loss(tokenize_words(text_e), tokenize_words(text_r));
}

// ---------------------------------------------------------------------------
// Structural fidelity
// ---------------------------------------------------------------------------

inline constexpr double kSobelEps = 1e-12;
inline constexpr double kGrayR = 0.299, kGrayG = 0.587, kGrayB = 0.114;
inline constexpr int kSobelX[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
inline constexpr int kSobelY[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};

enum class EdgeSource { output, target };

/// Sobel gradient magnitude, one value per pixel.
template <std::floating_point T>
struct EdgeMap {
  int height = 0;
  int width = 0;
  std::vector<T> values;
  EdgeSource source = EdgeSource::output;

  T at(int y, int x) const { return values[std::size_t(y) * width + x]; }
};

namespace detail {

inline int clamp_index(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

/// gx, gy, g for one grayscale plane; borders replicate the edge pixel.
template <std::floating_point T>
void sobel_plane(const T* gray, int H, int W, T* gx, T* gy, T* g) {
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      T sx = 0, sy = 0;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const T v = gray[std::size_t(clamp_index(y + dy, H)) * W + clamp_index(x + dx, W)];
          sx += T(kSobelX[dy + 1][dx + 1]) * v;
          sy += T(kSobelY[dy + 1][dx + 1]) * v;
        }
      const std::size_t i = std::size_t(y) * W + x;
      gx[i] = sx;
      gy[i] = sy;
      g[i] = std::sqrt(sx * sx + sy * sy + T(kSobelEps));
    }
}

template <std::floating_point T>
std::vector<T> gray_plane(const Tensor<T>& t, int n) {
  std::vector<T> gray(t.plane());
  const T* r = t.plane_ptr(n, 0);
  const T* gch = t.plane_ptr(n, 1);
  const T* b = t.plane_ptr(n, 2);
  for (std::size_t i = 0; i < gray.size(); ++i) gray[i] = T(kGrayR) * r[i] + T(kGrayG) * gch[i] + T(kGrayB) * b[i];
  return gray;
}

}  // namespace detail

/// Grayscale (ITU-R 601 weights), then G = sqrt(Gx^2 + Gy^2 + eps).
template <std::floating_point T>
EdgeMap<T> sobel_edge_map(const BasicImage<T>& img, EdgeSource source = EdgeSource::output) {
  const auto t = image_to_tensor<T>(img);
  const auto gray = detail::gray_plane(t, 0);
  EdgeMap<T> out{img.height, img.width, std::vector<T>(gray.size()), source};
  std::vector<T> gx(gray.size()), gy(gray.size());
  detail::sobel_plane(gray.data(), img.height, img.width, gx.data(), gy.data(), out.values.data());
  return out;
}

template <std::floating_point T>
struct FidelityResult {
  T loss = 0;
  Tensor<T> grad;  // d loss / d output, same shape as the output batch
};

/// Mean over every pixel of the batch of (G(output) - G(target))^2, with its
/// analytic gradient with respect to the output batch.
template <std::floating_point T>
FidelityResult<T> fidelity_loss_and_grad(const Tensor<T>& output, const Tensor<T>& target) {
  require_same_shape(output, target, "fidelity_loss");
  if (output.c() != 3) throw Error(Errc::ShapeMismatch, "fidelity_loss expects 3-channel images");
  const int N = output.n(), H = output.h(), W = output.w();
  const std::size_t P = output.plane();
  const T inv_count = T(1) / T(double(N) * double(P));
  FidelityResult<T> res;
  res.grad = Tensor<T>::like(output);
  std::vector<T> gx(P), gy(P), go(P), tx(P), ty(P), gt(P), dgray(P);
  double total = 0;
  for (int n = 0; n < N; ++n) {
    const auto og = detail::gray_plane(output, n);
    const auto tg = detail::gray_plane(target, n);
    detail::sobel_plane(og.data(), H, W, gx.data(), gy.data(), go.data());
    detail::sobel_plane(tg.data(), H, W, tx.data(), ty.data(), gt.data());
    std::fill(dgray.begin(), dgray.end(), T(0));
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const std::size_t i = std::size_t(y) * W + x;
        const T diff = go[i] - gt[i];
        total += double(diff) * double(diff);
        // dL/dG = 2 diff / count; dG/dGx = Gx / G
        const T dg = T(2) * diff * inv_count / go[i];
        const T dgx = dg * gx[i], dgy = dg * gy[i];
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const std::size_t j =
                std::size_t(detail::clamp_index(y + dy, H)) * W + detail::clamp_index(x + dx, W);
            dgray[j] += T(kSobelX[dy + 1][dx + 1]) * dgx + T(kSobelY[dy + 1][dx + 1]) * dgy;
          }
      }
    T* r = res.grad.plane_ptr(n, 0);
    T* g = res.grad.plane_ptr(n, 1);
    T* b = res.grad.plane_ptr(n, 2);
    for (std::size_t i = 0; i < P; ++i) {
      r[i] = T(kGrayR) * dgray[i];
      g[i] = T(kGrayG) * dgray[i];
      b[i] = T(kGrayB) * dgray[i];
    }
  }
  res.loss = T(total * inv_count);
  return res;
}

template <std::floating_point T>
T fidelity_loss(const BasicImage<T>& output, const BasicImage<T>& target) {
  if (!output.same_shape(target)) {
    throw Error(Errc::ShapeMismatch, "fidelity_loss: " + std::to_string(output.height) + "x" +
                                         std::to_string(output.width) + " vs " + std::to_string(target.height) +
                                         "x" + std::to_string(target.width));
  }
  const auto a = sobel_edge_map(output, EdgeSource::output);
  const auto b = sobel_edge_map(target, EdgeSource::target);
  double s = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = double(a.values[i]) - double(b.values[i]);
    s += d * d;
  }
  return T(s / double(a.values.size()));
}

// ---------------------------------------------------------------------------
// Dual alignment
// ---------------------------------------------------------------------------

struct LossWeights {
  double lambda_semantic = 1.0;
  double gamma_fidelity = 1.0;

  void validate() const {
    if (!(lambda_semantic >= 0.0) || !(gamma_fidelity >= 0.0)) {
      throw Error(Errc::InvalidWeights, "loss weights must be nonnegative");
    }
    if (lambda_semantic == 0.0 && gamma_fidelity == 0.0) {
      throw Error(Errc::InvalidWeights, "lambda and gamma cannot both be zero");
    }
  }
};

struct DualLossBreakdown {
  double semantic = 0.0;
  double fidelity = 0.0;
  double dual = 0.0;
  double lambda = 1.0;
  double gamma = 1.0;
};

inline DualLossBreakdown dual_loss(double semantic, double fidelity, LossWeights w) {
  w.validate();
  return {semantic, fidelity, w.lambda_semantic * semantic + w.gamma_fidelity * fidelity, w.lambda_semantic,
          w.gamma_fidelity};
}

}  // namespace evrep
