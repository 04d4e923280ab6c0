#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <unordered_set>
#include <utility>
#include <vector>

#include "evrep/tensor.hpp"

// Minimal reverse-mode differentiation over NCHW tensors. Each op allocates a
// node holding its value and, when any input needs gradients, a closure that
// pushes the output gradient back into its inputs.

namespace evrep::ag {

template <std::floating_point T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  bool requires_grad = false;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>::like(value);
    return grad;
  }
  void zero_grad() { grad = Tensor<T>(); }
};

template <std::floating_point T>
using Var = std::shared_ptr<Node<T>>;

namespace detail {
inline thread_local bool grad_enabled = true;
}

/// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <std::floating_point T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  return n;
}

template <std::floating_point T>
Var<T> parameter(Tensor<T> value) {
  auto n = constant(std::move(value));
  n->requires_grad = true;
  return n;
}

namespace detail {

template <std::floating_point T, class Fn>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> inputs, Fn&& backward) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  const bool needs = grad_enabled && std::any_of(inputs.begin(), inputs.end(), [](const Var<T>& v) {
                       return v && v->requires_grad;
                     });
  if (needs) {
    n->requires_grad = true;
    n->inputs = std::move(inputs);
    n->backward = std::forward<Fn>(backward);
  }
  return n;
}

}  // namespace detail

/// Back-propagates `seed` (same shape as root's value) through the graph.
template <std::floating_point T>
void backward(const Var<T>& root, const Tensor<T>& seed) {
  require_same_shape(root->value, seed, "backward seed");
  if (!root->requires_grad) return;
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  // iterative post-order DFS
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root.get(), 0}};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node<T>* child = node->inputs[next++].get();
      if (child && child->requires_grad && seen.insert(child).second) stack.push_back({child, 0});
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  auto& g = root->grad_buffer();
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += seed.data[i];
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward && !node->grad.empty()) node->backward(*node);
  }
}

/// Same-padded, stride-1 2-D convolution (cross-correlation). weight is
/// Cout x (Cin / groups) x k x k with odd k; bias may be null.
template <std::floating_point T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int groups = 1) {
  const auto& in = x->value;
  const auto& w = weight->value;
  const int N = in.n(), Cin = in.c(), H = in.h(), W = in.w();
  const int Cout = w.n(), k = w.h(), pad = k / 2;
  if (groups < 1 || Cin % groups || Cout % groups || w.c() != Cin / groups || w.w() != k || k % 2 == 0) {
    throw Error(Errc::ShapeMismatch, "conv2d: input " + shape_string(in.shape) + " weight " + shape_string(w.shape));
  }
  const int cin_g = Cin / groups, cout_g = Cout / groups;
  Tensor<T> out(N, Cout, H, W);
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < Cout; ++co) {
      T* o = out.plane_ptr(n, co);
      if (bias) std::fill(o, o + out.plane(), bias->value.data[co]);
      const int g = co / cout_g;
      for (int cig = 0; cig < cin_g; ++cig) {
        const T* src = in.plane_ptr(n, g * cin_g + cig);
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky - pad;
          const int y_lo = std::max(0, -dy), y_hi = std::min(H, H - dy);
          for (int kx = 0; kx < k; ++kx) {
            const int dx = kx - pad;
            const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
            const T wv = w(co, cig, ky, kx);
            for (int y = y_lo; y < y_hi; ++y) {
              T* orow = o + std::size_t(y) * W;
              const T* srow = src + std::size_t(y + dy) * W + dx;
              for (int xx = x_lo; xx < x_hi; ++xx) orow[xx] += wv * srow[xx];
            }
          }
        }
      }
    }
  }
  return detail::make_op<T>(std::move(out), {x, weight, bias}, [groups, cin_g, cout_g, k, pad](Node<T>& self) {
    const auto& go = self.grad;
    auto& xin = self.inputs[0];
    auto& wt = self.inputs[1];
    auto& b = self.inputs[2];
    const auto& in = xin->value;
    const auto& w = wt->value;
    const int N = in.n(), H = in.h(), W = in.w(), Cout = w.n();
    Tensor<T>* gx = xin->requires_grad ? &xin->grad_buffer() : nullptr;
    Tensor<T>* gw = wt->requires_grad ? &wt->grad_buffer() : nullptr;
    if (b && b->requires_grad) {
      auto& gb = b->grad_buffer();
      for (int n = 0; n < N; ++n)
        for (int co = 0; co < Cout; ++co) {
          const T* g = go.plane_ptr(n, co);
          T s = 0;
          for (std::size_t i = 0; i < go.plane(); ++i) s += g[i];
          gb.data[co] += s;
        }
    }
    for (int n = 0; n < N; ++n) {
      for (int co = 0; co < Cout; ++co) {
        const T* g = go.plane_ptr(n, co);
        const int grp = co / cout_g;
        for (int cig = 0; cig < cin_g; ++cig) {
          const int ci = grp * cin_g + cig;
          const T* src = in.plane_ptr(n, ci);
          T* dst = gx ? gx->plane_ptr(n, ci) : nullptr;
          for (int ky = 0; ky < k; ++ky) {
            const int dy = ky - pad;
            const int y_lo = std::max(0, -dy), y_hi = std::min(H, H - dy);
            for (int kx = 0; kx < k; ++kx) {
              const int dx = kx - pad;
              const int x_lo = std::max(0, -dx), x_hi = std::min(W, W - dx);
              const T wv = w(co, cig, ky, kx);
              T acc = 0;
              for (int y = y_lo; y < y_hi; ++y) {
                const T* grow = g + std::size_t(y) * W;
                const std::size_t off = std::size_t(y + dy) * W + dx;
                if (gw) {
                  const T* srow = src + off;
                  for (int xx = x_lo; xx < x_hi; ++xx) acc += grow[xx] * srow[xx];
                }
                if (dst) {
                  T* drow = dst + off;
                  for (int xx = x_lo; xx < x_hi; ++xx) drow[xx] += wv * grow[xx];
                }
              }
              if (gw) (*gw)(co, cig, ky, kx) += acc;
            }
          }
        }
      }
    }
    (void)groups;
  });
}

/// Running statistics owned by the model; only written in training mode.
template <std::floating_point T>
struct BatchNormStats {
  Tensor<T>* running_mean = nullptr;
  Tensor<T>* running_var = nullptr;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Per-channel normalisation. Training mode uses batch statistics (biased
/// variance) and updates the running estimates when `stats` is writable;
/// inference mode applies the running estimates.
template <std::floating_point T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, const Tensor<T>& running_mean,
                  const Tensor<T>& running_var, bool training, BatchNormStats<T> update = {}) {
  const auto& in = x->value;
  const int N = in.n(), C = in.c();
  const std::size_t P = in.plane();
  const double M = double(N) * double(P);
  std::vector<T> mean(C), invstd(C);
  for (int c = 0; c < C; ++c) {
    if (training) {
      double s = 0, ss = 0;
      for (int n = 0; n < N; ++n) {
        const T* p = in.plane_ptr(n, c);
        for (std::size_t i = 0; i < P; ++i) s += p[i];
      }
      const double mu = s / M;
      for (int n = 0; n < N; ++n) {
        const T* p = in.plane_ptr(n, c);
        for (std::size_t i = 0; i < P; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      const double var = ss / M;
      mean[c] = T(mu);
      invstd[c] = T(1.0 / std::sqrt(var + kBatchNormEps));
      if (update.running_mean) {
        const double unbiased = M > 1 ? ss / (M - 1) : var;
        auto& rm = update.running_mean->data[c];
        auto& rv = update.running_var->data[c];
        rm = T((1 - kBatchNormMomentum) * rm + kBatchNormMomentum * mu);
        rv = T((1 - kBatchNormMomentum) * rv + kBatchNormMomentum * unbiased);
      }
    } else {
      mean[c] = running_mean.data[c];
      invstd[c] = T(1.0 / std::sqrt(double(running_var.data[c]) + kBatchNormEps));
    }
  }
  Tensor<T> xhat = Tensor<T>::like(in);
  Tensor<T> out = Tensor<T>::like(in);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = in.plane_ptr(n, c);
      T* h = xhat.plane_ptr(n, c);
      T* o = out.plane_ptr(n, c);
      const T g = gamma->value.data[c], b = beta->value.data[c];
      for (std::size_t i = 0; i < P; ++i) {
        h[i] = (p[i] - mean[c]) * invstd[c];
        o[i] = g * h[i] + b;
      }
    }
  return detail::make_op<T>(std::move(out), {x, gamma, beta},
                            [xhat = std::move(xhat), invstd = std::move(invstd), training, M](Node<T>& self) {
    const auto& go = self.grad;
    auto& xin = self.inputs[0];
    auto& gm = self.inputs[1];
    auto& bt = self.inputs[2];
    const int N = go.n(), C = go.c();
    const std::size_t P = go.plane();
    for (int c = 0; c < C; ++c) {
      double sum_g = 0, sum_gx = 0;
      for (int n = 0; n < N; ++n) {
        const T* g = go.plane_ptr(n, c);
        const T* h = xhat.plane_ptr(n, c);
        for (std::size_t i = 0; i < P; ++i) {
          sum_g += g[i];
          sum_gx += g[i] * h[i];
        }
      }
      if (gm->requires_grad) gm->grad_buffer().data[c] += T(sum_gx);
      if (bt->requires_grad) bt->grad_buffer().data[c] += T(sum_g);
      if (!xin->requires_grad) continue;
      const T gam = gm->value.data[c];
      auto& gx = xin->grad_buffer();
      for (int n = 0; n < N; ++n) {
        const T* g = go.plane_ptr(n, c);
        const T* h = xhat.plane_ptr(n, c);
        T* d = gx.plane_ptr(n, c);
        if (training) {
          const T scale = T(gam * invstd[c] / M);
          for (std::size_t i = 0; i < P; ++i) d[i] += scale * T(M * g[i] - sum_g - h[i] * sum_gx);
        } else {
          for (std::size_t i = 0; i < P; ++i) d[i] += gam * invstd[c] * g[i];
        }
      }
    }
  });
}

template <std::floating_point T>
T sigmoid_scalar(T v) {
  return v >= 0 ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
}

template <std::floating_point T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = Tensor<T>::like(x->value);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = sigmoid_scalar(x->value.data[i]);
  return detail::make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
      const T s = self.value.data[i];
      gx.data[i] += self.grad.data[i] * s * (T(1) - s);
    }
  });
}

/// x * sigmoid(x)
template <std::floating_point T>
Var<T> silu(const Var<T>& x) {
  Tensor<T> out = Tensor<T>::like(x->value);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const T v = x->value.data[i];
    out.data[i] = v * sigmoid_scalar(v);
  }
  return detail::make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    const auto& in = self.inputs[0]->value;
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < gx.data.size(); ++i) {
      const T v = in.data[i];
      const T s = sigmoid_scalar(v);
      gx.data[i] += self.grad.data[i] * (s + v * s * (T(1) - s));
    }
  });
}

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  require_same_shape(a->value, b->value, "add");
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& in : self.inputs) {
      if (!in->requires_grad) continue;
      auto& g = in->grad_buffer();
      for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] += self.grad.data[i];
    }
  });
}

/// Mean over each channel plane: N x C x H x W -> N x C x 1 x 1.
template <std::floating_point T>
Var<T> global_avg_pool(const Var<T>& x) {
  const auto& in = x->value;
  Tensor<T> out(in.n(), in.c(), 1, 1);
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c) {
      const T* p = in.plane_ptr(n, c);
      T s = 0;
      for (std::size_t i = 0; i < in.plane(); ++i) s += p[i];
      out(n, c, 0, 0) = s / T(in.plane());
    }
  return detail::make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const T inv = T(1) / T(gx.plane());
    for (int n = 0; n < gx.n(); ++n)
      for (int c = 0; c < gx.c(); ++c) {
        const T g = self.grad(n, c, 0, 0) * inv;
        T* d = gx.plane_ptr(n, c);
        for (std::size_t i = 0; i < gx.plane(); ++i) d[i] += g;
      }
  });
}

/// x scaled per (n, c) by s, where s is N x C x 1 x 1.
template <std::floating_point T>
Var<T> scale_channels(const Var<T>& x, const Var<T>& s) {
  const auto& in = x->value;
  if (s->value.n() != in.n() || s->value.c() != in.c() || s->value.plane() != 1) {
    throw Error(Errc::ShapeMismatch, "scale_channels: " + shape_string(in.shape) + " by " + shape_string(s->value.shape));
  }
  Tensor<T> out = in;
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c) {
      const T k = s->value(n, c, 0, 0);
      T* o = out.plane_ptr(n, c);
      for (std::size_t i = 0; i < in.plane(); ++i) o[i] *= k;
    }
  return detail::make_op<T>(std::move(out), {x, s}, [](Node<T>& self) {
    auto& xin = self.inputs[0];
    auto& sc = self.inputs[1];
    const auto& in = xin->value;
    for (int n = 0; n < in.n(); ++n)
      for (int c = 0; c < in.c(); ++c) {
        const T* g = self.grad.plane_ptr(n, c);
        if (sc->requires_grad) {
          const T* p = in.plane_ptr(n, c);
          T acc = 0;
          for (std::size_t i = 0; i < in.plane(); ++i) acc += g[i] * p[i];
          sc->grad_buffer()(n, c, 0, 0) += acc;
        }
        if (xin->requires_grad) {
          const T k = sc->value(n, c, 0, 0);
          T* d = xin->grad_buffer().plane_ptr(n, c);
          for (std::size_t i = 0; i < in.plane(); ++i) d[i] += k * g[i];
        }
      }
  });
}

/// 2x2 max pooling, stride 2 (odd trailing row/column dropped).
template <std::floating_point T>
Var<T> max_pool2(const Var<T>& x) {
  const auto& in = x->value;
  const int Ho = in.h() / 2, Wo = in.w() / 2;
  Tensor<T> out(in.n(), in.c(), Ho, Wo);
  std::vector<std::size_t> argmax(out.numel());
  std::size_t k = 0;
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c) {
      const T* p = in.plane_ptr(n, c);
      const std::size_t base = (std::size_t(n) * in.c() + c) * in.plane();
      for (int y = 0; y < Ho; ++y)
        for (int xx = 0; xx < Wo; ++xx, ++k) {
          std::size_t best = std::size_t(2 * y) * in.w() + 2 * xx;
          for (std::size_t cand : {best + 1, best + in.w(), best + in.w() + 1}) {
            if (p[cand] > p[best]) best = cand;
          }
          out.data[k] = p[best];
          argmax[k] = base + best;
        }
    }
  return detail::make_op<T>(std::move(out), {x}, [argmax = std::move(argmax)](Node<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < argmax.size(); ++i) gx.data[argmax[i]] += self.grad.data[i];
  });
}

/// Bilinear 2x upsampling with half-pixel centres (align_corners = false).
template <std::floating_point T>
Var<T> upsample_bilinear2(const Var<T>& x) {
  const auto& in = x->value;
  const int H = in.h(), W = in.w(), Ho = 2 * H, Wo = 2 * W;
  struct Tap {
    int i0, i1;
    T w1;
  };
  auto taps = [](int size_in, int size_out) {
    std::vector<Tap> t(size_out);
    for (int o = 0; o < size_out; ++o) {
      const double src = std::max(0.0, (o + 0.5) * 0.5 - 0.5);
      const int i0 = std::min(int(src), size_in - 1);
      t[o] = {i0, std::min(i0 + 1, size_in - 1), T(src - i0)};
    }
    return t;
  };
  auto ty = taps(H, Ho), tx = taps(W, Wo);
  Tensor<T> out(in.n(), in.c(), Ho, Wo);
  for (int n = 0; n < in.n(); ++n)
    for (int c = 0; c < in.c(); ++c) {
      const T* p = in.plane_ptr(n, c);
      T* o = out.plane_ptr(n, c);
      for (int y = 0; y < Ho; ++y) {
        const auto [y0, y1, wy] = ty[y];
        for (int xx = 0; xx < Wo; ++xx) {
          const auto [x0, x1, wx] = tx[xx];
          const T top = p[y0 * W + x0] * (1 - wx) + p[y0 * W + x1] * wx;
          const T bot = p[y1 * W + x0] * (1 - wx) + p[y1 * W + x1] * wx;
          o[std::size_t(y) * Wo + xx] = top * (1 - wy) + bot * wy;
        }
      }
    }
  return detail::make_op<T>(std::move(out), {x}, [ty = std::move(ty), tx = std::move(tx)](Node<T>& self) {
    auto& gx = self.inputs[0]->grad_buffer();
    const int W = gx.w(), Ho = self.grad.h(), Wo = self.grad.w();
    for (int n = 0; n < gx.n(); ++n)
      for (int c = 0; c < gx.c(); ++c) {
        const T* g = self.grad.plane_ptr(n, c);
        T* d = gx.plane_ptr(n, c);
        for (int y = 0; y < Ho; ++y) {
          const auto [y0, y1, wy] = ty[y];
          for (int xx = 0; xx < Wo; ++xx) {
            const auto [x0, x1, wx] = tx[xx];
            const T v = g[std::size_t(y) * Wo + xx];
            d[y0 * W + x0] += v * (1 - wy) * (1 - wx);
            d[y0 * W + x1] += v * (1 - wy) * wx;
            d[y1 * W + x0] += v * wy * (1 - wx);
            d[y1 * W + x1] += v * wy * wx;
          }
        }
      }
  });
}

/// Channel concatenation [a, b].
template <std::floating_point T>
Var<T> concat_channels(const Var<T>& a, const Var<T>& b) {
  const auto& A = a->value;
  const auto& B = b->value;
  if (A.n() != B.n() || A.h() != B.h() || A.w() != B.w()) {
    throw Error(Errc::ShapeMismatch, "concat: " + shape_string(A.shape) + " with " + shape_string(B.shape));
  }
  Tensor<T> out(A.n(), A.c() + B.c(), A.h(), A.w());
  const std::size_t P = A.plane();
  for (int n = 0; n < A.n(); ++n) {
    std::copy_n(A.plane_ptr(n, 0), A.c() * P, out.plane_ptr(n, 0));
    std::copy_n(B.plane_ptr(n, 0), B.c() * P, out.plane_ptr(n, A.c()));
  }
  return detail::make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    auto& ia = self.inputs[0];
    auto& ib = self.inputs[1];
    const int Ca = ia->value.c(), Cb = ib->value.c();
    const std::size_t P = self.grad.plane();
    for (int n = 0; n < self.grad.n(); ++n) {
      if (ia->requires_grad) {
        const T* g = self.grad.plane_ptr(n, 0);
        T* d = ia->grad_buffer().plane_ptr(n, 0);
        for (std::size_t i = 0; i < Ca * P; ++i) d[i] += g[i];
      }
      if (ib->requires_grad) {
        const T* g = self.grad.plane_ptr(n, Ca);
        T* d = ib->grad_buffer().plane_ptr(n, 0);
        for (std::size_t i = 0; i < Cb * P; ++i) d[i] += g[i];
      }
    }
  });
}

}  // namespace evrep::ag
