#pragma once

#include <array>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "evrep/error.hpp"
#include "evrep/image.hpp"

namespace evrep {

/// Dense N x C x H x W tensor, row-major.
template <std::floating_point T>
struct Tensor {
  std::array<int, 4> shape{0, 0, 0, 0};
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n, int c, int h, int w, T fill = T(0))
      : shape{n, c, h, w}, data(std::size_t(n) * c * h * w, fill) {}
  static Tensor like(const Tensor& o, T fill = T(0)) { return Tensor(o.n(), o.c(), o.h(), o.w(), fill); }

  int n() const noexcept { return shape[0]; }
  int c() const noexcept { return shape[1]; }
  int h() const noexcept { return shape[2]; }
  int w() const noexcept { return shape[3]; }
  std::size_t numel() const noexcept { return data.size(); }
  std::size_t plane() const noexcept { return std::size_t(h()) * w(); }
  bool empty() const noexcept { return data.empty(); }

  T& operator()(int in, int ic, int y, int x) {
    return data[((std::size_t(in) * c() + ic) * h() + y) * w() + x];
  }
  T operator()(int in, int ic, int y, int x) const {
    return data[((std::size_t(in) * c() + ic) * h() + y) * w() + x];
  }
  T* plane_ptr(int in, int ic) { return data.data() + (std::size_t(in) * c() + ic) * plane(); }
  const T* plane_ptr(int in, int ic) const { return data.data() + (std::size_t(in) * c() + ic) * plane(); }

  bool same_shape(const Tensor& o) const noexcept { return shape == o.shape; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_string(const std::array<int, 4>& s) {
  return std::to_string(s[0]) + "x" + std::to_string(s[1]) + "x" + std::to_string(s[2]) + "x" + std::to_string(s[3]);
}

template <std::floating_point T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(Errc::ShapeMismatch, std::string(what) + ": " + shape_string(a.shape) + " vs " + shape_string(b.shape));
  }
}

/// Stacks HWC images into an N x 3 x H x W tensor.
template <std::floating_point T, std::floating_point U>
Tensor<T> images_to_tensor(std::span<const BasicImage<U>> images) {
  if (images.empty()) throw Error(Errc::ShapeMismatch, "empty image batch");
  const int h = images[0].height, w = images[0].width;
  Tensor<T> t(int(images.size()), 3, h, w);
  for (std::size_t n = 0; n < images.size(); ++n) {
    const auto& img = images[n];
    if (img.height != h || img.width != w) throw Error(Errc::ShapeMismatch, "images in a batch differ in size");
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) t(int(n), c, y, x) = T(img.at(y, x, c));
  }
  return t;
}

template <std::floating_point T, std::floating_point U>
Tensor<T> image_to_tensor(const BasicImage<U>& img) {
  return images_to_tensor<T, U>(std::span<const BasicImage<U>>(&img, 1));
}

template <std::floating_point U, std::floating_point T>
BasicImage<U> tensor_to_image(const Tensor<T>& t, int index = 0) {
  if (t.c() != 3) throw Error(Errc::ShapeMismatch, "expected 3 channels, got " + std::to_string(t.c()));
  BasicImage<U> img(t.h(), t.w());
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < t.h(); ++y)
      for (int x = 0; x < t.w(); ++x) img.at(y, x, c) = U(t(index, c, y, x));
  return img;
}

template <std::floating_point T>
T squared_norm(const Tensor<T>& t) {
  T s = 0;
  for (T v : t.data) s += v * v;
  return s;
}

}  // namespace evrep
