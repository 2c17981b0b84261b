#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace meshvox {

// Dense C x D x H x W activation tensor, x fastest.
template <typename T>
struct Tensor4 {
  int c = 0, d = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int c_, int d_, int h_, int w_)
      : c(c_), d(d_), h(h_), w(w_),
        data(static_cast<std::size_t>(c_) * d_ * h_ * w_, T(0)) {
    if (c_ < 1 || d_ < 1 || h_ < 1 || w_ < 1)
      throw std::invalid_argument("Tensor4: all dims must be >= 1");
  }

  std::int64_t spatial_size() const {
    return static_cast<std::int64_t>(d) * h * w;
  }
  std::int64_t size() const { return static_cast<std::int64_t>(c) * spatial_size(); }

  std::int64_t index(int ci, int z, int y, int x) const {
    return ((static_cast<std::int64_t>(ci) * d + z) * h + y) * w + x;
  }
  T& at(int ci, int z, int y, int x) { return data[index(ci, z, y, x)]; }
  const T& at(int ci, int z, int y, int x) const { return data[index(ci, z, y, x)]; }

  // Re-dimensions without releasing capacity; used by buffer-reusing paths.
  void reshape(int c_, int d_, int h_, int w_) {
    if (c_ < 1 || d_ < 1 || h_ < 1 || w_ < 1)
      throw std::invalid_argument("Tensor4: all dims must be >= 1");
    c = c_; d = d_; h = h_; w = w_;
    data.resize(static_cast<std::size_t>(c_) * d_ * h_ * w_);
  }

  bool same_shape(const Tensor4& o) const {
    return c == o.c && d == o.d && h == o.h && w == o.w;
  }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out(c, d, h, w);
    for (std::int64_t i = 0; i < size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

using Shape3 = std::array<int, 3>;  // (D, H, W)

}  // namespace meshvox
