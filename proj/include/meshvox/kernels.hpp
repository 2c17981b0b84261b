#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "meshvox/parallel.hpp"
#include "meshvox/tensor.hpp"
#include "meshvox/volume.hpp"

namespace meshvox {

// Shape-preserving dilated 3D convolution: p = d*(k-1)/2, so p = d for k = 3
// and p = 0 for k = 1.
struct ConvSpec {
  int in_channels = 1;
  int out_channels = 1;
  int kernel = 3;    // per axis, 1 or 3
  int dilation = 1;  // per axis
  int padding = 1;

  static ConvSpec make(int in_c, int out_c, int k, int d) {
    if (k != 1 && k != 3) throw std::invalid_argument("ConvSpec: kernel must be 1 or 3");
    if (d < 1) throw std::invalid_argument("ConvSpec: dilation must be >= 1");
    return ConvSpec{in_c, out_c, k, d, d * (k - 1) / 2};
  }
};

template <typename T>
struct ConvWeights {
  // (out_c, in_c, k, k, k), x fastest; bias (out_c)
  std::vector<T> w;
  std::vector<T> bias;

  static ConvWeights zeros(const ConvSpec& s) {
    ConvWeights cw;
    cw.w.assign(static_cast<std::size_t>(s.out_channels) * s.in_channels * s.kernel *
                    s.kernel * s.kernel,
                T(0));
    cw.bias.assign(s.out_channels, T(0));
    return cw;
  }
  std::int64_t windex(const ConvSpec& s, int oc, int ic, int kz, int ky, int kx) const {
    return (((static_cast<std::int64_t>(oc) * s.in_channels + ic) * s.kernel + kz) *
                s.kernel + ky) * s.kernel + kx;
  }
};

template <typename T>
struct BatchNormState {
  std::vector<T> gamma, beta;
  std::vector<T> running_mean, running_var;
  T eps = T(1e-5);
  T momentum = T(0.1);

  static BatchNormState identity(int channels) {
    BatchNormState bn;
    bn.gamma.assign(channels, T(1));
    bn.beta.assign(channels, T(0));
    bn.running_mean.assign(channels, T(0));
    bn.running_var.assign(channels, T(1));
    return bn;
  }
  int channels() const { return static_cast<int>(gamma.size()); }
};

enum class BnMode { train, eval };

struct LossSpec {
  double label_smoothing = 0.01;
  double weight_background = 0.5;
  double weight_lesion = 1.0;
};

namespace detail {
template <typename T>
void check_conv_shapes(const Tensor4<T>& x, const ConvSpec& s, const ConvWeights<T>& cw) {
  if (x.c != s.in_channels)
    throw std::invalid_argument("conv3d: input channels do not match spec");
  if (s.padding != s.dilation * (s.kernel - 1) / 2)
    throw std::invalid_argument("conv3d: padding must preserve shape (p = d*(k-1)/2)");
  const std::size_t nw = static_cast<std::size_t>(s.out_channels) * s.in_channels *
                         s.kernel * s.kernel * s.kernel;
  if (cw.w.size() != nw || cw.bias.size() != static_cast<std::size_t>(s.out_channels))
    throw std::invalid_argument("conv3d: weight tensor shape does not match spec");
}
}  // namespace detail

// Per output voxel the accumulation iterates (c_in, kz, ky, kx) ascending
// with x innermost, so results are identical for any thread count.
// `out` must be pre-shaped to (out_channels, d, h, w); its storage is reused.
template <typename T>
void conv3d_forward_into(const Tensor4<T>& x, const ConvSpec& s, const ConvWeights<T>& cw,
                         Tensor4<T>& out) {
  detail::check_conv_shapes(x, s, cw);
  if (out.c != s.out_channels || out.d != x.d || out.h != x.h || out.w != x.w)
    throw std::invalid_argument("conv3d: output tensor shape mismatch");
  const int D = x.d, H = x.h, W = x.w, K = s.kernel, dil = s.dilation, pad = s.padding;

  parallel_for(static_cast<std::int64_t>(s.out_channels) * D, [&](std::int64_t job) {
    const int oc = static_cast<int>(job / D);
    const int z = static_cast<int>(job % D);
    std::vector<T> row(W);
    for (int y = 0; y < H; ++y) {
      std::fill(row.begin(), row.end(), cw.bias[oc]);
      for (int ic = 0; ic < s.in_channels; ++ic)
        for (int kz = 0; kz < K; ++kz) {
          const int iz = z + dil * kz - pad;
          if (iz < 0 || iz >= D) continue;
          for (int ky = 0; ky < K; ++ky) {
            const int iy = y + dil * ky - pad;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < K; ++kx) {
              const int shift = dil * kx - pad;
              const T wv = cw.w[cw.windex(s, oc, ic, kz, ky, kx)];
              const T* src = &x.data[x.index(ic, iz, iy, 0)];
              const int x_lo = std::max(0, -shift);
              const int x_hi = std::min(W, W - shift);
              for (int xi = x_lo; xi < x_hi; ++xi) row[xi] += wv * src[xi + shift];
            }
          }
        }
      std::copy(row.begin(), row.end(), &out.data[out.index(oc, z, y, 0)]);
    }
  });
}

template <typename T>
Tensor4<T> conv3d_forward(const Tensor4<T>& x, const ConvSpec& s, const ConvWeights<T>& cw) {
  Tensor4<T> out(s.out_channels, x.d, x.h, x.w);
  conv3d_forward_into(x, s, cw, out);
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor4<T> grad_x;
  ConvWeights<T> grad_w;
};

template <typename T>
ConvGrads<T> conv3d_backward(const Tensor4<T>& x, const ConvSpec& s,
                             const ConvWeights<T>& cw, const Tensor4<T>& grad_out) {
  detail::check_conv_shapes(x, s, cw);
  if (grad_out.c != s.out_channels || grad_out.d != x.d || grad_out.h != x.h ||
      grad_out.w != x.w)
    throw std::invalid_argument("conv3d_backward: grad_out shape mismatch");
  const int D = x.d, H = x.h, W = x.w, K = s.kernel, dil = s.dilation, pad = s.padding;

  ConvGrads<T> g{Tensor4<T>(s.in_channels, D, H, W), ConvWeights<T>::zeros(s)};

  // grad_x: scatter of grad_out through the flipped kernel, gathered per
  // input voxel. Parallel over (ic, z).
  parallel_for(static_cast<std::int64_t>(s.in_channels) * D, [&](std::int64_t job) {
    const int ic = static_cast<int>(job / D);
    const int z = static_cast<int>(job % D);
    for (int y = 0; y < H; ++y)
      for (int xi = 0; xi < W; ++xi) {
        T acc = T(0);
        for (int oc = 0; oc < s.out_channels; ++oc)
          for (int kz = 0; kz < K; ++kz) {
            const int oz = z - dil * kz + pad;
            if (oz < 0 || oz >= D) continue;
            for (int ky = 0; ky < K; ++ky) {
              const int oy = y - dil * ky + pad;
              if (oy < 0 || oy >= H) continue;
              for (int kx = 0; kx < K; ++kx) {
                const int ox = xi - dil * kx + pad;
                if (ox < 0 || ox >= W) continue;
                acc += cw.w[cw.windex(s, oc, ic, kz, ky, kx)] *
                       grad_out.data[grad_out.index(oc, oz, oy, ox)];
              }
            }
          }
        g.grad_x.data[g.grad_x.index(ic, z, y, xi)] = acc;
      }
  });

  // grad_w and grad_bias: each oc slice is independent.
  parallel_for(s.out_channels, [&](std::int64_t oc) {
    T bias_acc = T(0);
    for (int z = 0; z < D; ++z)
      for (int y = 0; y < H; ++y)
        for (int xi = 0; xi < W; ++xi)
          bias_acc += grad_out.data[grad_out.index(static_cast<int>(oc), z, y, xi)];
    g.grad_w.bias[oc] = bias_acc;

    for (int ic = 0; ic < s.in_channels; ++ic)
      for (int kz = 0; kz < K; ++kz)
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            T acc = T(0);
            for (int z = 0; z < D; ++z) {
              const int iz = z + dil * kz - pad;
              if (iz < 0 || iz >= D) continue;
              for (int y = 0; y < H; ++y) {
                const int iy = y + dil * ky - pad;
                if (iy < 0 || iy >= H) continue;
                const int shift = dil * kx - pad;
                const int x_lo = std::max(0, -shift);
                const int x_hi = std::min(W, W - shift);
                const T* go = &grad_out.data[grad_out.index(static_cast<int>(oc), z, y, 0)];
                const T* src = &x.data[x.index(ic, iz, iy, 0)];
                for (int xi = x_lo; xi < x_hi; ++xi) acc += go[xi] * src[xi + shift];
              }
            }
            g.grad_w.w[g.grad_w.windex(s, static_cast<int>(oc), ic, kz, ky, kx)] = acc;
          }
  });
  return g;
}

// y = gamma * (x - mu) / sqrt(var + eps) + beta, per channel over (D,H,W).
// Train mode uses batch statistics (batch size 1, so per-volume spatial
// stats) and updates running stats in place with the configured momentum.
template <typename T>
Tensor4<T> batchnorm_forward(const Tensor4<T>& x, BatchNormState<T>& bn, BnMode mode) {
  if (x.c != bn.channels())
    throw std::invalid_argument("batchnorm: channel count mismatch");
  const std::int64_t n = x.spatial_size();
  Tensor4<T> out(x.c, x.d, x.h, x.w);
  for (int c = 0; c < x.c; ++c) {
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xc(&x.data[c * n], n);
    T mu, var;
    if (mode == BnMode::train) {
      mu = xc.mean();
      var = (xc - mu).square().sum() / T(n);  // biased, as used for normalization
      bn.running_mean[c] = (T(1) - bn.momentum) * bn.running_mean[c] + bn.momentum * mu;
      const T unbiased = n > 1 ? var * T(n) / T(n - 1) : var;
      bn.running_var[c] = (T(1) - bn.momentum) * bn.running_var[c] + bn.momentum * unbiased;
    } else {
      mu = bn.running_mean[c];
      var = bn.running_var[c];
    }
    const T scale = bn.gamma[c] / std::sqrt(var + bn.eps);
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(&out.data[c * n], n) =
        (xc - mu) * scale + bn.beta[c];
  }
  return out;
}

template <typename T>
struct BnGrads {
  Tensor4<T> grad_x;
  std::vector<T> grad_gamma, grad_beta;
};

// Backward through train-mode normalization (batch statistics).
template <typename T>
BnGrads<T> batchnorm_backward(const Tensor4<T>& x, const BatchNormState<T>& bn,
                              const Tensor4<T>& grad_out) {
  if (x.c != bn.channels() || !x.same_shape(grad_out))
    throw std::invalid_argument("batchnorm_backward: shape mismatch");
  const std::int64_t n = x.spatial_size();
  BnGrads<T> g{Tensor4<T>(x.c, x.d, x.h, x.w), std::vector<T>(x.c, T(0)),
               std::vector<T>(x.c, T(0))};
  for (int c = 0; c < x.c; ++c) {
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> xc(&x.data[c * n], n);
    Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> go(&grad_out.data[c * n], n);
    const T mu = xc.mean();
    const T var = (xc - mu).square().sum() / T(n);
    const T inv_std = T(1) / std::sqrt(var + bn.eps);
    Eigen::Array<T, Eigen::Dynamic, 1> xhat = (xc - mu) * inv_std;

    g.grad_beta[c] = go.sum();
    g.grad_gamma[c] = (go * xhat).sum();
    // standard batchnorm gradient with batch statistics
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(&g.grad_x.data[c * n], n) =
        bn.gamma[c] * inv_std / T(n) *
        (T(n) * go - g.grad_beta[c] - xhat * g.grad_gamma[c]);
  }
  return g;
}

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
  Tensor4<T> out(x.c, x.d, x.h, x.w);
  for (std::int64_t i = 0; i < x.size(); ++i) out.data[i] = std::max(T(0), x.data[i]);
  return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
  if (!x.same_shape(grad_out))
    throw std::invalid_argument("relu_backward: shape mismatch");
  Tensor4<T> g(x.c, x.d, x.h, x.w);
  for (std::int64_t i = 0; i < x.size(); ++i)
    g.data[i] = x.data[i] > T(0) ? grad_out.data[i] : T(0);
  return g;
}

// Per-voxel softmax over channels, stabilized by max subtraction.
template <typename T>
Tensor4<T> softmax_channels(const Tensor4<T>& x) {
  if (x.c < 2) throw std::invalid_argument("softmax_channels: need C >= 2");
  const std::int64_t n = x.spatial_size();
  Tensor4<T> out(x.c, x.d, x.h, x.w);
  parallel_for(x.d, [&](std::int64_t z) {
    const std::int64_t plane = static_cast<std::int64_t>(x.h) * x.w;
    for (std::int64_t i = z * plane; i < (z + 1) * plane; ++i) {
      T mx = x.data[i];
      for (int c = 1; c < x.c; ++c) mx = std::max(mx, x.data[c * n + i]);
      T sum = T(0);
      for (int c = 0; c < x.c; ++c) {
        const T e = std::exp(x.data[c * n + i] - mx);
        out.data[c * n + i] = e;
        sum += e;
      }
      for (int c = 0; c < x.c; ++c) out.data[c * n + i] /= sum;
    }
  });
  return out;
}

// Argmax over channels; ties break toward the lower class index.
template <typename T>
LabelMask argmax_channels(const Tensor4<T>& x) {
  if (x.c < 2) throw std::invalid_argument("argmax_channels: need C >= 2");
  const std::int64_t n = x.spatial_size();
  LabelMask m({x.d, x.h, x.w}, {1, 1, 1});
  parallel_for(n, [&](std::int64_t i) {
    int best = 0;
    T bv = x.data[i];
    for (int c = 1; c < x.c; ++c)
      if (x.data[c * n + i] > bv) {
        bv = x.data[c * n + i];
        best = c;
      }
    m.data[i] = static_cast<std::uint8_t>(best);
  });
  return m;
}

template <typename T>
struct LossResult {
  T loss = T(0);
  Tensor4<T> grad_logits;
};

// Weighted label-smoothed cross-entropy over 2-class logits.
// Target distribution y = (1-eps)*onehot(c) + eps/2; per-voxel loss
// -w_c * sum_k y_k log p_k; reduction is the weighted mean over voxels.
template <typename T>
LossResult<T> weighted_smoothed_ce(const Tensor4<T>& logits, const LabelMask& target,
                                   const LossSpec& spec) {
  if (logits.c != 2) throw std::invalid_argument("loss: logits must have 2 channels");
  if (logits.d != target.shape[0] || logits.h != target.shape[1] ||
      logits.w != target.shape[2])
    throw std::invalid_argument("loss: logits/target shape mismatch");
  if (spec.label_smoothing < 0 || spec.label_smoothing >= 1)
    throw std::invalid_argument("loss: label_smoothing must be in [0,1)");
  if (spec.weight_background < 0 || spec.weight_lesion < 0 ||
      (spec.weight_background == 0 && spec.weight_lesion == 0))
    throw std::invalid_argument("loss: class weights invalid");

  const std::int64_t n = logits.spatial_size();
  const T eps = T(spec.label_smoothing);
  const T wgt[2] = {T(spec.weight_background), T(spec.weight_lesion)};

  LossResult<T> res;
  res.grad_logits = Tensor4<T>(2, logits.d, logits.h, logits.w);
  T loss_sum = T(0), weight_sum = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::uint8_t cls = target.data[i];
    if (cls > 1) throw std::invalid_argument("loss: target labels must be in {0,1}");
    const T l0 = logits.data[i], l1 = logits.data[n + i];
    const T mx = std::max(l0, l1);
    const T e0 = std::exp(l0 - mx), e1 = std::exp(l1 - mx);
    const T lse = mx + std::log(e0 + e1);
    const T y0 = (cls == 0 ? T(1) - eps : T(0)) + eps / T(2);
    const T y1 = (cls == 1 ? T(1) - eps : T(0)) + eps / T(2);
    const T w = wgt[cls];
    loss_sum += w * (y0 * (lse - l0) + y1 * (lse - l1));
    weight_sum += w;
    const T p0 = e0 / (e0 + e1), p1 = e1 / (e0 + e1);
    res.grad_logits.data[i] = w * (p0 - y0);
    res.grad_logits.data[n + i] = w * (p1 - y1);
  }
  res.loss = loss_sum / weight_sum;
  for (std::int64_t i = 0; i < 2 * n; ++i) res.grad_logits.data[i] /= weight_sum;
  if (!std::isfinite(static_cast<double>(res.loss)))
    throw std::runtime_error("loss: non-finite value");
  return res;
}

}  // namespace meshvox
