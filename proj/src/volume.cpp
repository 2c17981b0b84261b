#include "meshvox/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "meshvox/parallel.hpp"

namespace meshvox {

Volume::Volume(Shape3 shp, std::array<double, 3> spc)
    : data(static_cast<std::size_t>(shp[0]) * shp[1] * shp[2], 0.0f),
      shape(shp), spacing(spc) {
  validate();
}

LabelMask::LabelMask(Shape3 shp, std::array<double, 3> spc)
    : data(static_cast<std::size_t>(shp[0]) * shp[1] * shp[2], 0),
      shape(shp), spacing(spc) {
  validate();
}

namespace {

void check_grid(const Shape3& shape, const std::array<double, 3>& spacing,
                const Eigen::Matrix4d& affine, std::size_t n) {
  for (int s : shape)
    if (s < 1) throw std::invalid_argument("volume shape components must be >= 1");
  for (double s : spacing)
    if (!(s > 0.0)) throw std::invalid_argument("volume spacing components must be > 0");
  if (affine(3, 0) != 0 || affine(3, 1) != 0 || affine(3, 2) != 0 || affine(3, 3) != 1)
    throw std::invalid_argument("affine last row must be (0,0,0,1)");
  if (n != static_cast<std::size_t>(shape[0]) * shape[1] * shape[2])
    throw std::invalid_argument("data size does not match shape");
}

// Target grid: axis-aligned spacing with the translation chosen so the world
// coordinate of the grid center is preserved. Re-running with matching
// shape/spacing reproduces the same affine exactly, which makes conform
// idempotent.
Eigen::Matrix4d target_affine(const Eigen::Matrix4d& src_affine, const Shape3& src_shape,
                              const Shape3& tgt_shape, const std::array<double, 3>& tgt_spc) {
  Eigen::Vector4d src_center((src_shape[2] - 1) / 2.0, (src_shape[1] - 1) / 2.0,
                             (src_shape[0] - 1) / 2.0, 1.0);
  Eigen::Vector4d world_center = src_affine * src_center;
  Eigen::Matrix4d out = Eigen::Matrix4d::Identity();
  out(0, 0) = tgt_spc[0];
  out(1, 1) = tgt_spc[1];
  out(2, 2) = tgt_spc[2];
  out(0, 3) = world_center(0) - tgt_spc[0] * (tgt_shape[2] - 1) / 2.0;
  out(1, 3) = world_center(1) - tgt_spc[1] * (tgt_shape[1] - 1) / 2.0;
  out(2, 3) = world_center(2) - tgt_spc[2] * (tgt_shape[0] - 1) / 2.0;
  return out;
}

// Snap near-integer sample coordinates so identity resampling returns stored
// values bitwise.
double snap(double v) {
  double r = std::round(v);
  return std::abs(v - r) < 1e-6 ? r : v;
}

template <typename Src, typename Get>
void resample_grid(const Shape3& tgt_shape, const Eigen::Matrix4d& tgt_aff,
                   const Eigen::Matrix4d& src_inv, const Shape3& src_shape, Interp interp,
                   const Get& fetch, Src* out) {
  const int D = tgt_shape[0], H = tgt_shape[1], W = tgt_shape[2];
  const Eigen::Matrix4d idx_map = src_inv * tgt_aff;  // target index -> source index
  parallel_for(D, [&](std::int64_t z) {
    std::int64_t o = z * H * W;
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x, ++o) {
        Eigen::Vector4d u = idx_map * Eigen::Vector4d(x, y, z, 1.0);
        const double fx = snap(u(0)), fy = snap(u(1)), fz = snap(u(2));
        double val = 0.0;
        if (interp == Interp::nearest) {
          const int ix = static_cast<int>(std::lround(fx));
          const int iy = static_cast<int>(std::lround(fy));
          const int iz = static_cast<int>(std::lround(fz));
          if (ix >= 0 && iy >= 0 && iz >= 0 && ix < src_shape[2] && iy < src_shape[1] &&
              iz < src_shape[0])
            val = fetch(iz, iy, ix);
        } else {
          const int x0 = static_cast<int>(std::floor(fx));
          const int y0 = static_cast<int>(std::floor(fy));
          const int z0 = static_cast<int>(std::floor(fz));
          const double wx = fx - x0, wy = fy - y0, wz = fz - z0;
          for (int dz = 0; dz < 2; ++dz)
            for (int dy = 0; dy < 2; ++dy)
              for (int dx = 0; dx < 2; ++dx) {
                const double wgt = (dx ? wx : 1.0 - wx) * (dy ? wy : 1.0 - wy) *
                                   (dz ? wz : 1.0 - wz);
                if (wgt == 0.0) continue;
                const int ix = x0 + dx, iy = y0 + dy, iz = z0 + dz;
                if (ix < 0 || iy < 0 || iz < 0 || ix >= src_shape[2] ||
                    iy >= src_shape[1] || iz >= src_shape[0])
                  continue;  // zero outside the source grid
                val += wgt * fetch(iz, iy, ix);
              }
        }
        out[o] = static_cast<Src>(val);
      }
    }
  });
}

Eigen::Matrix4d invert_affine(const Eigen::Matrix4d& affine) {
  if (std::abs(affine.determinant()) < 1e-12)
    throw std::runtime_error("conform: source affine is not invertible");
  return affine.inverse();
}

}  // namespace

void Volume::validate() const { check_grid(shape, spacing, affine, data.size()); }

void LabelMask::validate() const {
  check_grid(shape, spacing, affine, data.size());
  for (std::uint8_t v : data)
    if (v > 1) throw std::invalid_argument("label mask values must be in {0,1}");
}

ConformResult conform(const Volume& v, Shape3 target_shape,
                      std::array<double, 3> target_spacing_mm, Interp interp) {
  v.validate();
  for (int s : target_shape)
    if (s < 1) throw std::invalid_argument("conform: target shape must be positive");

  ConformResult res;
  Volume& out = res.volume;
  out.shape = target_shape;
  out.spacing = target_spacing_mm;
  out.affine = target_affine(v.affine, v.shape, target_shape, target_spacing_mm);
  out.dtype_tag = DtypeTag::f32;
  out.data.assign(static_cast<std::size_t>(out.voxel_count()), 0.0f);

  const Eigen::Matrix4d src_inv = invert_affine(v.affine);

  // a constant source has no intensity range to normalize; padding zeros
  // introduced by a larger target FOV must not manufacture one
  const auto [src_mn, src_mx] = std::minmax_element(v.data.begin(), v.data.end());
  if (*src_mn == *src_mx) {
    res.degenerate_rescale = true;
    return res;
  }

  resample_grid(target_shape, out.affine, src_inv, v.shape, interp,
                [&](int z, int y, int x) -> double { return v.at(z, y, x); },
                out.data.data());

  const auto [mn_it, mx_it] = std::minmax_element(out.data.begin(), out.data.end());
  const float mn = *mn_it, mx = *mx_it;
  if (mn == mx) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    res.degenerate_rescale = true;
  } else {
    const float range = mx - mn;
    parallel_for(target_shape[0], [&](std::int64_t z) {
      const std::int64_t n = static_cast<std::int64_t>(target_shape[1]) * target_shape[2];
      float* p = out.data.data() + z * n;
      for (std::int64_t i = 0; i < n; ++i) p[i] = (p[i] - mn) / range;
    });
  }
  return res;
}

LabelMask conform_mask(const LabelMask& m, Shape3 target_shape,
                       std::array<double, 3> target_spacing_mm) {
  m.validate();
  LabelMask out;
  out.shape = target_shape;
  out.spacing = target_spacing_mm;
  out.affine = target_affine(m.affine, m.shape, target_shape, target_spacing_mm);
  out.data.assign(static_cast<std::size_t>(out.voxel_count()), 0);

  const Eigen::Matrix4d src_inv = invert_affine(m.affine);
  resample_grid(target_shape, out.affine, src_inv, m.shape, Interp::nearest,
                [&](int z, int y, int x) -> double { return m.data[m.index(z, y, x)]; },
                out.data.data());
  return out;
}

std::int64_t lesion_volume(const LabelMask& m) {
  m.validate();
  return std::count(m.data.begin(), m.data.end(), std::uint8_t(1));
}

}  // namespace meshvox
