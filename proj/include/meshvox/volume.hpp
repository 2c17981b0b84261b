#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "meshvox/tensor.hpp"

namespace meshvox {

enum class DtypeTag { u8, i16, f32 };
enum class Interp { nearest, trilinear };

// A 3D scalar grid with spatial metadata. Data is stored [z][y][x] with x
// fastest; the affine maps voxel indices (x, y, z, 1) to world mm.
struct Volume {
  std::vector<float> data;
  Shape3 shape{0, 0, 0};                       // (D, H, W) = (nz, ny, nx)
  std::array<double, 3> spacing{1, 1, 1};      // (sx, sy, sz) mm/voxel
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();
  DtypeTag dtype_tag = DtypeTag::f32;

  Volume() = default;
  Volume(Shape3 shp, std::array<double, 3> spc);

  std::int64_t voxel_count() const {
    return static_cast<std::int64_t>(shape[0]) * shape[1] * shape[2];
  }
  std::int64_t index(int z, int y, int x) const {
    return (static_cast<std::int64_t>(z) * shape[1] + y) * shape[2] + x;
  }
  float& at(int z, int y, int x) { return data[index(z, y, x)]; }
  float at(int z, int y, int x) const { return data[index(z, y, x)]; }

  // Throws on violated invariants (bad shape/spacing, malformed affine row).
  void validate() const;
};

// Binary lesion mask sharing Volume's grid conventions; values in {0, 1}.
struct LabelMask {
  std::vector<std::uint8_t> data;
  Shape3 shape{0, 0, 0};
  std::array<double, 3> spacing{1, 1, 1};
  Eigen::Matrix4d affine = Eigen::Matrix4d::Identity();

  LabelMask() = default;
  LabelMask(Shape3 shp, std::array<double, 3> spc);

  std::int64_t voxel_count() const {
    return static_cast<std::int64_t>(shape[0]) * shape[1] * shape[2];
  }
  std::int64_t index(int z, int y, int x) const {
    return (static_cast<std::int64_t>(z) * shape[1] + y) * shape[2] + x;
  }
  void validate() const;
};

struct ConformResult {
  Volume volume;
  bool degenerate_rescale = false;  // constant input, output forced to zero
};

// Resamples onto target_shape/target_spacing with voxel-center world
// coordinates preserved, then min-max rescales intensities to [0, 1].
// Out-of-bounds samples read 0. Throws if the source affine is singular.
ConformResult conform(const Volume& v, Shape3 target_shape,
                      std::array<double, 3> target_spacing_mm,
                      Interp interp = Interp::trilinear);

// Nearest-neighbor resampling for masks; never invents labels outside {0,1}.
LabelMask conform_mask(const LabelMask& m, Shape3 target_shape,
                       std::array<double, 3> target_spacing_mm);

// Lesion volume as a raw voxel count of label 1.
std::int64_t lesion_volume(const LabelMask& m);

// Canonical grid the network consumes.
constexpr Shape3 kConformShape{256, 256, 256};
constexpr std::array<double, 3> kConformSpacing{1.0, 1.0, 1.0};

}  // namespace meshvox
