#include <cmath>
#include <random>

#include "doctest.h"
#include "meshvox/volume.hpp"

using namespace meshvox;

namespace {

Volume make_volume(Shape3 shape, std::array<double, 3> spacing) {
  Volume v(shape, spacing);
  v.affine(0, 0) = spacing[0];
  v.affine(1, 1) = spacing[1];
  v.affine(2, 2) = spacing[2];
  return v;
}

}  // namespace

TEST_CASE("constant volume conforms to all-zero with degenerate flag") {
  Volume v = make_volume({8, 8, 8}, {1, 1, 1});
  std::fill(v.data.begin(), v.data.end(), 3.5f);
  const ConformResult r = conform(v, {16, 16, 16}, {1, 1, 1});
  CHECK(r.degenerate_rescale);
  for (float x : r.volume.data) CHECK(x == 0.0f);
}

TEST_CASE("rescale hits 0 and 1 exactly") {
  Volume v = make_volume({6, 6, 6}, {1, 1, 1});
  std::mt19937 rng(7);
  std::uniform_real_distribution<float> dist(10.0f, 50.0f);
  for (auto& x : v.data) x = dist(rng);
  v.data[13] = 9.0f;
  v.data[99] = 77.0f;
  const ConformResult r = conform(v, {6, 6, 6}, {1, 1, 1});
  float mn = 2.0f, mx = -1.0f;
  for (float x : r.volume.data) {
    mn = std::min(mn, x);
    mx = std::max(mx, x);
    CHECK(x >= 0.0f);
    CHECK(x <= 1.0f);
  }
  CHECK(mn == 0.0f);
  CHECK(mx == 1.0f);
}

TEST_CASE("conform is idempotent once on the canonical grid") {
  Volume v = make_volume({10, 12, 14}, {2, 2, 2});
  std::mt19937 rng(3);
  std::uniform_real_distribution<float> dist(0.0f, 100.0f);
  for (auto& x : v.data) x = dist(rng);
  const ConformResult once = conform(v, {24, 24, 24}, {1, 1, 1});
  const ConformResult twice = conform(once.volume, {24, 24, 24}, {1, 1, 1});
  REQUIRE(once.volume.data.size() == twice.volume.data.size());
  for (std::size_t i = 0; i < once.volume.data.size(); ++i)
    CHECK(once.volume.data[i] == twice.volume.data[i]);
  CHECK(once.volume.affine.isApprox(twice.volume.affine));
}

TEST_CASE("already-canonical volume with [0,1] range resamples identically") {
  Volume v = make_volume({8, 8, 8}, {1, 1, 1});
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> dist(0.1f, 0.9f);
  for (auto& x : v.data) x = dist(rng);
  v.data[0] = 0.0f;
  v.data[1] = 1.0f;
  const ConformResult once = conform(v, {8, 8, 8}, {1, 1, 1});
  // once conformed, a second pass must not change a single bit
  const ConformResult again = conform(once.volume, {8, 8, 8}, {1, 1, 1});
  for (std::size_t i = 0; i < v.data.size(); ++i)
    CHECK(once.volume.data[i] == again.volume.data[i]);
}

TEST_CASE("upsampled sphere keeps its analytic volume") {
  // 128^3 @ 2 mm centered sphere -> 256^3 @ 1 mm: voxel count should scale by
  // ~8x (analytic sphere volume is resolution-independent).
  const int n = 128;
  Volume v = make_volume({n, n, n}, {2, 2, 2});
  const double c = (n - 1) / 2.0, rad = 40.0;  // radius in voxels
  std::int64_t count_src = 0;
  for (int z = 0; z < n; ++z)
    for (int y = 0; y < n; ++y)
      for (int x = 0; x < n; ++x) {
        const double d2 = (x - c) * (x - c) + (y - c) * (y - c) + (z - c) * (z - c);
        if (d2 <= rad * rad) {
          v.at(z, y, x) = 1.0f;
          ++count_src;
        }
      }
  const ConformResult r = conform(v, {256, 256, 256}, {1, 1, 1});
  std::int64_t count_dst = 0;
  for (float x : r.volume.data)
    if (x > 0.5f) ++count_dst;
  const double ratio = static_cast<double>(count_dst) / (8.0 * count_src);
  CHECK(ratio > 0.95);
  CHECK(ratio < 1.05);
}

TEST_CASE("nearest mask conform never invents labels") {
  LabelMask m({9, 9, 9}, {2, 2, 2});
  m.affine(0, 0) = m.affine(1, 1) = m.affine(2, 2) = 2.0;
  std::mt19937 rng(11);
  for (auto& x : m.data) x = rng() % 2;
  const LabelMask out = conform_mask(m, {20, 20, 20}, {1, 1, 1});
  for (auto x : out.data) CHECK((x == 0 || x == 1));
  CHECK(out.shape == Shape3{20, 20, 20});
}

TEST_CASE("non-invertible affine is rejected") {
  Volume v = make_volume({4, 4, 4}, {1, 1, 1});
  v.affine(0, 0) = 0.0;  // collapses x axis
  CHECK_THROWS(conform(v, {4, 4, 4}, {1, 1, 1}));
}

TEST_CASE("lesion_volume counts label-1 voxels") {
  LabelMask m({64, 64, 64}, {1, 1, 1});
  CHECK(lesion_volume(m) == 0);
  m.data[5] = 1;
  CHECK(lesion_volume(m) == 1);
  std::fill(m.data.begin(), m.data.end(), 0);
  for (int z = 10; z < 20; ++z)
    for (int y = 10; y < 20; ++y)
      for (int x = 10; x < 20; ++x) m.data[m.index(z, y, x)] = 1;
  CHECK(lesion_volume(m) == 1000);
}

TEST_CASE("invariant violations throw") {
  Volume v;
  v.shape = {0, 4, 4};
  CHECK_THROWS(v.validate());
  Volume v2 = make_volume({4, 4, 4}, {1, 1, 1});
  v2.spacing[1] = -1.0;
  CHECK_THROWS(v2.validate());
  Volume v3 = make_volume({4, 4, 4}, {1, 1, 1});
  v3.affine(3, 3) = 2.0;
  CHECK_THROWS(v3.validate());
}
