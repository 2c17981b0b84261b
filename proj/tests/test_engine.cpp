#include <random>

#include "doctest.h"
#include "meshvox/engine.hpp"

using namespace meshvox;

namespace {

MeshNetConfig small_net(int channels) {
  // all-dilation-1 body keeps the halo small enough to tile tiny volumes
  MeshNetConfig c = MeshNetConfig::canonical(channels);
  c.dilations = {1, 1, 1, 1, 1, 1, 1, 1, 1};
  return c;
}

Volume random_volume(Shape3 shape, unsigned seed) {
  Volume v(shape, {1, 1, 1});
  v.affine(0, 0) = v.affine(1, 1) = v.affine(2, 2) = 1.0;
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  for (auto& x : v.data) x = dist(rng);
  return v;
}

}  // namespace

TEST_CASE("whole-volume plan arithmetic") {
  const MemoryPlan p = plan(MeshNetConfig::canonical(1), {8, 8, 8}, 1 << 20);
  CHECK(p.strategy == PlanStrategy::whole_volume);
  CHECK(p.buffer_bytes == 2048);  // 1 channel * 512 voxels * 4 bytes
  CHECK(p.n_buffers == 2);
  CHECK(p.est_peak_bytes == 2 * 2048 + 2 * 512 * 4);
}

TEST_CASE("X=26 at 256^3 fits 4 GiB whole but tiles at 512 MiB") {
  const MeshNetConfig c = MeshNetConfig::canonical(26);
  const Shape3 shape{256, 256, 256};

  const MemoryPlan whole = plan(c, shape, 4ll << 30);
  CHECK(whole.strategy == PlanStrategy::whole_volume);
  CHECK(whole.buffer_bytes == 1744830464ll);  // 26 * 256^3 * 4
  CHECK(whole.halo == 61);

  const std::int64_t budget = 512ll << 20;
  const MemoryPlan tiled = plan(c, shape, budget);
  CHECK(tiled.strategy == PlanStrategy::tiled);
  CHECK(tiled.tile >= 1);
  auto padded_bytes = [&](int t) {
    const std::int64_t e = t + 2ll * 61;
    return 26ll * e * e * e * 4;
  };
  // chosen tile fits, next size up does not
  CHECK(2 * padded_bytes(tiled.tile) <= budget);
  CHECK(2 * padded_bytes(tiled.tile + 1) > budget);
  CHECK(tiled.buffer_bytes == padded_bytes(tiled.tile));
}

TEST_CASE("hopeless budget names the minimum feasible one") {
  CHECK_THROWS_WITH_AS(plan(MeshNetConfig::canonical(26), {256, 256, 256}, 1024),
                       doctest::Contains("minimum feasible budget"), std::runtime_error);
}

TEST_CASE("tiled logits are bitwise identical to whole-volume logits") {
  const MeshNetConfig c = small_net(2);
  Model<float> m = init_weights(c, 31);
  // give BN non-trivial statistics so folding is exercised on both paths
  std::mt19937 rng(5);
  std::uniform_real_distribution<float> dist(0.5f, 1.5f);
  for (auto& l : m.layers)
    if (l.bn) {
      for (auto& v : l.bn->gamma) v = dist(rng);
      for (auto& v : l.bn->running_var) v = dist(rng);
      for (auto& v : l.bn->running_mean) v = dist(rng) - 1.0f;
    }
  const Volume v = random_volume({48, 48, 48}, 77);

  const MemoryPlan pw = plan(c, v.shape, 1ll << 30);
  REQUIRE(pw.strategy == PlanStrategy::whole_volume);
  const MemoryPlan pt = plan(c, v.shape, 1'500'000);
  REQUIRE(pt.strategy == PlanStrategy::tiled);
  REQUIRE(pt.tile < 48);  // forces multiple tiles with a ragged remainder

  const InferResult rw = infer(m, v, pw, true);
  const InferResult rt = infer(m, v, pt, true);
  REQUIRE(rw.logits.has_value());
  REQUIRE(rt.logits.has_value());
  REQUIRE(rw.logits->size() == rt.logits->size());
  for (std::int64_t i = 0; i < rw.logits->size(); ++i)
    CHECK(rw.logits->data[i] == rt.logits->data[i]);
  for (std::size_t i = 0; i < rw.labels.data.size(); ++i)
    CHECK(rw.labels.data[i] == rt.labels.data[i]);
}

TEST_CASE("tiled peak allocation respects the plan estimate") {
  const MeshNetConfig c = small_net(2);
  Model<float> m = init_weights(c, 1);
  const Volume v = random_volume({48, 48, 48}, 2);
  const MemoryPlan pt = plan(c, v.shape, 1'500'000);
  REQUIRE(pt.strategy == PlanStrategy::tiled);
  const InferResult r = infer(m, v, pt);
  CHECK(r.peak_activation_bytes > 0);
  CHECK(r.peak_activation_bytes <= pt.est_peak_bytes);
}

TEST_CASE("zero-weight model with biased classifier predicts one class") {
  const MeshNetConfig c = small_net(2);
  Model<float> m = build<float>(c);
  m.layers.back().conv.bias[0] = 0.5f;  // background logit wins everywhere
  const Volume v = random_volume({24, 24, 24}, 3);
  const MemoryPlan p = plan(c, v.shape, 1ll << 28);
  const InferResult r = infer(m, v, p);
  for (auto x : r.labels.data) CHECK(x == 0);
  CHECK(r.labels.shape == v.shape);
}

TEST_CASE("infer rejects a plan built for a different grid") {
  const MeshNetConfig c = small_net(1);
  Model<float> m = build<float>(c);
  const Volume v = random_volume({16, 16, 16}, 4);
  const MemoryPlan p = plan(c, {24, 24, 24}, 1ll << 28);
  CHECK_THROWS(infer(m, v, p));
}
