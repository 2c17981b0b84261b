#pragma once

#include <cstdint>
#include <optional>

#include "meshvox/meshnet.hpp"
#include "meshvox/volume.hpp"

namespace meshvox {

enum class PlanStrategy { whole_volume, tiled };

struct MemoryPlan {
  PlanStrategy strategy = PlanStrategy::whole_volume;
  std::int64_t buffer_bytes = 0;  // one activation buffer
  int n_buffers = 2;
  Shape3 input_shape{0, 0, 0};
  int tile = 0;   // cubic tile edge (tiled only)
  int halo = 0;   // per-side context = (RF-1)/2
  std::int64_t est_peak_bytes = 0;
};

// Picks whole-volume double buffering when two X*D*H*W f32 buffers plus the
// logits buffer fit the budget. Otherwise the largest cubic tile whose
// padded extent (tile + 2*halo) fits two buffers. Throws when even a 1-voxel
// tile does not fit, reporting the minimum feasible budget.
MemoryPlan plan(const MeshNetConfig& config, Shape3 input_shape,
                std::int64_t budget_bytes);

struct InferResult {
  LabelMask labels;
  std::optional<Tensor4<float>> logits;
  std::int64_t peak_activation_bytes = 0;  // actually allocated
};

// Whole-volume and tiled execution produce identical logits: the halo covers
// the full receptive field and zero padding is applied only at true volume
// borders. Model must be eval-ready (folded).
InferResult infer(const Model<float>& model, const Volume& v, const MemoryPlan& plan,
                  bool want_logits = false);

}  // namespace meshvox
