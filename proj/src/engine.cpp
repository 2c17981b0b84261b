#include "meshvox/engine.hpp"

#include <algorithm>
#include <functional>
#include <stdexcept>
#include <string>

#include "meshvox/parallel.hpp"

namespace meshvox {

namespace {

std::int64_t f32_bytes(std::int64_t elems) { return elems * 4; }

// Copies a (possibly out-of-range) box of the volume into a 1-channel
// tensor; out-of-bounds voxels read 0, matching whole-volume zero padding.
void extract_padded(const Volume& v, int z0, int y0, int x0, Tensor4<float>& dst) {
  std::fill(dst.data.begin(), dst.data.end(), 0.0f);
  const int D = v.shape[0], H = v.shape[1], W = v.shape[2];
  for (int z = 0; z < dst.d; ++z) {
    const int vz = z0 + z;
    if (vz < 0 || vz >= D) continue;
    for (int y = 0; y < dst.h; ++y) {
      const int vy = y0 + y;
      if (vy < 0 || vy >= H) continue;
      const int xa = std::max(0, -x0);
      const int xb = std::min(dst.w, W - x0);
      if (xa >= xb) continue;
      std::copy(&v.data[v.index(vz, vy, x0 + xa)], &v.data[v.index(vz, vy, x0 + xb - 1)] + 1,
                &dst.data[dst.index(0, z, y, xa)]);
    }
  }
}

// Zeroes the slabs of a padded tile that fall outside the real volume. Conv
// layers write bias-derived values there, but whole-volume semantics keep
// everything beyond the border at exact zero, so the margin is re-cleared
// after every layer.
void zero_outside_volume(Tensor4<float>& t, int z0, int y0, int x0, const Shape3& vshape) {
  const int zl = std::max(0, -z0), zh = std::min<int>(t.d, vshape[0] - z0);
  const int yl = std::max(0, -y0), yh = std::min<int>(t.h, vshape[1] - y0);
  const int xl = std::max(0, -x0), xh = std::min<int>(t.w, vshape[2] - x0);
  if (zl == 0 && yl == 0 && xl == 0 && zh == t.d && yh == t.h && xh == t.w) return;
  for (int c = 0; c < t.c; ++c)
    for (int z = 0; z < t.d; ++z)
      for (int y = 0; y < t.h; ++y) {
        float* row = &t.data[t.index(c, z, y, 0)];
        if (z < zl || z >= zh || y < yl || y >= yh) {
          std::fill(row, row + t.w, 0.0f);
        } else {
          std::fill(row, row + xl, 0.0f);
          std::fill(row + xh, row + t.w, 0.0f);
        }
      }
}

// Ping-pong the body layers through a/b. All body layers are conv(+relu); BN
// must already be folded. `post_layer` runs on each layer's output (the
// tiled path re-zeroes out-of-volume halo slabs there).
void run_body(const Model<float>& model, Tensor4<float>* a, Tensor4<float>* b,
              const std::function<void(Tensor4<float>&)>& post_layer = {}) {
  for (std::size_t i = 0; i + 1 < model.layers.size(); ++i) {
    const auto& l = model.layers[i];
    if (l.bn) throw std::logic_error("engine: model must be folded before inference");
    b->reshape(l.spec.out_channels, a->d, a->h, a->w);
    conv3d_forward_into(*a, l.spec, l.conv, *b);
    if (l.relu)
      for (auto& v : b->data) v = std::max(0.0f, v);
    if (post_layer) post_layer(*b);
    std::swap(a, b);
  }
}

}  // namespace

MemoryPlan plan(const MeshNetConfig& config, Shape3 input_shape, std::int64_t budget_bytes) {
  config.validate();
  if (budget_bytes <= 0) throw std::invalid_argument("plan: budget must be > 0");
  const std::int64_t vox =
      static_cast<std::int64_t>(input_shape[0]) * input_shape[1] * input_shape[2];
  const int x = config.channels;
  const std::int64_t logits_bytes = f32_bytes(static_cast<std::int64_t>(config.n_classes) * vox);

  MemoryPlan p;
  p.input_shape = input_shape;
  p.halo = (receptive_field(config) - 1) / 2;

  const std::int64_t whole_buf = f32_bytes(static_cast<std::int64_t>(x) * vox);
  if (2 * whole_buf + logits_bytes <= budget_bytes) {
    p.strategy = PlanStrategy::whole_volume;
    p.buffer_bytes = whole_buf;
    p.est_peak_bytes = 2 * whole_buf + logits_bytes;
    return p;
  }

  // Largest cubic tile whose padded extent fits two buffers.
  const int max_dim = std::max({input_shape[0], input_shape[1], input_shape[2]});
  auto padded_buf = [&](int t) {
    const std::int64_t e = t + 2 * static_cast<std::int64_t>(p.halo);
    return f32_bytes(static_cast<std::int64_t>(x) * e * e * e);
  };
  int t = 0;
  for (int cand = 1; cand <= max_dim; ++cand) {
    if (2 * padded_buf(cand) <= budget_bytes)
      t = cand;
    else
      break;
  }
  if (t == 0)
    throw std::runtime_error(
        "plan: budget too small; minimum feasible budget is " +
        std::to_string(2 * padded_buf(1)) + " bytes (1-voxel tile with halo " +
        std::to_string(p.halo) + ")");
  p.strategy = PlanStrategy::tiled;
  p.tile = t;
  p.buffer_bytes = padded_buf(t);
  p.est_peak_bytes = 2 * p.buffer_bytes + logits_bytes;
  return p;
}

InferResult infer(const Model<float>& model, const Volume& v, const MemoryPlan& mp,
                  bool want_logits) {
  if (v.shape != mp.input_shape)
    throw std::invalid_argument("infer: input volume does not match the plan's grid");
  const Model<float>* m = &model;
  Model<float> folded_local;
  bool needs_fold = false;
  for (const auto& l : model.layers)
    if (l.bn) needs_fold = true;
  if (needs_fold) {
    folded_local = fold_batchnorm(model);
    m = &folded_local;
  }
  const auto& head = m->layers.back();
  if (head.spec.kernel != 1)
    throw std::logic_error("infer: classifier layer must be 1x1x1");

  const int D = v.shape[0], H = v.shape[1], W = v.shape[2];
  const int nc = m->config.n_classes;
  Tensor4<float> logits(nc, D, H, W);

  const std::int64_t cap_elems = mp.buffer_bytes / 4;
  Tensor4<float> a, b;
  a.data.reserve(cap_elems);
  b.data.reserve(cap_elems);

  if (mp.strategy == PlanStrategy::whole_volume) {
    a.reshape(1, D, H, W);
    std::copy(v.data.begin(), v.data.end(), a.data.begin());
    run_body(*m, &a, &b);
    Tensor4<float>& body_out = (m->layers.size() % 2 == 0) ? b : a;
    logits.reshape(nc, D, H, W);
    conv3d_forward_into(body_out, head.spec, head.conv, logits);
  } else {
    const int t = mp.tile, h = mp.halo;
    for (int z0 = 0; z0 < D; z0 += t)
      for (int y0 = 0; y0 < H; y0 += t)
        for (int x0 = 0; x0 < W; x0 += t) {
          const int tz = std::min(t, D - z0), ty = std::min(t, H - y0),
                    tx = std::min(t, W - x0);
          a.reshape(1, tz + 2 * h, ty + 2 * h, tx + 2 * h);
          extract_padded(v, z0 - h, y0 - h, x0 - h, a);
          run_body(*m, &a, &b, [&](Tensor4<float>& act) {
            zero_outside_volume(act, z0 - h, y0 - h, x0 - h, v.shape);
          });
          Tensor4<float>& act = (m->layers.size() % 2 == 0) ? b : a;
          // 1x1x1 classifier over interior voxels, written straight into the
          // global logits buffer; accumulation order matches conv3d_forward.
          const std::int64_t an = act.spatial_size();
          for (int oc = 0; oc < nc; ++oc)
            for (int z = 0; z < tz; ++z)
              for (int y = 0; y < ty; ++y)
                for (int xx = 0; xx < tx; ++xx) {
                  float acc = head.conv.bias[oc];
                  const std::int64_t ai = act.index(0, z + h, y + h, xx + h);
                  for (int ic = 0; ic < head.spec.in_channels; ++ic)
                    acc += head.conv.w[oc * head.spec.in_channels + ic] *
                           act.data[ic * an + ai];
                  logits.at(oc, z0 + z, y0 + y, x0 + xx) = acc;
                }
        }
  }

  InferResult res{argmax_channels(logits), std::nullopt, 0};
  res.labels.spacing = v.spacing;
  res.labels.affine = v.affine;
  res.peak_activation_bytes = f32_bytes(static_cast<std::int64_t>(a.data.capacity()) +
                                        b.data.capacity() + logits.data.capacity());
  if (want_logits) res.logits = std::move(logits);
  return res;
}

}  // namespace meshvox
