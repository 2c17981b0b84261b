#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "meshvox/meshnet.hpp"

namespace meshvox {

struct OptimizerConfig {
  double lr_max = 1e-3;
  double weight_decay = 3e-5;
  double eps = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 1;
};

struct ScheduleConfig {
  double lr_max = 1e-3;
  double warmup_frac = 0.01;  // fraction of total steps spent ramping up
  double start_div = 100.0;
  double final_div = 1e4;
  long total_steps = 0;
};

struct TrainRunConfig {
  int epochs = 50;
  int restarts = 1;
  std::uint64_t seed = 0;
  LossSpec loss;
  OptimizerConfig optimizer;
  ScheduleConfig schedule;  // lr_max/total_steps filled in by train()
};

// Cosine ramp lr_max/start_div -> lr_max over the warmup steps, then cosine
// decay to lr_max/final_div at the last step. Continuous at the boundary and
// exact at both anchors.
double onecycle_lr(long step, const ScheduleConfig& sched);

template <typename T>
struct AdamState {
  std::vector<T> m, v;
  long t = 0;

  explicit AdamState(std::size_t n = 0) : m(n, T(0)), v(n, T(0)) {}
};

// Decoupled weight decay: theta -= lr_t * (m_hat/(sqrt(v_hat)+eps) + wd*theta).
template <typename T>
void adamw_step(std::span<T> params, std::span<const T> grads, AdamState<T>& st,
                const OptimizerConfig& opt, double lr_t) {
  if (params.size() != grads.size() || params.size() != st.m.size())
    throw std::invalid_argument("adamw_step: size mismatch");
  ++st.t;
  const T b1 = T(opt.beta1), b2 = T(opt.beta2);
  const T bc1 = T(1) - std::pow(b1, T(st.t));
  const T bc2 = T(1) - std::pow(b2, T(st.t));
  const T lr = T(lr_t), eps = T(opt.eps), wd = T(opt.weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    st.m[i] = b1 * st.m[i] + (T(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (T(1) - b2) * g * g;
    const T mhat = st.m[i] / bc1;
    const T vhat = st.v[i] / bc2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + wd * params[i]);
  }
}

// Trainable tensors in serialization order: per layer conv_w, conv_b,
// bn_gamma, bn_beta. Running stats are buffers, not parameters.
template <typename T>
std::vector<std::span<T>> param_views(Model<T>& m) {
  std::vector<std::span<T>> out;
  for (auto& l : m.layers) {
    out.emplace_back(l.conv.w);
    out.emplace_back(l.conv.bias);
    if (l.bn) {
      out.emplace_back(l.bn->gamma);
      out.emplace_back(l.bn->beta);
    }
  }
  return out;
}

template <typename T>
std::int64_t param_count(Model<T>& m) {
  std::int64_t n = 0;
  for (auto& s : param_views(m)) n += static_cast<std::int64_t>(s.size());
  return n;
}

template <typename T>
std::vector<T> flatten_params(Model<T>& m) {
  std::vector<T> out;
  for (auto& s : param_views(m)) out.insert(out.end(), s.begin(), s.end());
  return out;
}

template <typename T>
void unflatten_params(Model<T>& m, std::span<const T> flat) {
  std::size_t off = 0;
  for (auto& s : param_views(m)) {
    std::copy(flat.begin() + off, flat.begin() + off + s.size(), s.begin());
    off += s.size();
  }
}

template <typename T>
struct TrainCache {
  std::vector<Tensor4<T>> conv_in;  // input of each conv layer
  std::vector<Tensor4<T>> bn_in;    // input of each BN (empty tensor when absent)
  std::vector<Tensor4<T>> act_in;   // input of each relu (empty when absent)
  Tensor4<T> logits;
};

// Forward with BN in train mode (updates running stats), retaining the
// per-layer inputs the backward pass needs.
template <typename T>
const Tensor4<T>& forward_train(Model<T>& m, const Tensor4<T>& input, TrainCache<T>& cache) {
  cache.conv_in.clear();
  cache.bn_in.clear();
  cache.act_in.clear();
  Tensor4<T> x = input;
  for (auto& l : m.layers) {
    cache.conv_in.push_back(x);
    x = conv3d_forward(x, l.spec, l.conv);
    if (l.bn) {
      cache.bn_in.push_back(x);
      x = batchnorm_forward(x, *l.bn, BnMode::train);
    } else {
      cache.bn_in.emplace_back();
    }
    if (l.relu) {
      cache.act_in.push_back(x);
      x = relu_forward(x);
    } else {
      cache.act_in.emplace_back();
    }
  }
  cache.logits = std::move(x);
  return cache.logits;
}

// Backpropagates grad_logits through the cached forward pass; returns flat
// gradients aligned with flatten_params order. Throws (naming the layer) if
// a non-finite gradient appears.
template <typename T>
std::vector<T> backward_train(Model<T>& m, const TrainCache<T>& cache,
                              const Tensor4<T>& grad_logits) {
  const std::size_t L = m.layers.size();
  std::vector<std::vector<T>> per_layer(L);
  Tensor4<T> g = grad_logits;
  for (std::size_t ri = 0; ri < L; ++ri) {
    const std::size_t i = L - 1 - ri;
    auto& l = m.layers[i];
    if (l.relu) g = relu_backward(cache.act_in[i], g);
    std::vector<T> bn_grads;
    if (l.bn) {
      auto bg = batchnorm_backward(cache.bn_in[i], *l.bn, g);
      g = std::move(bg.grad_x);
      bn_grads.reserve(bg.grad_gamma.size() * 2);
      bn_grads.insert(bn_grads.end(), bg.grad_gamma.begin(), bg.grad_gamma.end());
      bn_grads.insert(bn_grads.end(), bg.grad_beta.begin(), bg.grad_beta.end());
    }
    auto cg = conv3d_backward(cache.conv_in[i], l.spec, l.conv, g);
    g = std::move(cg.grad_x);
    auto& flat = per_layer[i];
    flat.insert(flat.end(), cg.grad_w.w.begin(), cg.grad_w.w.end());
    flat.insert(flat.end(), cg.grad_w.bias.begin(), cg.grad_w.bias.end());
    flat.insert(flat.end(), bn_grads.begin(), bn_grads.end());
    for (const T v : flat)
      if (!std::isfinite(static_cast<double>(v)))
        throw std::runtime_error("non-finite gradient in layer " + std::to_string(i));
  }
  std::vector<T> out;
  for (auto& pl : per_layer) out.insert(out.end(), pl.begin(), pl.end());
  return out;
}

struct Sample {
  Tensor4<float> image;  // (1, D, H, W)
  LabelMask labels;
};
using SampleList = std::vector<Sample>;

struct EpochStat {
  int restart = 0;
  int epoch = 0;
  long step = 0;
  double lr = 0;
  double mean_loss = 0;
  double val_dice = 0;
};

struct TrainResult {
  Model<float> best_model;
  std::vector<EpochStat> history;
  double best_dice = 0;
  int best_restart = 0;
};

// Runs `restarts` independently seeded runs of the full recipe and returns
// the weights with the highest validation DICE. Deterministic per seed.
TrainResult train(const MeshNetConfig& arch, const SampleList& train_set,
                  const SampleList& val_set, const TrainRunConfig& cfg);

// Mean foreground DICE of eval-mode predictions over a sample list.
double evaluate_dice(Model<float>& model, const SampleList& samples);

struct GradCheckReport {
  double max_rel_error = 0;
  int checked = 0;
  bool pass = false;
};

// Full-network check of analytic gradients against central finite
// differences, in double precision, on a parameter subset. `tamper` is test
// instrumentation applied to the analytic gradients before comparison.
GradCheckReport grad_check(const MeshNetConfig& arch, const Sample& sample,
                           double tolerance, std::uint64_t seed = 0,
                           int max_params = 150,
                           const std::function<void(std::vector<double>&)>& tamper = {});

// key = value text config (documented in README); unknown keys rejected.
TrainRunConfig load_train_config(const std::string& path);
void write_history_csv(const std::vector<EpochStat>& history, const std::string& path);

}  // namespace meshvox
