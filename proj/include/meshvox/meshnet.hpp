#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "meshvox/kernels.hpp"

namespace meshvox {

// 9 dilated 3x3x3 body layers (conv + BN + activation) and a final 1x1x1
// classifier emitting logits. The canonical dilation schedule doubles
// 1 -> 16 then halves back to 2; the classifier is the trailing
// dilation-1 layer of the 10-layer pattern.
struct MeshNetConfig {
  int channels = 5;
  std::vector<int> dilations = {1, 2, 4, 8, 16, 16, 8, 4, 2};
  int n_classes = 2;
  std::string activation = "relu";
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  static MeshNetConfig canonical(int x) {
    MeshNetConfig c;
    c.channels = x;
    return c;
  }
  void validate() const;
  bool operator==(const MeshNetConfig&) const = default;
};

template <typename T>
struct MeshNetLayer {
  ConvSpec spec;
  ConvWeights<T> conv;
  std::optional<BatchNormState<T>> bn;
  bool relu = false;
};

template <typename T>
struct Model {
  MeshNetConfig config;
  std::vector<MeshNetLayer<T>> layers;
  bool folded = false;

  template <typename U>
  Model<U> cast() const {
    Model<U> out;
    out.config = config;
    out.folded = folded;
    for (const auto& l : layers) {
      MeshNetLayer<U> lu;
      lu.spec = l.spec;
      lu.conv.w.assign(l.conv.w.begin(), l.conv.w.end());
      lu.conv.bias.assign(l.conv.bias.begin(), l.conv.bias.end());
      if (l.bn) {
        BatchNormState<U> bn;
        bn.gamma.assign(l.bn->gamma.begin(), l.bn->gamma.end());
        bn.beta.assign(l.bn->beta.begin(), l.bn->beta.end());
        bn.running_mean.assign(l.bn->running_mean.begin(), l.bn->running_mean.end());
        bn.running_var.assign(l.bn->running_var.begin(), l.bn->running_var.end());
        bn.eps = static_cast<U>(l.bn->eps);
        bn.momentum = static_cast<U>(l.bn->momentum);
        lu.bn = std::move(bn);
      }
      lu.relu = l.relu;
      out.layers.push_back(std::move(lu));
    }
    return out;
  }
};

// Builds the model with zero weights and identity BN state.
template <typename T>
Model<T> build(const MeshNetConfig& config) {
  config.validate();
  Model<T> m;
  m.config = config;
  int in_c = 1;
  for (int d : config.dilations) {
    MeshNetLayer<T> l;
    l.spec = ConvSpec::make(in_c, config.channels, 3, d);
    l.conv = ConvWeights<T>::zeros(l.spec);
    l.bn = BatchNormState<T>::identity(config.channels);
    l.bn->eps = static_cast<T>(config.bn_eps);
    l.bn->momentum = static_cast<T>(config.bn_momentum);
    l.relu = true;
    in_c = config.channels;
    m.layers.push_back(std::move(l));
  }
  MeshNetLayer<T> head;
  head.spec = ConvSpec::make(config.channels, config.n_classes, 1, 1);
  head.conv = ConvWeights<T>::zeros(head.spec);
  head.relu = false;
  m.layers.push_back(std::move(head));
  return m;
}

// Exact trainable-parameter count (conv weights/biases + BN gamma/beta).
std::int64_t count_parameters(const MeshNetConfig& config);

// RF = 1 + sum (k-1)*d over layers; classifier k=1 adds nothing.
int receptive_field(const MeshNetConfig& config);
int receptive_field_of(const std::vector<int>& dilations, int kernel);

// Kaiming-uniform conv weights, zero biases, identity BN; deterministic per seed.
Model<float> init_weights(const MeshNetConfig& config, std::uint64_t seed);

// Replaces each conv+BN pair with a single conv using running statistics:
// w' = w*gamma/sqrt(var+eps), b' = beta + (b-mean)*gamma/sqrt(var+eps).
template <typename T>
Model<T> fold_batchnorm(const Model<T>& model) {
  Model<T> out = model;
  for (auto& l : out.layers) {
    if (!l.bn) continue;
    const int k3 = l.spec.kernel * l.spec.kernel * l.spec.kernel;
    const std::int64_t per_oc = static_cast<std::int64_t>(l.spec.in_channels) * k3;
    for (int oc = 0; oc < l.spec.out_channels; ++oc) {
      const T scale = l.bn->gamma[oc] /
                      std::sqrt(l.bn->running_var[oc] + l.bn->eps);
      for (std::int64_t i = 0; i < per_oc; ++i) l.conv.w[oc * per_oc + i] *= scale;
      l.conv.bias[oc] = l.bn->beta[oc] + (l.conv.bias[oc] - l.bn->running_mean[oc]) * scale;
    }
    l.bn.reset();
  }
  out.folded = true;
  return out;
}

// Plain layer-by-layer forward; BN runs in the given mode (train mode
// updates running stats). Used for tests and small inputs — the engine
// has the memory-planned path.
template <typename T>
Tensor4<T> forward(Model<T>& model, const Tensor4<T>& input, BnMode mode = BnMode::eval) {
  Tensor4<T> x = input;
  for (auto& l : model.layers) {
    x = conv3d_forward(x, l.spec, l.conv);
    if (l.bn) x = batchnorm_forward(x, *l.bn, mode);
    if (l.relu) x = relu_forward(x);
  }
  return x;
}

// "MNET1" weight file: 5-byte magic, u32 LE header length, JSON header
// (config + ordered tensor manifest), then raw LE f32 payloads, each
// 64-byte aligned.
void save_weights(const Model<float>& model, const std::string& path);
Model<float> load_weights(const std::string& path);

}  // namespace meshvox
