#include "meshvox/meshnet.hpp"

#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include "json.hpp"

namespace meshvox {

void MeshNetConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("MeshNetConfig: channels must be >= 1");
  if (dilations.size() != 9)
    throw std::invalid_argument("MeshNetConfig: expected 9 body-layer dilations");
  for (int d : dilations)
    if (d < 1) throw std::invalid_argument("MeshNetConfig: dilations must be >= 1");
  if (n_classes < 2) throw std::invalid_argument("MeshNetConfig: n_classes must be >= 2");
  if (activation != "relu")
    throw std::invalid_argument("MeshNetConfig: unsupported activation " + activation);
  if (bn_eps <= 0 || bn_momentum <= 0 || bn_momentum >= 1)
    throw std::invalid_argument("MeshNetConfig: invalid BN parameters");
}

std::int64_t count_parameters(const MeshNetConfig& config) {
  config.validate();
  const std::int64_t x = config.channels;
  std::int64_t total = 0;
  std::int64_t in_c = 1;
  for (std::size_t i = 0; i < config.dilations.size(); ++i) {
    total += in_c * x * 27 + x;  // conv w + b
    total += 2 * x;              // bn gamma + beta
    in_c = x;
  }
  total += x * config.n_classes + config.n_classes;  // classifier
  return total;
}

int receptive_field_of(const std::vector<int>& dilations, int kernel) {
  int rf = 1;
  for (int d : dilations) rf += (kernel - 1) * d;
  return rf;
}

int receptive_field(const MeshNetConfig& config) {
  config.validate();
  return receptive_field_of(config.dilations, 3);
}

Model<float> init_weights(const MeshNetConfig& config, std::uint64_t seed) {
  Model<float> m = build<float>(config);
  std::mt19937_64 rng(seed);
  for (auto& l : m.layers) {
    const int fan_in = l.spec.in_channels * l.spec.kernel * l.spec.kernel * l.spec.kernel;
    const double gain = std::sqrt(2.0);  // relu
    const double bound = gain * std::sqrt(3.0 / fan_in);
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : l.conv.w) w = static_cast<float>(dist(rng));
    // biases stay 0; BN stays identity
  }
  return m;
}

namespace {

constexpr char kMagic[5] = {'M', 'N', 'E', 'T', '1'};
constexpr std::size_t kAlign = 64;

std::size_t align_up(std::size_t v) { return (v + kAlign - 1) / kAlign * kAlign; }

struct TensorRef {
  std::string name;
  std::string role;
  std::vector<std::int64_t> shape;
  const std::vector<float>* data;
  std::vector<float>* mut = nullptr;
};

template <typename ModelT>
std::vector<TensorRef> tensor_manifest(ModelT& model) {
  std::vector<TensorRef> refs;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& l = model.layers[i];
    const std::string base = "layer" + std::to_string(i) + ".";
    const int k = l.spec.kernel;
    refs.push_back({base + "conv_w", "conv_w",
                    {l.spec.out_channels, l.spec.in_channels, k, k, k}, &l.conv.w,
                    const_cast<std::vector<float>*>(&l.conv.w)});
    refs.push_back({base + "conv_b", "conv_b", {l.spec.out_channels}, &l.conv.bias,
                    const_cast<std::vector<float>*>(&l.conv.bias)});
    if (l.bn) {
      auto add = [&](const char* role, const std::vector<float>& v) {
        refs.push_back({base + role, role, {static_cast<std::int64_t>(v.size())}, &v,
                        const_cast<std::vector<float>*>(&v)});
      };
      add("bn_gamma", l.bn->gamma);
      add("bn_beta", l.bn->beta);
      add("bn_mean", l.bn->running_mean);
      add("bn_var", l.bn->running_var);
    }
  }
  return refs;
}

nlohmann::json config_json(const MeshNetConfig& c) {
  return {{"channels", c.channels}, {"dilations", c.dilations},
          {"n_classes", c.n_classes}, {"activation", c.activation},
          {"bn_eps", c.bn_eps},       {"bn_momentum", c.bn_momentum}};
}

MeshNetConfig config_from_json(const nlohmann::json& j) {
  MeshNetConfig c;
  c.channels = j.at("channels").get<int>();
  c.dilations = j.at("dilations").get<std::vector<int>>();
  c.n_classes = j.at("n_classes").get<int>();
  c.activation = j.at("activation").get<std::string>();
  c.bn_eps = j.at("bn_eps").get<double>();
  c.bn_momentum = j.at("bn_momentum").get<double>();
  return c;
}

}  // namespace

void save_weights(const Model<float>& model, const std::string& path) {
  model.config.validate();
  auto refs = tensor_manifest(model);

  // First pass to lay out offsets; header length feeds into them, so build
  // the manifest with offsets computed from a fixed-point iteration on the
  // header size (two passes suffice since lengths only shrink/grow by digits).
  nlohmann::json header;
  header["format"] = "MNET1";
  header["folded"] = model.folded;
  header["config"] = config_json(model.config);

  std::vector<std::size_t> offsets(refs.size(), 0);
  std::string header_str;
  for (int pass = 0; pass < 4; ++pass) {
    nlohmann::json manifest = nlohmann::json::array();
    std::size_t off = align_up(9 + header_str.size());
    for (std::size_t i = 0; i < refs.size(); ++i) {
      offsets[i] = off;
      const std::size_t bytes = refs[i].data->size() * sizeof(float);
      manifest.push_back({{"name", refs[i].name},
                          {"role", refs[i].role},
                          {"shape", refs[i].shape},
                          {"dtype", "f32"},
                          {"offset", off},
                          {"length", bytes}});
      off = align_up(off + bytes);
    }
    header["tensors"] = manifest;
    std::string next = header.dump();
    if (next.size() == header_str.size()) {
      header_str = std::move(next);
      break;
    }
    header_str = std::move(next);
  }

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(kMagic, 5);
  const std::uint32_t hlen = static_cast<std::uint32_t>(header_str.size());
  f.write(reinterpret_cast<const char*>(&hlen), 4);
  f.write(header_str.data(), header_str.size());
  std::size_t pos = 9 + header_str.size();
  const char zero[kAlign] = {};
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (offsets[i] > pos) {
      f.write(zero, offsets[i] - pos);
      pos = offsets[i];
    }
    f.write(reinterpret_cast<const char*>(refs[i].data->data()),
            refs[i].data->size() * sizeof(float));
    pos += refs[i].data->size() * sizeof(float);
  }
  if (!f) throw std::runtime_error("i/o failure writing " + path);
}

Model<float> load_weights(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open file: " + path);
  char magic[5];
  if (!f.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0)
    throw std::runtime_error("not a meshvox weight file: " + path);
  std::uint32_t hlen = 0;
  if (!f.read(reinterpret_cast<char*>(&hlen), 4))
    throw std::runtime_error("truncated weight file header: " + path);
  std::string header_str(hlen, '\0');
  if (!f.read(header_str.data(), hlen))
    throw std::runtime_error("truncated weight file header: " + path);

  nlohmann::json header = nlohmann::json::parse(header_str);
  Model<float> m = build<float>(config_from_json(header.at("config")));
  m.folded = header.value("folded", false);
  if (m.folded)
    for (auto& l : m.layers) l.bn.reset();

  auto refs = tensor_manifest(m);
  const auto& manifest = header.at("tensors");
  if (manifest.size() != refs.size())
    throw std::runtime_error("weight file manifest does not match architecture");
  for (std::size_t i = 0; i < refs.size(); ++i) {
    const auto& entry = manifest.at(i);
    if (entry.at("name").get<std::string>() != refs[i].name ||
        entry.at("role").get<std::string>() != refs[i].role)
      throw std::runtime_error("unexpected tensor in manifest: " +
                               entry.at("name").get<std::string>());
    if (entry.at("dtype").get<std::string>() != "f32")
      throw std::runtime_error("unsupported tensor dtype for " + refs[i].name);
    const std::size_t length = entry.at("length").get<std::size_t>();
    if (length != refs[i].mut->size() * sizeof(float))
      throw std::runtime_error("shape mismatch for tensor " + refs[i].name);
    const auto shape = entry.at("shape").get<std::vector<std::int64_t>>();
    std::int64_t prod = 1;
    for (auto s : shape) prod *= s;
    if (prod * static_cast<std::int64_t>(sizeof(float)) !=
        static_cast<std::int64_t>(length))
      throw std::runtime_error("shape mismatch for tensor " + refs[i].name);
    f.seekg(static_cast<std::streamoff>(entry.at("offset").get<std::size_t>()));
    if (!f.read(reinterpret_cast<char*>(refs[i].mut->data()), length))
      throw std::runtime_error("truncated payload for tensor " + refs[i].name);
  }
  return m;
}

}  // namespace meshvox
