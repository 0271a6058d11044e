#pragma once

// Model manifest (JSON) with TNSR tensors alongside:
//
// {
//   "n_classes": 10,
//   "layers": [
//     {"name": "conv1", "kind": "conv", "in_c": 1, "in_h": 16, "in_w": 16,
//      "filt_h": 3, "filt_w": 3, "num_filters": 16, "stride": 1, "pad": 1,
//      "batch": 16, "post": "relu_maxpool", "pool": 2, "pool_stride": 2,
//      "weights": "conv1.weights.tnsr", "bias": "conv1.bias.tnsr",
//      "mask": "conv1.mask.tnsr"}
//   ]
// }
//
// weights and mask are [m, n]; bias is [n]. Tensor paths are relative to the
// manifest. Shape-only manifests (no tensor paths) are accepted for energy
// estimation and load as dense.

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "eap/energy/energy.hpp"
#include "eap/network.hpp"
#include "eap/tensor_io.hpp"

namespace eap {

struct ManifestLayer {
  std::string name;
  LayerShape shape;
  PostOp post;
  std::optional<std::string> weights, bias, mask;
};

struct ModelManifest {
  std::size_t n_classes = 0;
  std::vector<ManifestLayer> layers;

  bool has_tensors() const {
    for (const auto& l : layers) {
      if (!l.weights) return false;
    }
    return !layers.empty();
  }

  std::vector<NamedShape> shapes() const {
    std::vector<NamedShape> out;
    for (const auto& l : layers) out.push_back({l.name, l.shape});
    return out;
  }
};

inline PostOp parse_post(const std::string& s, std::size_t pool, std::size_t pool_stride) {
  if (s == "identity") return PostOp::identity();
  if (s == "relu") return PostOp::relu();
  if (s == "relu_maxpool") return PostOp::relu_pool(pool, pool_stride);
  throw ConfigError("manifest: unknown post-op '" + s + "'");
}

inline ModelManifest parse_manifest(const nlohmann::json& j) {
  ModelManifest m;
  try {
    m.n_classes = j.value("n_classes", std::size_t{0});
    for (const auto& lj : j.at("layers")) {
      ManifestLayer l;
      l.name = lj.at("name").get<std::string>();
      const auto kind = lj.at("kind").get<std::string>();
      if (kind != "conv" && kind != "fc") throw ConfigError("manifest: layer '" + l.name + "' has unknown kind '" + kind + "'");
      auto& s = l.shape;
      s.kind = kind == "conv" ? LayerKind::kConv : LayerKind::kFc;
      s.in_c = lj.at("in_c").get<std::size_t>();
      s.in_h = lj.value("in_h", std::size_t{1});
      s.in_w = lj.value("in_w", std::size_t{1});
      s.filt_h = lj.value("filt_h", s.kind == LayerKind::kFc ? s.in_h : std::size_t{1});
      s.filt_w = lj.value("filt_w", s.kind == LayerKind::kFc ? s.in_w : std::size_t{1});
      s.num_filters = lj.at("num_filters").get<std::size_t>();
      s.stride = lj.value("stride", std::size_t{1});
      s.pad = lj.value("pad", std::size_t{0});
      s.batch = lj.value("batch", std::size_t{1});
      s.validate(l.name);
      l.post = parse_post(lj.value("post", std::string("relu")), lj.value("pool", std::size_t{2}),
                          lj.value("pool_stride", std::size_t{2}));
      if (lj.contains("weights")) l.weights = lj["weights"].get<std::string>();
      if (lj.contains("bias")) l.bias = lj["bias"].get<std::string>();
      if (lj.contains("mask")) l.mask = lj["mask"].get<std::string>();
      m.layers.push_back(std::move(l));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest: ") + e.what());
  }
  if (m.layers.empty()) throw ConfigError("manifest: no layers");
  if (m.n_classes == 0) m.n_classes = m.layers.back().shape.n();
  return m;
}

inline ModelManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open model manifest " + path.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_manifest(j);
}

/// Builds the network; layers without tensors get zero weights and full masks.
inline Network network_from_manifest(const ModelManifest& m, const std::filesystem::path& base) {
  Network net;
  for (const auto& ml : m.layers) {
    NetLayer layer{ml.name, FilterBank(ml.shape), ml.post};
    auto& bank = layer.bank;
    auto load = [&](const std::optional<std::string>& rel, std::vector<std::size_t> dims, const char* what) {
      std::optional<Tensor> t;
      if (!rel) return t;
      t = read_tensor(base / *rel);
      if (t->dims() != dims) {
        throw ConfigError(ml.name + ": " + what + " tensor has dims " + t->dims_string() + ", expected " +
                          Tensor(dims).dims_string());
      }
      return t;
    };
    const std::size_t mm = ml.shape.m(), n = ml.shape.n();
    if (auto w = load(ml.weights, {mm, n}, "weights")) bank.weights.assign(w->data().begin(), w->data().end());
    if (auto b = load(ml.bias, {n}, "bias")) bank.bias.assign(b->data().begin(), b->data().end());
    if (auto k = load(ml.mask, {mm, n}, "mask")) {
      for (std::size_t i = 0; i < k->size(); ++i) bank.mask[i] = (*k)[i] != 0.0f;
    }
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  if (m.n_classes != net.n_classes()) throw ConfigError("manifest: n_classes does not match final layer width");
  return net;
}

inline Network load_model(const std::filesystem::path& manifest) {
  auto m = load_manifest(manifest);
  if (!m.has_tensors()) throw ConfigError(manifest.string() + ": model manifest carries no weight tensors");
  return network_from_manifest(m, manifest.parent_path());
}

inline nlohmann::json manifest_json(const Network& net, bool with_tensors = true) {
  nlohmann::json j;
  j["n_classes"] = net.n_classes();
  j["layers"] = nlohmann::json::array();
  for (const auto& l : net.layers) {
    const auto& s = l.bank.shape;
    nlohmann::json lj{{"name", l.name},           {"kind", to_string(s.kind)}, {"in_c", s.in_c},
                      {"in_h", s.in_h},           {"in_w", s.in_w},           {"filt_h", s.filt_h},
                      {"filt_w", s.filt_w},       {"num_filters", s.num_filters}, {"stride", s.stride},
                      {"pad", s.pad},             {"batch", s.batch},         {"post", to_string(l.post)}};
    if (l.post.has_pool()) {
      lj["pool"] = l.post.pool;
      lj["pool_stride"] = l.post.pool_stride;
    }
    if (with_tensors) {
      lj["weights"] = l.name + ".weights.tnsr";
      lj["bias"] = l.name + ".bias.tnsr";
      lj["mask"] = l.name + ".mask.tnsr";
    }
    j["layers"].push_back(lj);
  }
  return j;
}

inline void write_text_atomically(const std::filesystem::path& path, const std::string& text) {
  detail::write_atomically(path, text.data(), text.size());
}

/// Writes `<dir>/<manifest_name>` and one TNSR file per tensor.
inline std::filesystem::path save_model(const Network& net, const std::filesystem::path& dir,
                                        const std::string& manifest_name = "model.json") {
  net.validate();
  std::filesystem::create_directories(dir);
  for (const auto& l : net.layers) {
    const auto& b = l.bank;
    write_tensor(dir / (l.name + ".weights.tnsr"), Tensor({b.m(), b.n()}, b.weights));
    write_tensor(dir / (l.name + ".bias.tnsr"), Tensor({b.n()}, b.bias));
    std::vector<float> mask(b.mask.begin(), b.mask.end());
    write_tensor(dir / (l.name + ".mask.tnsr"), Tensor({b.m(), b.n()}, std::move(mask)));
  }
  const auto path = dir / manifest_name;
  write_text_atomically(path, manifest_json(net).dump(2) + "\n");
  return path;
}

}  // namespace eap
