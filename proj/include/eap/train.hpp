#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "eap/dataset.hpp"
#include "eap/network.hpp"

namespace eap {

struct Accuracy {
  double top1 = 0.0;
  double topk = 0.0;
};

/// Rank of `label` among the logits row: entries ranked by value desc, then index asc.
inline std::size_t label_rank(std::span<const float> row, int label) {
  const float v = row[static_cast<std::size_t>(label)];
  std::size_t rank = 0;
  for (std::size_t j = 0; j < row.size(); ++j) {
    if (row[j] > v || (row[j] == v && j < static_cast<std::size_t>(label))) ++rank;
  }
  return rank;
}

/// Top-1 and top-k accuracy over `idx`. Ties go to the lowest class index.
inline Accuracy evaluate(const Network& net, const Dataset& ds, std::span<const std::size_t> idx,
                         std::size_t topk = 5, std::size_t batch_size = 256) {
  if (idx.empty()) throw ConfigError("evaluate: empty dataset");
  std::size_t hit1 = 0, hitk = 0;
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    auto part = idx.subspan(b, std::min(batch_size, idx.size() - b));
    auto res = network_forward(net, gather_images(ds, part));
    const std::size_t c = res.logits.dim(1);
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto rank = label_rank(res.logits.data().subspan(i * c, c), ds.labels[part[i]]);
      hit1 += rank == 0;
      hitk += rank < topk;
    }
  }
  const auto n = static_cast<double>(idx.size());
  return {static_cast<double>(hit1) / n, static_cast<double>(hitk) / n};
}

inline Accuracy evaluate(const Network& net, const Dataset& ds, IndexRange r, std::size_t topk = 5) {
  auto idx = range_indices(r);
  return evaluate(net, ds, idx, topk);
}

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  float lr = 0.05f;
  float lr_decay = 1.0f;  ///< multiplied into lr after each epoch
  bool mask_frozen = true;
};

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  Accuracy val;
};

/// Mini-batch SGD over the training split. Shuffling draws from `rng`.
/// When `keep_best` is set the returned network is the best-validation snapshot
/// (the starting network counts as a candidate).
template <class Rng>
std::vector<EpochLog> fit(Network& net, const Dataset& ds, const TrainConfig& cfg, Rng& rng, bool keep_best = false,
                          std::size_t topk = 5, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  std::vector<EpochLog> log;
  if (cfg.epochs == 0) return log;
  auto order = range_indices(ds.train);
  if (order.empty()) throw ConfigError("fit: empty training split");
  const bool have_val = ds.val.size() > 0;
  Network best = net;
  double best_acc = keep_best && have_val ? evaluate(net, ds, ds.val, topk).top1 : -1.0;
  Network stable = net;
  float lr = cfg.lr;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
      std::span<const std::size_t> part(order.data() + b, std::min(cfg.batch_size, order.size() - b));
      auto labels = gather_labels(ds, part);
      double loss = 0.0;
      try {
        loss = train_step(net, gather_images(ds, part), labels, lr, cfg.mask_frozen);
      } catch (const NumericError&) {
        net = keep_best ? best : stable;
        throw NumericError("training diverged at epoch " + std::to_string(e) + ", batch " +
                           std::to_string(batches) + "; last stable snapshot restored");
      }
      sum += loss;
      ++batches;
    }
    EpochLog entry{e, sum / static_cast<double>(batches), {}};
    if (have_val) entry.val = evaluate(net, ds, ds.val, topk);
    if (keep_best && entry.val.top1 > best_acc) {
      best_acc = entry.val.top1;
      best = net;
    }
    stable = net;
    log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    lr *= cfg.lr_decay;
  }
  if (keep_best && have_val) net = std::move(best);
  return log;
}

// ---------------------------------------------------------------------------
// Architecture strings, e.g. "conv16k3p1-pool,conv32k3p1-pool,fc64,fc10".
// conv<N>[k<f>][s<s>][p<p>][-relu|-pool|-id], fc<N>[-relu|-id]. The final
// layer defaults to identity, every other layer to ReLU.

struct LayerSpec {
  LayerKind kind = LayerKind::kConv;
  std::size_t filters = 1;
  std::size_t filt = 3;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::optional<PostOp> post;
};

inline std::vector<LayerSpec> parse_arch(const std::string& text) {
  std::vector<LayerSpec> out;
  std::size_t pos = 0;
  auto fail = [&](const std::string& msg) { throw ConfigError("arch '" + text + "': " + msg); };
  while (pos < text.size()) {
    std::size_t end = text.find(',', pos);
    if (end == std::string::npos) end = text.size();
    std::string item = text.substr(pos, end - pos);
    pos = end + 1;
    LayerSpec spec;
    std::string post;
    if (auto dash = item.find('-'); dash != std::string::npos) {
      post = item.substr(dash + 1);
      item = item.substr(0, dash);
    }
    std::size_t i = 0;
    if (item.rfind("conv", 0) == 0) {
      spec.kind = LayerKind::kConv;
      i = 4;
    } else if (item.rfind("fc", 0) == 0) {
      spec.kind = LayerKind::kFc;
      i = 2;
    } else {
      fail("unknown layer '" + item + "'");
    }
    auto number = [&]() {
      std::size_t start = i;
      while (i < item.size() && std::isdigit(static_cast<unsigned char>(item[i]))) ++i;
      if (start == i) fail("expected a number in '" + item + "'");
      return static_cast<std::size_t>(std::stoul(item.substr(start, i - start)));
    };
    spec.filters = number();
    while (i < item.size()) {
      const char key = item[i++];
      const std::size_t v = number();
      if (spec.kind == LayerKind::kFc) fail("fc layers take no options");
      if (key == 'k') spec.filt = v;
      else if (key == 's') spec.stride = v;
      else if (key == 'p') spec.pad = v;
      else fail(std::string("unknown option '") + key + "'");
    }
    if (post == "relu") spec.post = PostOp::relu();
    else if (post == "pool") spec.post = PostOp::relu_pool();
    else if (post == "id") spec.post = PostOp::identity();
    else if (!post.empty()) fail("unknown post-op '" + post + "'");
    if (spec.filters == 0) fail("layer with zero filters");
    out.push_back(spec);
  }
  if (out.empty()) fail("no layers");
  return out;
}

/// Builds a zero-initialised network over [in_c, in_h, in_w] inputs. `batch` is the
/// batch size recorded in every LayerShape for energy estimation.
inline Network build_network(std::size_t in_c, std::size_t in_h, std::size_t in_w,
                             const std::vector<LayerSpec>& specs, std::size_t batch = 1) {
  Network net;
  std::size_t c = in_c, h = in_h, w = in_w;
  std::size_t conv_i = 0, fc_i = 0;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = specs[i];
    LayerShape shape = s.kind == LayerKind::kConv
                           ? LayerShape::conv(c, h, w, s.filt, s.filters, s.stride, s.pad, batch)
                           : LayerShape::fc(c, s.filters, batch, h, w);
    NetLayer layer;
    layer.name = s.kind == LayerKind::kConv ? "conv" + std::to_string(++conv_i) : "fc" + std::to_string(++fc_i);
    shape.validate(layer.name);
    layer.bank = FilterBank(shape);
    layer.post = s.post.value_or(i + 1 == specs.size() ? PostOp::identity() : PostOp::relu());
    c = shape.n();
    h = layer.post.out_extent(shape.out_h());
    w = layer.post.out_extent(shape.out_w());
    net.layers.push_back(std::move(layer));
  }
  net.validate();
  return net;
}

inline constexpr const char* kToyArch = "conv16k3p1-pool,conv32k3p1-pool,conv64k3p1-pool,fc64,fc10";

}  // namespace eap
