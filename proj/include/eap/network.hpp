#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "eap/im2col.hpp"
#include "eap/layer.hpp"
#include "eap/tensor.hpp"

namespace eap {

using MatRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

enum class PostOpKind { kIdentity, kRelu, kReluMaxPool };

struct PostOp {
  PostOpKind kind = PostOpKind::kRelu;
  std::size_t pool = 2;
  std::size_t pool_stride = 2;

  static PostOp identity() { return {PostOpKind::kIdentity, 2, 2}; }
  static PostOp relu() { return {PostOpKind::kRelu, 2, 2}; }
  static PostOp relu_pool(std::size_t p = 2, std::size_t s = 2) { return {PostOpKind::kReluMaxPool, p, s}; }

  bool has_relu() const { return kind != PostOpKind::kIdentity; }
  bool has_pool() const { return kind == PostOpKind::kReluMaxPool; }

  std::size_t out_extent(std::size_t in) const { return has_pool() ? (in - pool) / pool_stride + 1 : in; }

  friend bool operator==(const PostOp&, const PostOp&) = default;
};

inline std::string to_string(const PostOp& p) {
  switch (p.kind) {
    case PostOpKind::kIdentity: return "identity";
    case PostOpKind::kRelu: return "relu";
    case PostOpKind::kReluMaxPool: return "relu_maxpool";
  }
  return "?";
}

struct NetLayer {
  std::string name;
  FilterBank bank;
  PostOp post;
};

/// Ordered CONV/FC layers; the last layer's outputs are class logits.
struct Network {
  std::vector<NetLayer> layers;

  std::size_t n_classes() const { return layers.empty() ? 0 : layers.back().bank.n(); }

  std::size_t weight_count() const {
    std::size_t c = 0;
    for (const auto& l : layers) c += l.bank.weights.size();
    return c;
  }
  std::size_t nonzero_count() const {
    std::size_t c = 0;
    for (const auto& l : layers) c += l.bank.nonzero_count();
    return c;
  }

  /// Checks each bank and that layer L's post-op output feeds layer L+1.
  void validate() const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      l.bank.validate(l.name);
      if (l.post.has_pool()) {
        if (l.post.pool == 0 || l.post.pool_stride == 0 || l.post.pool > l.bank.shape.out_h() ||
            l.post.pool > l.bank.shape.out_w()) {
          throw ConfigError(l.name + ": pool window does not fit output");
        }
      }
      if (i + 1 < layers.size()) {
        const auto& s = l.bank.shape;
        const auto& next = layers[i + 1].bank.shape;
        const std::size_t oh = l.post.out_extent(s.out_h()), ow = l.post.out_extent(s.out_w());
        if (next.in_c != s.n() || next.in_h != oh || next.in_w != ow) {
          throw ConfigError("shape chain broken between " + l.name + " (emits " + std::to_string(s.n()) + "x" +
                            std::to_string(oh) + "x" + std::to_string(ow) + ") and " + layers[i + 1].name +
                            " (expects " + std::to_string(next.in_c) + "x" + std::to_string(next.in_h) + "x" +
                            std::to_string(next.in_w) + ")");
        }
      }
    }
  }

  friend bool operator==(const Network&, const Network&) = default;
};

inline bool operator==(const NetLayer& a, const NetLayer& b) {
  return a.name == b.name && a.bank == b.bank && a.post == b.post;
}

// ---------------------------------------------------------------------------
// Forward

/// Reorders a [k*oh*ow, n] product into [k, n, oh, ow].
inline Tensor rows_to_nchw(const MatRM& y, std::size_t k, std::size_t n, std::size_t oh, std::size_t ow) {
  Tensor out({k, n, oh, ow});
  const std::size_t hw = oh * ow;
  for (std::size_t img = 0; img < k; ++img) {
    for (std::size_t p = 0; p < hw; ++p) {
      const float* src = y.data() + (img * hw + p) * n;
      float* dst = out.raw() + img * n * hw + p;
      for (std::size_t f = 0; f < n; ++f) dst[f * hw] = src[f];
    }
  }
  return out;
}

inline MatRM nchw_to_rows(const Tensor& t) {
  const std::size_t k = t.dim(0), n = t.dim(1), hw = t.dim(2) * t.dim(3);
  MatRM y(static_cast<Eigen::Index>(k * hw), static_cast<Eigen::Index>(n));
  for (std::size_t img = 0; img < k; ++img) {
    for (std::size_t p = 0; p < hw; ++p) {
      const float* src = t.raw() + img * n * hw + p;
      float* dst = y.data() + (img * hw + p) * n;
      for (std::size_t f = 0; f < n; ++f) dst[f] = src[f * hw];
    }
  }
  return y;
}

inline MatRM matmul_bias(const Tensor& cols, const FilterBank& bank) {
  CMapRM x(cols.raw(), static_cast<Eigen::Index>(cols.dim(0)), static_cast<Eigen::Index>(cols.dim(1)));
  CMapRM a(bank.weights.data(), static_cast<Eigen::Index>(bank.m()), static_cast<Eigen::Index>(bank.n()));
  MatRM y = x * a;
  Eigen::Map<const Eigen::RowVectorXf> b(bank.bias.data(), static_cast<Eigen::Index>(bank.n()));
  y.rowwise() += b;
  return y;
}

/// Y = X A + B 1 for one layer, returned as [k, n, out_h, out_w]. Post-op not applied.
inline Tensor layer_forward(const Tensor& x, const FilterBank& bank, const std::string& layer = "layer") {
  Tensor cols = im2col(x, bank.shape, layer);
  MatRM y = matmul_bias(cols, bank);
  return rows_to_nchw(y, x.dim(0), bank.n(), bank.shape.out_h(), bank.shape.out_w());
}

inline void relu_inplace(Tensor& t) {
  for (float& v : t.data()) v = v > 0.0f ? v : 0.0f;
}

/// Max pooling; `argmax` (optional) receives the flat input index of each output.
inline Tensor max_pool(const Tensor& t, const PostOp& p, std::vector<std::size_t>* argmax = nullptr) {
  const std::size_t k = t.dim(0), c = t.dim(1), h = t.dim(2), w = t.dim(3);
  const std::size_t oh = p.out_extent(h), ow = p.out_extent(w);
  Tensor out({k, c, oh, ow});
  if (argmax) argmax->assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t img = 0; img < k; ++img) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t plane = (img * c + ch) * h * w;
      for (std::size_t y = 0; y < oh; ++y) {
        for (std::size_t x = 0; x < ow; ++x, ++o) {
          std::size_t best = plane + (y * p.pool_stride) * w + x * p.pool_stride;
          for (std::size_t dy = 0; dy < p.pool; ++dy) {
            for (std::size_t dx = 0; dx < p.pool; ++dx) {
              const std::size_t idx = plane + (y * p.pool_stride + dy) * w + x * p.pool_stride + dx;
              if (t[idx] > t[best]) best = idx;
            }
          }
          out[o] = t[best];
          if (argmax) (*argmax)[o] = best;
        }
      }
    }
  }
  return out;
}

inline double zero_fraction(std::span<const float> v) {
  if (v.empty()) return 0.0;
  std::size_t z = 0;
  for (float x : v) z += x == 0.0f;
  return static_cast<double>(z) / static_cast<double>(v.size());
}

struct ForwardOptions {
  bool record_inputs = false;
};

/// Logits plus per-layer records gathered during a forward pass.
struct ForwardResult {
  Tensor logits;                         ///< [k, n_classes]
  std::vector<Tensor> layer_inputs;      ///< input of each layer, when recorded
  std::vector<double> input_sparsity;    ///< zero fraction of each layer's input
  std::vector<double> output_sparsity;   ///< zero fraction after ReLU, before pooling
};

inline void check_network_input(const Network& net, const Tensor& batch) {
  if (net.layers.empty()) throw ConfigError("network has no layers");
  check_layer_input(batch, net.layers.front().bank.shape, net.layers.front().name);
}

inline ForwardResult network_forward(const Network& net, const Tensor& batch, ForwardOptions opts = {}) {
  check_network_input(net, batch);
  ForwardResult res;
  Tensor cur = batch;
  for (const auto& layer : net.layers) {
    res.input_sparsity.push_back(zero_fraction(cur.data()));
    if (opts.record_inputs) res.layer_inputs.push_back(cur);
    Tensor y = layer_forward(cur, layer.bank, layer.name);
    if (layer.post.has_relu()) relu_inplace(y);
    res.output_sparsity.push_back(zero_fraction(y.data()));
    if (layer.post.has_pool()) y = max_pool(y, layer.post);
    cur = std::move(y);
  }
  const std::size_t k = cur.dim(0);
  cur.reshape({k, cur.size() / k});
  res.logits = std::move(cur);
  return res;
}

// ---------------------------------------------------------------------------
// Loss and back-propagation

/// Mean softmax cross-entropy and its gradient w.r.t. logits.
inline double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad = nullptr) {
  const std::size_t k = logits.dim(0), c = logits.dim(1);
  if (labels.size() != k) throw ConfigError("label count does not match batch size");
  if (grad) *grad = Tensor({k, c});
  double loss = 0.0;
  std::vector<double> p(c);
  for (std::size_t i = 0; i < k; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw ConfigError("label " + std::to_string(labels[i]) + " outside [0, " + std::to_string(c) + ")");
    }
    const float* row = logits.raw() + i * c;
    const double mx = *std::max_element(row, row + c);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += (p[j] = std::exp(static_cast<double>(row[j]) - mx));
    loss += -(static_cast<double>(row[labels[i]]) - mx - std::log(z));
    if (grad) {
      for (std::size_t j = 0; j < c; ++j) {
        const double g = p[j] / z - (static_cast<int>(j) == labels[i] ? 1.0 : 0.0);
        (*grad)[i * c + j] = static_cast<float>(g / static_cast<double>(k));
      }
    }
  }
  return loss / static_cast<double>(k);
}

struct LayerGrad {
  std::vector<float> weights;
  std::vector<float> bias;
};

struct Gradients {
  double loss = 0.0;
  std::vector<LayerGrad> layers;
};

/// Loss and parameter gradients for one batch. Masked weight gradients are zeroed when `mask_frozen`.
inline Gradients compute_gradients(const Network& net, const Tensor& batch, std::span<const int> labels,
                                   bool mask_frozen = true) {
  check_network_input(net, batch);
  const std::size_t nl = net.layers.size();
  const std::size_t k = batch.dim(0);

  struct Cache {
    Tensor cols;
    Tensor pre;  // pre-activation [k,n,oh,ow]
    std::vector<std::size_t> argmax;
    std::vector<std::size_t> pooled_dims;
  };
  std::vector<Cache> cache(nl);

  Tensor cur = batch;
  for (std::size_t li = 0; li < nl; ++li) {
    const auto& layer = net.layers[li];
    auto& c = cache[li];
    c.cols = im2col(cur, layer.bank.shape, layer.name);
    MatRM y = matmul_bias(c.cols, layer.bank);
    c.pre = rows_to_nchw(y, k, layer.bank.n(), layer.bank.shape.out_h(), layer.bank.shape.out_w());
    Tensor act = c.pre;
    if (layer.post.has_relu()) relu_inplace(act);
    if (layer.post.has_pool()) act = max_pool(act, layer.post, &c.argmax);
    cur = std::move(act);
  }
  cur.reshape({k, cur.size() / k});

  Gradients g;
  Tensor dout;
  g.loss = softmax_cross_entropy(cur, labels, &dout);
  if (!std::isfinite(g.loss)) throw NumericError("non-finite loss in forward pass");
  g.layers.resize(nl);

  for (std::size_t li = nl; li-- > 0;) {
    const auto& layer = net.layers[li];
    const auto& bank = layer.bank;
    auto& c = cache[li];
    // Gradient w.r.t. the post-op output, reshaped as the pre-activation.
    Tensor dpre(c.pre.dims(), 0.0f);
    if (layer.post.has_pool()) {
      for (std::size_t o = 0; o < c.argmax.size(); ++o) dpre[c.argmax[o]] += dout[o];
    } else {
      std::copy(dout.data().begin(), dout.data().end(), dpre.data().begin());
    }
    if (layer.post.has_relu()) {
      for (std::size_t i = 0; i < dpre.size(); ++i) {
        if (c.pre[i] <= 0.0f) dpre[i] = 0.0f;
      }
    }
    MatRM gy = nchw_to_rows(dpre);
    CMapRM x(c.cols.raw(), static_cast<Eigen::Index>(c.cols.dim(0)), static_cast<Eigen::Index>(c.cols.dim(1)));
    MatRM ga = x.transpose() * gy;
    auto& lg = g.layers[li];
    lg.weights.assign(ga.data(), ga.data() + ga.size());
    lg.bias.assign(bank.n(), 0.0f);
    Eigen::Map<Eigen::RowVectorXf>(lg.bias.data(), static_cast<Eigen::Index>(bank.n())) = gy.colwise().sum();
    if (mask_frozen) {
      for (std::size_t i = 0; i < lg.weights.size(); ++i) {
        if (!bank.mask[i]) lg.weights[i] = 0.0f;
      }
    }
    if (li > 0) {
      CMapRM a(bank.weights.data(), static_cast<Eigen::Index>(bank.m()), static_cast<Eigen::Index>(bank.n()));
      MatRM gx = gy * a.transpose();
      Tensor gcols({static_cast<std::size_t>(gx.rows()), static_cast<std::size_t>(gx.cols())},
                   std::vector<float>(gx.data(), gx.data() + gx.size()));
      dout = col2im(gcols, bank.shape, k);
    }
  }
  return g;
}

/// One SGD step on softmax cross-entropy. Returns the pre-step mean loss.
/// With `mask_frozen`, masked weights receive no update and stay exactly zero.
inline double train_step(Network& net, const Tensor& batch, std::span<const int> labels, float lr,
                         bool mask_frozen = true) {
  Gradients g = compute_gradients(net, batch, labels, mask_frozen);
  for (std::size_t li = 0; li < net.layers.size(); ++li) {
    auto& bank = net.layers[li].bank;
    const auto& lg = g.layers[li];
    for (std::size_t i = 0; i < bank.weights.size(); ++i) {
      if (mask_frozen && !bank.mask[i]) continue;
      bank.weights[i] -= lr * lg.weights[i];
    }
    for (std::size_t i = 0; i < bank.bias.size(); ++i) bank.bias[i] -= lr * lg.bias[i];
  }
  return g.loss;
}

// ---------------------------------------------------------------------------
// Construction

/// He-normal weights, zero bias, full masks.
template <class Rng>
void init_network(Network& net, Rng& rng) {
  for (auto& layer : net.layers) {
    auto& bank = layer.bank;
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(bank.m())));
    for (auto& w : bank.weights) w = dist(rng);
    std::fill(bank.bias.begin(), bank.bias.end(), 0.0f);
    std::fill(bank.mask.begin(), bank.mask.end(), std::uint8_t{1});
  }
}

}  // namespace eap
