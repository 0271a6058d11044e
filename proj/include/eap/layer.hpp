#pragma once

#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "eap/error.hpp"

namespace eap {

enum class LayerKind { kConv, kFc };

/// Geometry of one CONV or FC layer. FC layers are convolutions whose filter
/// covers the whole input (filt == in, stride 1, pad 0).
struct LayerShape {
  LayerKind kind = LayerKind::kConv;
  std::size_t in_h = 1, in_w = 1, in_c = 1;
  std::size_t filt_h = 1, filt_w = 1;
  std::size_t num_filters = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t batch = 1;

  static LayerShape conv(std::size_t in_c, std::size_t in_h, std::size_t in_w, std::size_t filt,
                         std::size_t num_filters, std::size_t stride = 1, std::size_t pad = 0,
                         std::size_t batch = 1) {
    return {LayerKind::kConv, in_h, in_w, in_c, filt, filt, num_filters, stride, pad, batch};
  }

  /// Fully-connected layer over a [in_c, in_h, in_w] input.
  static LayerShape fc(std::size_t in_c, std::size_t num_filters, std::size_t batch = 1, std::size_t in_h = 1,
                       std::size_t in_w = 1) {
    return {LayerKind::kFc, in_h, in_w, in_c, in_h, in_w, num_filters, 1, 0, batch};
  }

  std::size_t out_h() const { return (in_h + 2 * pad - filt_h) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - filt_w) / stride + 1; }
  /// Weights per filter.
  std::size_t m() const { return filt_h * filt_w * in_c; }
  std::size_t n() const { return num_filters; }
  std::size_t weight_count() const { return m() * n(); }
  std::size_t input_count() const { return batch * in_c * in_h * in_w; }
  std::size_t output_count() const { return batch * num_filters * out_h() * out_w(); }

  /// Throws ConfigError naming `layer` and the offending field.
  void validate(const std::string& layer = "layer") const {
    auto fail = [&](const std::string& msg) { throw ConfigError(layer + ": " + msg); };
    if (in_h == 0 || in_w == 0 || in_c == 0) fail("input dims must be positive");
    if (filt_h == 0 || filt_w == 0) fail("filter dims must be positive");
    if (stride == 0) fail("stride must be positive");
    if (batch == 0) fail("batch must be positive");
    if (filt_h > in_h + 2 * pad) fail("filt_h exceeds padded in_h");
    if (filt_w > in_w + 2 * pad) fail("filt_w exceeds padded in_w");
    if (kind == LayerKind::kFc &&
        (filt_h != in_h || filt_w != in_w || stride != 1 || pad != 0)) {
      fail("FC layer requires filt == in, stride 1, pad 0");
    }
  }

  friend bool operator==(const LayerShape&, const LayerShape&) = default;
};

inline std::string to_string(LayerKind k) { return k == LayerKind::kConv ? "conv" : "fc"; }

/// Weights (m x n row-major, column i = filter i), bias and retention mask of one layer.
struct FilterBank {
  LayerShape shape;
  std::vector<float> weights;
  std::vector<float> bias;
  std::vector<std::uint8_t> mask;

  FilterBank() = default;
  explicit FilterBank(const LayerShape& s)
      : shape(s), weights(s.weight_count(), 0.0f), bias(s.n(), 0.0f), mask(s.weight_count(), 1) {}

  std::size_t m() const { return shape.m(); }
  std::size_t n() const { return shape.n(); }

  float& w(std::size_t row, std::size_t filter) { return weights[row * n() + filter]; }
  float w(std::size_t row, std::size_t filter) const { return weights[row * n() + filter]; }
  bool kept(std::size_t row, std::size_t filter) const { return mask[row * n() + filter] != 0; }

  std::size_t nonzero_count() const {
    std::size_t c = 0;
    for (auto v : mask) c += v != 0;
    return c;
  }
  double density() const {
    return weights.empty() ? 1.0 : static_cast<double>(nonzero_count()) / static_cast<double>(weights.size());
  }
  double compression_ratio() const { return 1.0 - density(); }

  /// Zeroes every masked weight.
  void apply_mask() {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!mask[i]) weights[i] = 0.0f;
    }
  }

  void validate(const std::string& layer = "layer") const {
    shape.validate(layer);
    if (weights.size() != shape.weight_count() || mask.size() != shape.weight_count()) {
      throw ConfigError(layer + ": weight/mask size does not match m x n");
    }
    if (bias.size() != shape.n()) throw ConfigError(layer + ": bias length does not match n");
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!mask[i] && weights[i] != 0.0f) throw ConfigError(layer + ": masked weight is nonzero");
    }
  }

  friend bool operator==(const FilterBank&, const FilterBank&) = default;
};

}  // namespace eap
