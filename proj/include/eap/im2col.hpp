#pragma once

// Toeplitz (im2col) lowering: convolution becomes Y = X * A + bias.
// Row r = (image, out_y, out_x); column j = (channel, filt_y, filt_x).

#include <span>
#include <string>

#include "eap/layer.hpp"
#include "eap/tensor.hpp"

namespace eap {

inline void check_layer_input(const Tensor& input, const LayerShape& shape, const std::string& layer = "layer") {
  auto fail = [&](const std::string& what, std::size_t got, std::size_t want) {
    throw ConfigError(layer + ": input " + what + " is " + std::to_string(got) + ", expected " +
                      std::to_string(want) + " (input dims " + input.dims_string() + ")");
  };
  if (input.rank() != 4) throw ConfigError(layer + ": input must be rank 4 [k,c,h,w], got " + input.dims_string());
  if (input.dim(1) != shape.in_c) fail("channels", input.dim(1), shape.in_c);
  if (input.dim(2) != shape.in_h) fail("height", input.dim(2), shape.in_h);
  if (input.dim(3) != shape.in_w) fail("width", input.dim(3), shape.in_w);
}

/// Writes Toeplitz row `row` of `input` into `out` (length m).
inline void im2col_row(const Tensor& input, const LayerShape& s, std::size_t row, std::span<float> out) {
  const std::size_t oh = s.out_h(), ow = s.out_w();
  const std::size_t img = row / (oh * ow);
  const std::size_t oy = (row / ow) % oh;
  const std::size_t ox = row % ow;
  const std::size_t h = s.in_h, w = s.in_w;
  const float* base = input.raw() + img * s.in_c * h * w;
  std::size_t j = 0;
  for (std::size_t c = 0; c < s.in_c; ++c) {
    const float* plane = base + c * h * w;
    for (std::size_t fy = 0; fy < s.filt_h; ++fy) {
      const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + fy) - static_cast<std::ptrdiff_t>(s.pad);
      for (std::size_t fx = 0; fx < s.filt_w; ++fx, ++j) {
        const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + fx) - static_cast<std::ptrdiff_t>(s.pad);
        const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                            ix < static_cast<std::ptrdiff_t>(w);
        out[j] = inside ? plane[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] : 0.0f;
      }
    }
  }
}

/// [k, in_c, in_h, in_w] -> [k * out_h * out_w, m].
inline Tensor im2col(const Tensor& input, const LayerShape& s, const std::string& layer = "layer") {
  s.validate(layer);
  check_layer_input(input, s, layer);
  const std::size_t k = input.dim(0);
  const std::size_t rows = k * s.out_h() * s.out_w();
  const std::size_t m = s.m();
  Tensor out({rows, m});
  for (std::size_t r = 0; r < rows; ++r) im2col_row(input, s, r, out.data().subspan(r * m, m));
  return out;
}

/// Adjoint of im2col: scatters-adds a [rows, m] matrix back to [k, in_c, in_h, in_w].
inline Tensor col2im(const Tensor& cols, const LayerShape& s, std::size_t k) {
  Tensor out({k, s.in_c, s.in_h, s.in_w});
  const std::size_t oh = s.out_h(), ow = s.out_w(), m = s.m();
  const std::size_t h = s.in_h, w = s.in_w;
  for (std::size_t img = 0; img < k; ++img) {
    float* base = out.raw() + img * s.in_c * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const float* src = cols.raw() + ((img * oh + oy) * ow + ox) * m;
        std::size_t j = 0;
        for (std::size_t c = 0; c < s.in_c; ++c) {
          float* plane = base + c * h * w;
          for (std::size_t fy = 0; fy < s.filt_h; ++fy) {
            const auto iy = static_cast<std::ptrdiff_t>(oy * s.stride + fy) - static_cast<std::ptrdiff_t>(s.pad);
            for (std::size_t fx = 0; fx < s.filt_w; ++fx, ++j) {
              const auto ix = static_cast<std::ptrdiff_t>(ox * s.stride + fx) - static_cast<std::ptrdiff_t>(s.pad);
              if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) && ix < static_cast<std::ptrdiff_t>(w)) {
                plane[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)] += src[j];
              }
            }
          }
        }
      }
    }
  }
  return out;
}

}  // namespace eap
