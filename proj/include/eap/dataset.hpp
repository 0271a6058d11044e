#pragma once

// Dataset directory layout:
//   images.tnsr  [N, C, H, W]
//   labels.tnsr  [N], integral class ids stored as f32
//   split.json   {"train": [begin, end], "val": [begin, end]}

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "eap/tensor_io.hpp"

namespace eap {

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
};

struct Dataset {
  Tensor images;  ///< [N, C, H, W]
  std::vector<int> labels;
  std::size_t n_classes = 0;
  IndexRange train;
  IndexRange val;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return images.size() / std::max<std::size_t>(1, size()); }

  void validate() const {
    if (images.rank() != 4) throw ConfigError("dataset: images must be [N,C,H,W], got " + images.dims_string());
    if (images.dim(0) != labels.size()) throw ConfigError("dataset: image and label counts differ");
    if (train.end > size() || val.end > size() || train.begin > train.end || val.begin > val.end) {
      throw ConfigError("dataset: split ranges exceed sample count");
    }
    for (int l : labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= n_classes) throw ConfigError("dataset: label out of range");
    }
  }
};

/// Copies the listed samples into a [idx.size(), C, H, W] batch.
inline Tensor gather_images(const Dataset& ds, std::span<const std::size_t> idx) {
  auto dims = ds.images.dims();
  dims[0] = idx.size();
  Tensor out(dims);
  const std::size_t ss = ds.sample_size();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    std::copy_n(ds.images.raw() + idx[i] * ss, ss, out.raw() + i * ss);
  }
  return out;
}

inline std::vector<int> gather_labels(const Dataset& ds, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = ds.labels[idx[i]];
  return out;
}

inline std::vector<std::size_t> range_indices(IndexRange r) {
  std::vector<std::size_t> v(r.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = r.begin + i;
  return v;
}

inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_tensor(dir / "images.tnsr", ds.images);
  const std::size_t n = ds.labels.size();
  write_tensor(dir / "labels.tnsr", Tensor({n}, std::vector<float>(ds.labels.begin(), ds.labels.end())));
  nlohmann::json j;
  j["train"] = {ds.train.begin, ds.train.end};
  j["val"] = {ds.val.begin, ds.val.end};
  j["n_classes"] = ds.n_classes;
  std::ofstream(dir / "split.json") << j.dump(2) << '\n';
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.images = read_tensor(dir / "images.tnsr");
  Tensor lab = read_tensor(dir / "labels.tnsr");
  if (lab.rank() != 1) throw ConfigError("dataset: labels must be rank 1");
  int max_label = -1;
  for (float v : lab.data()) {
    if (v != std::floor(v) || v < 0) throw ConfigError("dataset: labels must be nonnegative integers");
    ds.labels.push_back(static_cast<int>(v));
    max_label = std::max(max_label, ds.labels.back());
  }
  std::ifstream is(dir / "split.json");
  if (!is) throw ConfigError("dataset: missing split.json in " + dir.string());
  nlohmann::json j;
  try {
    is >> j;
    ds.train = {j.at("train").at(0).get<std::size_t>(), j.at("train").at(1).get<std::size_t>()};
    ds.val = {j.at("val").at(0).get<std::size_t>(), j.at("val").at(1).get<std::size_t>()};
    ds.n_classes = j.value("n_classes", static_cast<std::size_t>(max_label + 1));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset: bad split.json: ") + e.what());
  }
  ds.validate();
  return ds;
}

/// Keeps only samples whose class is in `classes`, relabelled to their position in that list.
inline Dataset restrict_classes(const Dataset& ds, std::span<const int> classes) {
  std::vector<int> remap(ds.n_classes, -1);
  for (std::size_t i = 0; i < classes.size(); ++i) remap.at(static_cast<std::size_t>(classes[i])) = static_cast<int>(i);
  auto pick = [&](IndexRange r, std::vector<std::size_t>& out) {
    for (std::size_t i = r.begin; i < r.end; ++i) {
      if (remap[static_cast<std::size_t>(ds.labels[i])] >= 0) out.push_back(i);
    }
  };
  std::vector<std::size_t> tr, va;
  pick(ds.train, tr);
  pick(ds.val, va);
  std::vector<std::size_t> all = tr;
  all.insert(all.end(), va.begin(), va.end());
  Dataset out;
  out.images = gather_images(ds, all);
  for (std::size_t i : all) out.labels.push_back(remap[static_cast<std::size_t>(ds.labels[i])]);
  out.n_classes = classes.size();
  out.train = {0, tr.size()};
  out.val = {tr.size(), all.size()};
  return out;
}

// ---------------------------------------------------------------------------
// Procedural shapes task: 10 classes of 16x16 grayscale glyphs with random
// position, scale, stroke intensity and additive noise.

namespace detail {

inline constexpr std::size_t kShapeSide = 16;

struct Canvas {
  std::vector<float> px = std::vector<float>(kShapeSide * kShapeSide, 0.0f);
  void plot(double x, double y, float v) {
    const auto ix = static_cast<long>(std::lround(x)), iy = static_cast<long>(std::lround(y));
    if (ix < 0 || iy < 0 || ix >= static_cast<long>(kShapeSide) || iy >= static_cast<long>(kShapeSide)) return;
    float& p = px[static_cast<std::size_t>(iy) * kShapeSide + static_cast<std::size_t>(ix)];
    p = std::max(p, v);
  }
  void line(double x0, double y0, double x1, double y1, float v) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)) * 2)) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      plot(x0 + t * (x1 - x0), y0 + t * (y1 - y0), v);
    }
  }
  void ellipse(double cx, double cy, double r, float v, bool filled) {
    for (int y = 0; y < static_cast<int>(kShapeSide); ++y) {
      for (int x = 0; x < static_cast<int>(kShapeSide); ++x) {
        const double d = std::hypot(x - cx, y - cy);
        if (filled ? d <= r : std::abs(d - r) <= 0.6) plot(x, y, v);
      }
    }
  }
  void rect(double x0, double y0, double x1, double y1, float v, bool filled) {
    if (filled) {
      for (double y = y0; y <= y1 + 1e-9; y += 0.5) line(x0, y, x1, y, v);
    } else {
      line(x0, y0, x1, y0, v);
      line(x1, y0, x1, y1, v);
      line(x1, y1, x0, y1, v);
      line(x0, y1, x0, y0, v);
    }
  }
};

}  // namespace detail

inline constexpr std::size_t kShapeClasses = 10;

/// Renders one glyph of class `cls` (0..9) into a 16x16 image.
template <class Rng>
std::vector<float> render_shape(int cls, Rng& rng) {
  using detail::Canvas;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double r = 3.0 + 2.5 * u01(rng);  // half-extent
  const double cx = r + 1 + (16 - 2 * r - 3) * u01(rng);
  const double cy = r + 1 + (16 - 2 * r - 3) * u01(rng);
  const auto v = static_cast<float>(0.6 + 0.4 * u01(rng));
  Canvas c;
  switch (cls) {
    case 0: c.ellipse(cx, cy, r, v, true); break;                     // disc
    case 1: c.ellipse(cx, cy, r, v, false); break;                    // ring
    case 2: c.rect(cx - r, cy - r, cx + r, cy + r, v, true); break;   // filled square
    case 3: c.rect(cx - r, cy - r, cx + r, cy + r, v, false); break;  // hollow square
    case 4:                                                           // plus
      c.line(cx - r, cy, cx + r, cy, v);
      c.line(cx, cy - r, cx, cy + r, v);
      break;
    case 5:  // cross
      c.line(cx - r, cy - r, cx + r, cy + r, v);
      c.line(cx - r, cy + r, cx + r, cy - r, v);
      break;
    case 6:  // triangle
      c.line(cx, cy - r, cx - r, cy + r, v);
      c.line(cx - r, cy + r, cx + r, cy + r, v);
      c.line(cx + r, cy + r, cx, cy - r, v);
      break;
    case 7:  // horizontal bars
      c.line(cx - r, cy - r * 0.6, cx + r, cy - r * 0.6, v);
      c.line(cx - r, cy + r * 0.6, cx + r, cy + r * 0.6, v);
      break;
    case 8:  // vertical bars
      c.line(cx - r * 0.6, cy - r, cx - r * 0.6, cy + r, v);
      c.line(cx + r * 0.6, cy - r, cx + r * 0.6, cy + r, v);
      break;
    default:  // T shape
      c.line(cx - r, cy - r, cx + r, cy - r, v);
      c.line(cx, cy - r, cx, cy + r, v);
      break;
  }
  std::normal_distribution<float> noise(0.0f, 0.08f);
  for (auto& p : c.px) p = std::clamp(p + noise(rng), 0.0f, 1.0f);
  return c.px;
}

/// Balanced procedural dataset; classes cycle so every split is balanced.
template <class Rng>
Dataset make_shapes_dataset(std::size_t n_train, std::size_t n_val, Rng& rng) {
  Dataset ds;
  const std::size_t n = n_train + n_val;
  ds.images = Tensor({n, 1, detail::kShapeSide, detail::kShapeSide});
  ds.n_classes = kShapeClasses;
  const std::size_t ss = detail::kShapeSide * detail::kShapeSide;
  for (std::size_t i = 0; i < n; ++i) {
    const int cls = static_cast<int>(i % kShapeClasses);
    auto img = render_shape(cls, rng);
    std::copy(img.begin(), img.end(), ds.images.raw() + i * ss);
    ds.labels.push_back(cls);
  }
  ds.train = {0, n_train};
  ds.val = {n_train, n};
  return ds;
}

}  // namespace eap
