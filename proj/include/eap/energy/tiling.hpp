#pragma once

// Access-count model and tiling search.
//
// A layer is the 5-loop nest (batch B, output channel K, input channel C,
// output row P, output col Q); the filter window R x S always sits whole
// inside a tile. Every bounded memory level holds one tile (b, k, c, p, q);
// each tile size divides the enclosing level's tile. Data moving from level
// l into level l+1 is charged once, at level l's access energy:
//
//   weights  (B/b)(P/p)(Q/q) * K*C*R*S
//   ifmap    (K/k) * B*C * rows(p) * cols(q)     rows/cols: clipped halo sums
//   ofmap    B*K*P*Q * (2*(C/c) - 1)             write per C-tile, read back per extra C-tile
//
// The innermost level serves each MAC: one ifmap read, one weight read and a
// partial-sum read + write.

#include <algorithm>
#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "eap/energy/profile.hpp"
#include "eap/layer.hpp"

namespace eap {

enum DataType : std::size_t { kIfmap = 0, kOfmap = 1, kWeights = 2 };
inline constexpr std::size_t kDataTypes = 3;
inline constexpr std::size_t kLoops = 5;  // B, K, C, P, Q

using TileVec = std::array<std::uint64_t, kLoops>;
using AccessCounts = std::array<std::uint64_t, kDataTypes>;

/// Tile sizes for every bounded level, outermost bounded level first.
struct TilingPoint {
  std::vector<TileVec> tiles;
  friend bool operator==(const TilingPoint&, const TilingPoint&) = default;
};

/// Loop bounds of a layer as seen by the tiling model. FC layers are folded to
/// a 1x1 window over m input channels.
struct LoopNest {
  TileVec bounds{};  // B, K, C, P, Q
  std::uint64_t filt_h = 1, filt_w = 1, stride = 1, pad = 0, in_h = 1, in_w = 1;

  static LoopNest from_shape(const LayerShape& s) {
    LoopNest n;
    if (s.kind == LayerKind::kFc) {
      n.bounds = {s.batch, s.num_filters, s.m(), 1, 1};
      return n;
    }
    n.bounds = {s.batch, s.num_filters, s.in_c, s.out_h(), s.out_w()};
    n.filt_h = s.filt_h;
    n.filt_w = s.filt_w;
    n.stride = s.stride;
    n.pad = s.pad;
    n.in_h = s.in_h;
    n.in_w = s.in_w;
    return n;
  }

  std::uint64_t macs() const {
    return bounds[0] * bounds[1] * bounds[2] * bounds[3] * bounds[4] * filt_h * filt_w;
  }

  /// Sum over the `out/tile` row tiles of the input rows each tile touches, clipped to the image.
  static std::uint64_t halo_sum(std::uint64_t out, std::uint64_t tile, std::uint64_t filt, std::uint64_t stride,
                                std::uint64_t pad, std::uint64_t in) {
    std::uint64_t total = 0;
    const auto ipad = static_cast<std::int64_t>(pad), iin = static_cast<std::int64_t>(in);
    for (std::uint64_t t = 0; t < out / tile; ++t) {
      std::int64_t covered = 0;  // rows below this are already counted for the tile
      for (std::uint64_t o = t * tile; o < (t + 1) * tile; ++o) {
        const auto start = static_cast<std::int64_t>(o * stride) - ipad;
        const auto end = std::min(start + static_cast<std::int64_t>(filt), iin);
        const auto lo = std::max(start, covered);
        if (end > lo) total += static_cast<std::uint64_t>(end - lo);
        covered = std::max(covered, end);
      }
    }
    return total;
  }

  std::uint64_t ifmap_rows(std::uint64_t p) const { return halo_sum(bounds[3], p, filt_h, stride, pad, in_h); }
  std::uint64_t ifmap_cols(std::uint64_t q) const { return halo_sum(bounds[4], q, filt_w, stride, pad, in_w); }

  /// Words of each datatype a level must hold for tile `t`.
  std::uint64_t footprint(const TileVec& t) const {
    const std::uint64_t halo_h = std::min((t[3] - 1) * stride + filt_h, in_h);
    const std::uint64_t halo_w = std::min((t[4] - 1) * stride + filt_w, in_w);
    const std::uint64_t w = t[1] * t[2] * filt_h * filt_w;
    const std::uint64_t i = t[0] * t[2] * halo_h * halo_w;
    const std::uint64_t o = t[0] * t[1] * t[3] * t[4];
    return w + i + o;
  }

  /// Words moved into a level holding tile `t` from its parent.
  AccessCounts transfers(const TileVec& t) const {
    const auto& n = bounds;
    AccessCounts a{};
    a[kWeights] = (n[0] / t[0]) * (n[3] / t[3]) * (n[4] / t[4]) * n[1] * n[2] * filt_h * filt_w;
    a[kIfmap] = (n[1] / t[1]) * n[0] * n[2] * ifmap_rows(t[3]) * ifmap_cols(t[4]);
    a[kOfmap] = n[0] * n[1] * n[3] * n[4] * (2 * (n[2] / t[2]) - 1);
    return a;
  }

  /// Distinct words of each datatype (each fetched once from the outermost level).
  AccessCounts unique_words() const { return transfers(bounds); }

  AccessCounts per_mac_accesses() const {
    const auto m = macs();
    return {m, 2 * m, m};
  }
};

/// Per-level access counts for a tiling, and their energy at 16-bit, dense.
struct AccessPlan {
  TilingPoint tiling;
  std::vector<AccessCounts> counts;               ///< [level][datatype]
  std::array<double, kDataTypes> energy{};        ///< per datatype, all levels
  double total() const { return energy[0] + energy[1] + energy[2]; }
};

/// Access counts implied by a tiling (one tile per bounded level).
inline AccessPlan plan_for_tiling(const LoopNest& nest, const HardwareProfile& hw, const TilingPoint& tp) {
  AccessPlan plan;
  plan.tiling = tp;
  const std::size_t L = hw.levels.size();
  plan.counts.resize(L);
  for (std::size_t l = 0; l + 1 < L; ++l) plan.counts[l] = nest.transfers(tp.tiles.at(l));
  plan.counts[L - 1] = nest.per_mac_accesses();
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t d = 0; d < kDataTypes; ++d) {
      plan.energy[d] += static_cast<double>(plan.counts[l][d]) * hw.levels[l].energy;
    }
  }
  return plan;
}

/// Fetch-once lower bound: every bounded level receives each datum exactly once.
inline AccessPlan fetch_once_bound(const LoopNest& nest, const HardwareProfile& hw) {
  TilingPoint tp;
  tp.tiles.assign(hw.levels.size() - 1, nest.bounds);
  return plan_for_tiling(nest, hw, tp);
}

/// No-reuse upper bound: unit tiles at every bounded level.
inline AccessPlan no_reuse_bound(const LoopNest& nest, const HardwareProfile& hw) {
  TilingPoint tp;
  tp.tiles.assign(hw.levels.size() - 1, TileVec{1, 1, 1, 1, 1});
  return plan_for_tiling(nest, hw, tp);
}

inline std::vector<std::uint64_t> divisors(std::uint64_t n) {
  std::vector<std::uint64_t> d;
  for (std::uint64_t i = 1; i * i <= n; ++i) {
    if (n % i == 0) {
      d.push_back(i);
      if (i * i != n) d.push_back(n / i);
    }
  }
  std::sort(d.begin(), d.end());
  return d;
}

/// Minimum-energy tiling over all nested divisor tilings that fit each level.
/// Ties resolve to the lexicographically smallest tile sequence.
inline AccessPlan optimize_accesses(const LayerShape& shape, const HardwareProfile& hw,
                                    const std::string& layer = "layer") {
  hw.validate();
  shape.validate(layer);
  const LoopNest nest = LoopNest::from_shape(shape);
  const std::size_t L = hw.levels.size();
  const std::size_t bounded = L - 1;

  const TileVec unit{1, 1, 1, 1, 1};
  for (std::size_t l = 1; l < L; ++l) {
    if (nest.footprint(unit) > *hw.levels[l].capacity) {
      throw InfeasibleProfile(layer + ": profile infeasible, level '" + hw.levels[l].name + "' (" +
                              std::to_string(*hw.levels[l].capacity) + " words) cannot hold the minimal tile (" +
                              std::to_string(nest.footprint(unit)) + " words)");
    }
  }

  // Candidate tile vectors, indexed in mixed radix over per-loop divisor lists.
  std::array<std::vector<std::uint64_t>, kLoops> divs;
  std::array<std::size_t, kLoops> radix{};
  std::size_t total = 1;
  for (std::size_t x = 0; x < kLoops; ++x) {
    divs[x] = divisors(nest.bounds[x]);
    radix[x] = divs[x].size();
    total *= radix[x];
  }
  // sub[x][i] = indices of divisors of divs[x][i].
  std::array<std::vector<std::vector<std::size_t>>, kLoops> sub;
  for (std::size_t x = 0; x < kLoops; ++x) {
    sub[x].resize(radix[x]);
    for (std::size_t i = 0; i < radix[x]; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        if (divs[x][i] % divs[x][j] == 0) sub[x][i].push_back(j);
      }
    }
  }
  auto decode = [&](std::size_t idx) {
    std::array<std::size_t, kLoops> digits{};
    for (std::size_t x = kLoops; x-- > 0;) {
      digits[x] = idx % radix[x];
      idx /= radix[x];
    }
    return digits;
  };
  auto vec_of = [&](const std::array<std::size_t, kLoops>& d) {
    TileVec t{};
    for (std::size_t x = 0; x < kLoops; ++x) t[x] = divs[x][d[x]];
    return t;
  };
  // Mixed-radix order with B most significant matches lexicographic order on TileVec.
  std::vector<TileVec> cand(total);
  std::vector<std::uint64_t> foot(total);
  for (std::size_t i = 0; i < total; ++i) {
    cand[i] = vec_of(decode(i));
    foot[i] = nest.footprint(cand[i]);
  }

  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();
  // best[j][i]: minimal energy of levels j.. given bounded level j holds cand[i].
  std::vector<std::vector<double>> best(bounded, std::vector<double>(total, kInf));
  std::vector<std::vector<std::size_t>> next(bounded, std::vector<std::size_t>(total, kNone));

  auto transfer_energy = [&](const TileVec& t, double e) {
    const auto a = nest.transfers(t);
    return (static_cast<double>(a[0]) + static_cast<double>(a[1]) + static_cast<double>(a[2])) * e;
  };

  for (std::size_t j = bounded; j-- > 0;) {
    const std::size_t level = j + 1;
    const auto cap = *hw.levels[level].capacity;
    const double parent_e = hw.levels[level - 1].energy;
    for (std::size_t i = 0; i < total; ++i) {
      if (foot[i] > cap) continue;
      const double own = transfer_energy(cand[i], parent_e);
      if (j + 1 == bounded) {
        best[j][i] = own;
        continue;
      }
      // Enumerate divisor sub-tiles in lexicographic order; keep the first minimum.
      const auto d = decode(i);
      double b = kInf;
      std::size_t arg = kNone;
      for (std::size_t a0 : sub[0][d[0]])
        for (std::size_t a1 : sub[1][d[1]])
          for (std::size_t a2 : sub[2][d[2]])
            for (std::size_t a3 : sub[3][d[3]])
              for (std::size_t a4 : sub[4][d[4]]) {
                const std::size_t c = (((a0 * radix[1] + a1) * radix[2] + a2) * radix[3] + a3) * radix[4] + a4;
                if (best[j + 1][c] < b) {
                  b = best[j + 1][c];
                  arg = c;
                }
              }
      if (arg == kNone) continue;
      best[j][i] = own + b;
      next[j][i] = arg;
    }
  }

  std::size_t top = kNone;
  for (std::size_t i = 0; i < total; ++i) {
    if (top == kNone ? best[0][i] < kInf : best[0][i] < best[0][top]) top = i;
  }
  if (top == kNone) throw InfeasibleProfile(layer + ": profile infeasible, no tiling fits every level");

  TilingPoint tp;
  for (std::size_t j = 0, i = top; j < bounded; i = next[j][i], ++j) tp.tiles.push_back(cand[i]);
  return plan_for_tiling(nest, hw, tp);
}

}  // namespace eap
