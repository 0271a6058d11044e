#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "eap/layer.hpp"

namespace eap {

/// Masks and zeroes the `count` smallest-magnitude unmasked weights of the layer.
/// Ties break by (filter, row) ascending.
inline FilterBank magnitude_prune_count(FilterBank bank, std::size_t count) {
  struct Entry {
    float mag;
    std::size_t filter, row;
  };
  std::vector<Entry> live;
  const std::size_t m = bank.m(), n = bank.n();
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      if (bank.kept(j, i)) live.push_back({std::abs(bank.w(j, i)), i, j});
    }
  }
  count = std::min(count, live.size());
  auto less = [](const Entry& a, const Entry& b) {
    if (a.mag != b.mag) return a.mag < b.mag;
    if (a.filter != b.filter) return a.filter < b.filter;
    return a.row < b.row;
  };
  std::partial_sort(live.begin(), live.begin() + static_cast<std::ptrdiff_t>(count), live.end(), less);
  for (std::size_t e = 0; e < count; ++e) {
    const std::size_t idx = live[e].row * n + live[e].filter;
    bank.mask[idx] = 0;
    bank.weights[idx] = 0.0f;
  }
  return bank;
}

/// Removes ceil(remove_fraction * current nonzeros) weights by magnitude.
inline FilterBank magnitude_prune(FilterBank bank, double remove_fraction) {
  remove_fraction = std::clamp(remove_fraction, 0.0, 1.0);
  const auto nnz = static_cast<double>(bank.nonzero_count());
  // Guard against 0.5 * 4 = 2.0000000001 rounding up.
  const auto count = static_cast<std::size_t>(std::ceil(remove_fraction * nnz - 1e-9));
  return magnitude_prune_count(std::move(bank), count);
}

}  // namespace eap
