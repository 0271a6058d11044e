#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "eap/layer.hpp"

namespace eap {

using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic>;

/// Sampled layer inputs and targets for output-error minimization.
///
/// x: k' x m Toeplitz rows; yhat: k' x n bias-free targets; residual column i
/// holds yhat_i - x * A_i for the bank's current weights.
struct LayerPruneState {
  MatD x;
  MatD yhat;
  MatD residual;

  std::size_t rows() const { return static_cast<std::size_t>(x.rows()); }

  /// Column-major copy of a bank's weights as an m x n double matrix.
  static MatD weight_matrix(const FilterBank& bank) {
    MatD a(static_cast<Eigen::Index>(bank.m()), static_cast<Eigen::Index>(bank.n()));
    for (std::size_t j = 0; j < bank.m(); ++j) {
      for (std::size_t i = 0; i < bank.n(); ++i) a(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = bank.w(j, i);
    }
    return a;
  }

  void recompute_residual(const FilterBank& bank) { residual = yhat - x * weight_matrix(bank); }

  double residual_l1() const { return residual.cwiseAbs().sum(); }
  double residual_l2sq() const { return residual.squaredNorm(); }
};

inline double pnorm_p(const Eigen::Ref<const Eigen::VectorXd>& v, int p) {
  return p == 1 ? v.cwiseAbs().sum() : v.squaredNorm();
}

/// One filter visit of the restoration loop.
struct RestoreStep {
  std::size_t filter = 0;
  std::vector<std::size_t> rows;   ///< restored weight rows, in selection order
  std::vector<double> improvement; ///< matching p-norm improvements
};

/// Restores masked weights to their `original` values until the bank holds exactly `q` nonzeros.
///
/// Each round picks the filter with the largest l1 residual among filters that
/// still have restorable weights (masked now, nonzero in `original`), scores every
/// candidate by how much restoring it shrinks that filter's residual p-norm, and
/// restores the best min(g, remaining) of them, even when the improvement is negative.
inline std::vector<RestoreStep> greedy_restore(LayerPruneState& state, FilterBank& bank,
                                               const std::vector<float>& original, std::size_t q, std::size_t g,
                                               int p = 1) {
  std::size_t nnz = bank.nonzero_count();
  if (q < nnz) throw ConfigError("greedy_restore: target below current support");
  if (g == 0) throw ConfigError("greedy_restore: g must be >= 1");
  const std::size_t m = bank.m(), n = bank.n();
  auto restorable = [&](std::size_t j, std::size_t i) {
    return !bank.kept(j, i) && original[j * n + i] != 0.0f;
  };
  std::vector<std::size_t> open(n, 0);
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) open[i] += restorable(j, i);
  }
  std::vector<double> filter_l1(n);
  for (std::size_t i = 0; i < n; ++i) filter_l1[i] = state.residual.col(static_cast<Eigen::Index>(i)).cwiseAbs().sum();

  std::vector<RestoreStep> steps;
  Eigen::VectorXd trial(state.residual.rows());
  while (nnz < q) {
    std::size_t best = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (open[i] && (best == n || filter_l1[i] > filter_l1[best])) best = i;
    }
    if (best == n) throw ConfigError("greedy_restore: not enough restorable weights to reach q");
    const auto col = static_cast<Eigen::Index>(best);
    auto r = state.residual.col(col);
    const double base = pnorm_p(r, p);

    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t j = 0; j < m; ++j) {
      if (!restorable(j, best)) continue;
      trial = r - state.x.col(static_cast<Eigen::Index>(j)) * static_cast<double>(original[j * n + best]);
      scored.emplace_back(base - pnorm_p(trial, p), j);
    }
    const std::size_t take = std::min({g, q - nnz, scored.size()});
    std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(take), scored.end(),
                      [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
    RestoreStep step{best, {}, {}};
    for (std::size_t t = 0; t < take; ++t) {
      const std::size_t j = scored[t].second;
      const float v = original[j * n + best];
      bank.mask[j * n + best] = 1;
      bank.w(j, best) = v;
      r -= state.x.col(static_cast<Eigen::Index>(j)) * static_cast<double>(v);
      step.rows.push_back(j);
      step.improvement.push_back(scored[t].first);
    }
    open[best] -= take;
    nnz += take;
    filter_l1[best] = r.cwiseAbs().sum();
    steps.push_back(std::move(step));
  }
  return steps;
}

}  // namespace eap
