#pragma once

#include <Eigen/QR>

#include <cmath>
#include <string>
#include <vector>

#include "eap/error.hpp"
#include "eap/prune/restore.hpp"

namespace eap {

/// Least-squares fit of `b` over the columns of `a`.
///
/// Householder QR with column pivoting when `a` has full column rank; otherwise
/// the ridge-regularized problem [a; sqrt(lambda) I] with
/// lambda = 1e-6 * trace(a^T a) / cols, which tends to the minimum-norm solution.
inline Eigen::VectorXd solve_least_squares(const MatD& a, const Eigen::VectorXd& b) {
  Eigen::ColPivHouseholderQR<MatD> qr(a);
  if (qr.rank() == a.cols()) return qr.solve(b);
  const Eigen::Index s = a.cols();
  const double lambda = 1e-6 * a.squaredNorm() / static_cast<double>(s);
  const double root = std::sqrt(lambda > 0.0 ? lambda : 1e-12);
  MatD aug(a.rows() + s, s);
  aug << a, MatD::Identity(s, s) * root;
  Eigen::VectorXd baug(a.rows() + s);
  baug << b, Eigen::VectorXd::Zero(s);
  return Eigen::HouseholderQR<MatD>(aug).solve(baug);
}

/// Per-filter l2 residuals before/after a local refit.
struct LocalFitReport {
  std::vector<double> before;
  std::vector<double> after;
};

/// Refits each filter's retained weights to minimize ||yhat_i - x_S a_S||_2.
/// Off-support weights stay zero; empty filters are skipped. A refit that would
/// raise a filter's residual (ridge fallback) is discarded.
inline LocalFitReport local_finetune_lsq(LayerPruneState& state, FilterBank& bank) {
  const std::size_t m = bank.m(), n = bank.n();
  LocalFitReport rep;
  rep.before.resize(n);
  rep.after.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    std::vector<Eigen::Index> support;
    for (std::size_t j = 0; j < m; ++j) {
      if (bank.kept(j, i)) support.push_back(static_cast<Eigen::Index>(j));
    }
    Eigen::VectorXd cur = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(support.size()));
    for (std::size_t t = 0; t < support.size(); ++t) cur(static_cast<Eigen::Index>(t)) = bank.w(static_cast<std::size_t>(support[t]), i);
    MatD xs(state.x.rows(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t t = 0; t < support.size(); ++t) xs.col(static_cast<Eigen::Index>(t)) = state.x.col(support[t]);
    const Eigen::VectorXd target = state.yhat.col(col);
    const double before = (target - xs * cur).squaredNorm();
    rep.before[i] = before;
    rep.after[i] = before;
    if (support.empty()) {
      state.residual.col(col) = target;
      continue;
    }
    Eigen::VectorXd sol = solve_least_squares(xs, target);
    if (!sol.allFinite()) throw NumericError("local least squares produced non-finite weights in filter " + std::to_string(i));
    // Weights live in float32; score the rounded solution.
    for (Eigen::Index t = 0; t < sol.size(); ++t) sol(t) = static_cast<double>(static_cast<float>(sol(t)));
    const double after = (target - xs * sol).squaredNorm();
    if (after <= before) {
      for (std::size_t t = 0; t < support.size(); ++t) {
        bank.w(static_cast<std::size_t>(support[t]), i) = static_cast<float>(sol(static_cast<Eigen::Index>(t)));
      }
      rep.after[i] = after;
      state.residual.col(col) = target - xs * sol;
    } else {
      state.residual.col(col) = target - xs * cur;
    }
  }
  return rep;
}

}  // namespace eap
