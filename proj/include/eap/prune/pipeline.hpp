#pragma once

// Energy-aware pruning loop:
//   1. order layers by estimated energy (highest first)
//   2. magnitude-prune each layer past its target by a margin
//   3. greedily restore weights that best reduce output error, back to the target
//   4. refit retained weights by local least squares
//   5. fine-tune the whole network with the masks frozen
// repeated with rising targets until accuracy leaves the budget.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "eap/energy/network_stats.hpp"
#include "eap/prune/config.hpp"
#include "eap/prune/lsq.hpp"
#include "eap/prune/magnitude.hpp"
#include "eap/prune/restore.hpp"
#include "eap/train.hpp"

namespace eap {

/// Layer indices by descending energy; equal energies keep layer order.
inline std::vector<std::size_t> order_layers_by_energy(std::span<const double> energies) {
  std::vector<std::size_t> order(energies.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return energies[a] > energies[b]; });
  return order;
}

inline std::vector<std::size_t> order_layers_by_energy(const Network& net, const std::vector<LayerStats>& stats,
                                                       PlanCache& cache) {
  auto ne = network_energy(network_shapes(net), stats, cache);
  std::vector<double> e;
  for (const auto& r : ne.layers) e.push_back(r.energy.total());
  return order_layers_by_energy(e);
}

// ---------------------------------------------------------------------------
// Sampling of Toeplitz rows

/// Images and per-layer Toeplitz rows used to build X and Y-hat.
struct SamplePlan {
  std::vector<std::size_t> images;              ///< dataset indices
  std::vector<std::vector<std::size_t>> rows;   ///< per layer, rows of the batch im2col matrix
};

template <class Rng>
SamplePlan make_sample_plan(const Network& net, const Dataset& ds, const PruneConfig& cfg, Rng& rng) {
  SamplePlan plan;
  auto pool = range_indices(ds.train);
  std::shuffle(pool.begin(), pool.end(), rng);
  pool.resize(std::min(pool.size(), cfg.sample_images));
  std::sort(pool.begin(), pool.end());
  plan.images = pool;
  const std::size_t k = plan.images.size();
  for (const auto& layer : net.layers) {
    const auto& s = layer.bank.shape;
    const std::size_t positions = s.out_h() * s.out_w();
    std::vector<std::size_t> rows;
    if (s.kind == LayerKind::kFc || cfg.conv_position_subsample >= positions) {
      rows.resize(k * positions);
      std::iota(rows.begin(), rows.end(), std::size_t{0});
    } else {
      std::vector<std::size_t> pos(positions);
      for (std::size_t img = 0; img < k; ++img) {
        std::iota(pos.begin(), pos.end(), std::size_t{0});
        // Partial Fisher-Yates: first `subsample` entries form a uniform sample.
        for (std::size_t t = 0; t < cfg.conv_position_subsample; ++t) {
          std::uniform_int_distribution<std::size_t> pick(t, positions - 1);
          std::swap(pos[t], pos[pick(rng)]);
        }
        std::sort(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(cfg.conv_position_subsample));
        for (std::size_t t = 0; t < cfg.conv_position_subsample; ++t) rows.push_back(img * positions + pos[t]);
      }
    }
    plan.rows.push_back(std::move(rows));
  }
  return plan;
}

/// Selected Toeplitz rows of a layer input, as a k' x m double matrix.
inline MatD toeplitz_rows(const Tensor& input, const LayerShape& s, std::span<const std::size_t> rows) {
  MatD x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(s.m()));
  std::vector<float> buf(s.m());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    im2col_row(input, s, rows[r], buf);
    for (std::size_t j = 0; j < buf.size(); ++j) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = buf[j];
  }
  return x;
}

/// Bias-free outputs Y - B1 of every layer of `net` on the sampled rows.
inline std::vector<MatD> record_targets(const Network& net, const Dataset& ds, const SamplePlan& plan) {
  auto res = network_forward(net, gather_images(ds, plan.images), {.record_inputs = true});
  std::vector<MatD> out;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& bank = net.layers[l].bank;
    out.push_back(toeplitz_rows(res.layer_inputs[l], bank.shape, plan.rows[l]) *
                  LayerPruneState::weight_matrix(bank));
  }
  return out;
}

/// Toeplitz rows of layer `li`'s input under the current network.
inline MatD record_inputs(const Network& net, const Dataset& ds, const SamplePlan& plan, std::size_t li) {
  auto res = network_forward(net, gather_images(ds, plan.images), {.record_inputs = true});
  return toeplitz_rows(res.layer_inputs[li], net.layers[li].bank.shape, plan.rows[li]);
}

// ---------------------------------------------------------------------------
// Per-layer pruning (Steps 2-4)

enum class PruneMode { kFull, kMagnitudeOnly };

struct LayerPruneReport {
  std::string name;
  double ratio_before = 0.0;
  double ratio_after = 0.0;
  double residual_l1_step2 = 0.0;
  double residual_l1_step3 = 0.0;
  double residual_l1_step4 = 0.0;
  double residual_l2_step3 = 0.0;
  double residual_l2_step4 = 0.0;
  bool changed = false;
};

/// Prunes layer `li` to compression `target`. `x` are its current Toeplitz input
/// rows and `yhat` the bias-free targets for those rows.
inline LayerPruneReport prune_layer(Network& net, std::size_t li, double target, const PruneConfig& cfg,
                                    const MatD& x, const MatD& yhat, PruneMode mode = PruneMode::kFull) {
  auto& layer = net.layers.at(li);
  FilterBank& bank = layer.bank;
  LayerPruneReport rep;
  rep.name = layer.name;
  rep.ratio_before = bank.compression_ratio();
  rep.ratio_after = rep.ratio_before;

  const std::size_t mn = bank.weights.size();
  const std::size_t nnz0 = bank.nonzero_count();
  const auto keep_target = static_cast<std::size_t>(std::llround((1.0 - target) * static_cast<double>(mn)));
  const std::size_t q = std::min(nnz0, keep_target);

  LayerPruneState state{x, yhat, {}};
  state.recompute_residual(bank);
  rep.residual_l1_step2 = rep.residual_l1_step3 = rep.residual_l1_step4 = state.residual_l1();
  rep.residual_l2_step3 = rep.residual_l2_step4 = state.residual_l2sq();
  if (q >= nnz0) return rep;

  if (mode == PruneMode::kMagnitudeOnly) {
    bank = magnitude_prune_count(std::move(bank), nnz0 - q);
    state.recompute_residual(bank);
    rep.residual_l1_step2 = rep.residual_l1_step3 = rep.residual_l1_step4 = state.residual_l1();
    rep.residual_l2_step3 = rep.residual_l2_step4 = state.residual_l2sq();
  } else {
    const double over = std::min(1.0, target + cfg.overprune_margin);
    const auto keep_over =
        std::min(q, static_cast<std::size_t>(std::llround((1.0 - over) * static_cast<double>(mn))));
    const std::vector<float> original = bank.weights;
    bank = magnitude_prune_count(std::move(bank), nnz0 - keep_over);
    state.recompute_residual(bank);
    rep.residual_l1_step2 = state.residual_l1();
    greedy_restore(state, bank, original, q, cfg.restore_batch_g, cfg.residual_norm_p);
    rep.residual_l1_step3 = state.residual_l1();
    rep.residual_l2_step3 = state.residual_l2sq();
    local_finetune_lsq(state, bank);
    rep.residual_l1_step4 = state.residual_l1();
    rep.residual_l2_step4 = state.residual_l2sq();
  }
  rep.ratio_after = bank.compression_ratio();
  rep.changed = true;
  return rep;
}

/// Prunes every layer once to `targets`, in the given order, without global fine-tuning.
template <class Rng>
std::vector<LayerPruneReport> prune_pass(Network& net, const Dataset& ds, const PruneConfig& cfg,
                                         std::span<const double> targets, std::span<const std::size_t> order,
                                         Rng& rng, PruneMode mode = PruneMode::kFull) {
  const SamplePlan plan = make_sample_plan(net, ds, cfg, rng);
  const std::vector<MatD> yhat = record_targets(net, ds, plan);
  std::vector<LayerPruneReport> reports(net.layers.size());
  for (std::size_t li : order) {
    const MatD x = record_inputs(net, ds, plan, li);
    reports[li] = prune_layer(net, li, targets[li], cfg, x, yhat[li], mode);
  }
  return reports;
}

/// Masked SGD; returns the best-validation snapshot.
template <class Rng>
void global_finetune(Network& net, const PruneConfig& cfg, const Dataset& ds, Rng& rng) {
  TrainConfig tc;
  tc.epochs = cfg.finetune_epochs;
  tc.batch_size = cfg.finetune_batch;
  tc.lr = cfg.finetune_lr;
  tc.mask_frozen = true;
  fit(net, ds, tc, rng, /*keep_best=*/true, cfg.topk);
}

// ---------------------------------------------------------------------------
// Outer loop

struct LayerIterationLog {
  std::string name;
  double ratio = 0.0;
  double residual_l1 = 0.0;
  double energy = 0.0;
};

struct IterationLog {
  std::size_t iteration = 0;
  std::vector<std::size_t> order;
  std::vector<LayerIterationLog> layers;
  Accuracy accuracy;
  double total_energy = 0.0;
  bool accepted = false;
};

inline nlohmann::json to_json(const IterationLog& it) {
  nlohmann::json j;
  j["iteration"] = it.iteration;
  j["order"] = it.order;
  for (const auto& l : it.layers) {
    j["layers"].push_back({{"name", l.name}, {"ratio", l.ratio}, {"residual_l1", l.residual_l1}, {"energy", l.energy}});
  }
  j["top1"] = it.accuracy.top1;
  j["topk"] = it.accuracy.topk;
  j["total_energy"] = it.total_energy;
  j["accepted"] = it.accepted;
  return j;
}

struct PruneResult {
  Network net;
  std::vector<IterationLog> log;
  Accuracy baseline;
  Accuracy final_accuracy;
  bool stopped_by_budget = false;
};

inline std::vector<std::size_t> calibration_indices(const Dataset& ds, std::size_t count) {
  auto idx = range_indices(ds.train);
  idx.resize(std::min(idx.size(), count));
  return idx;
}

/// Runs the schedule until post-fine-tune top-1 falls below baseline - budget;
/// returns the last network that met the budget.
template <class Rng>
PruneResult prune_network(const Network& input, const PruneConfig& cfg, const Dataset& ds, const HardwareProfile& hw,
                          Rng& rng, const std::function<void(const IterationLog&)>& on_iteration = {}) {
  input.validate();
  cfg.validate(input.layers.size());
  if (ds.val.size() == 0) throw ConfigError("prune: dataset has an empty validation split");
  PlanCache cache(hw);
  const auto calib = calibration_indices(ds, cfg.calibration_images);

  PruneResult res;
  res.net = input;
  res.baseline = evaluate(input, ds, ds.val, cfg.topk);
  res.final_accuracy = res.baseline;
  Network cur = input;

  for (std::size_t it = 0; it < cfg.schedule.size(); ++it) {
    IterationLog log;
    log.iteration = it;
    log.order = order_layers_by_energy(cur, measure_stats(cur, ds, calib), cache);
    auto reports = prune_pass(cur, ds, cfg, cfg.schedule[it], log.order, rng);
    global_finetune(cur, cfg, ds, rng);
    log.accuracy = evaluate(cur, ds, ds.val, cfg.topk);
    const auto ne = network_energy(network_shapes(cur), measure_stats(cur, ds, calib), cache);
    log.total_energy = ne.total.total();
    for (std::size_t l = 0; l < cur.layers.size(); ++l) {
      log.layers.push_back({cur.layers[l].name, cur.layers[l].bank.compression_ratio(), reports[l].residual_l1_step4,
                            ne.layers[l].energy.total()});
    }
    log.accepted = log.accuracy.top1 + 1e-12 >= res.baseline.top1 - cfg.accuracy_drop_budget;
    res.log.push_back(log);
    if (on_iteration) on_iteration(log);
    if (!log.accepted) {
      res.stopped_by_budget = true;
      break;
    }
    res.net = cur;
    res.final_accuracy = log.accuracy;
  }
  return res;
}

}  // namespace eap
