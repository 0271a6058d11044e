#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "eap/error.hpp"

namespace eap {

/// Knobs of the energy-aware pruning loop.
struct PruneConfig {
  /// schedule[iteration][layer]: target compression ratio of each layer after that iteration.
  std::vector<std::vector<double>> schedule;
  double overprune_margin = 0.05;
  std::size_t restore_batch_g = 2;
  int residual_norm_p = 1;
  double accuracy_drop_budget = 0.01;
  std::size_t sample_images = 1024;
  std::size_t conv_position_subsample = 2;
  std::size_t calibration_images = 256;
  std::size_t finetune_epochs = 2;
  float finetune_lr = 0.01f;
  std::size_t finetune_batch = 32;
  std::size_t topk = 5;

  void validate(std::size_t layers) const {
    if (!(overprune_margin >= 0.0 && overprune_margin < 1.0)) throw ConfigError("prune: margin must be in [0, 1)");
    if (restore_batch_g < 1) throw ConfigError("prune: g must be >= 1");
    if (residual_norm_p != 1 && residual_norm_p != 2) throw ConfigError("prune: residual norm p must be 1 or 2");
    if (!(accuracy_drop_budget >= 0.0)) throw ConfigError("prune: accuracy budget must be nonnegative");
    if (sample_images == 0 || conv_position_subsample == 0) throw ConfigError("prune: sample sizes must be positive");
    if (calibration_images == 0) throw ConfigError("prune: calibration_images must be positive");
    for (const auto& step : schedule) {
      if (step.size() != layers) throw ConfigError("prune: schedule row length must equal the layer count");
      for (double r : step) {
        if (!(r >= 0.0 && r < 1.0)) throw ConfigError("prune: ratios must lie in [0, 1)");
      }
    }
  }
};

/// Each layer climbs by `step` per iteration until it reaches its cap.
inline std::vector<std::vector<double>> linear_schedule(const std::vector<double>& caps, double step) {
  if (!(step > 0.0)) throw ConfigError("schedule step must be positive");
  std::vector<std::vector<double>> out;
  std::vector<double> cur(caps.size(), 0.0);
  for (bool moved = true; moved;) {
    moved = false;
    for (std::size_t i = 0; i < caps.size(); ++i) {
      const double nxt = std::min(caps[i], cur[i] + step);
      if (nxt > cur[i] + 1e-12) {
        cur[i] = nxt;
        moved = true;
      }
    }
    if (moved) out.push_back(cur);
  }
  return out;
}

}  // namespace eap
