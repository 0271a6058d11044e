#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "eap/energy/profile.hpp"
#include "eap/energy/tiling.hpp"
#include "eap/layer.hpp"

namespace eap {

/// Sparsity of one layer's operands. Densities are nonzero fractions.
struct LayerStats {
  double weight_density = 1.0;
  double input_act_density = 1.0;
  double output_act_density = 1.0;

  /// Independence model: a MAC survives when both operands are nonzero.
  double nonskipped_mac_fraction() const { return weight_density * input_act_density; }

  void validate(const std::string& layer = "layer") const {
    for (double d : {weight_density, input_act_density, output_act_density}) {
      if (!(d >= 0.0 && d <= 1.0)) throw ConfigError(layer + ": densities must lie in [0, 1]");
    }
  }
};

/// Energy of one layer in MAC units, split by where it is spent.
struct EnergyBreakdown {
  double comp = 0.0;
  double input_fmap = 0.0;
  double output_fmap = 0.0;
  double weights = 0.0;

  double movement() const { return input_fmap + output_fmap + weights; }
  double total() const { return comp + input_fmap + output_fmap + weights; }

  EnergyBreakdown& operator+=(const EnergyBreakdown& o) {
    comp += o.comp;
    input_fmap += o.input_fmap;
    output_fmap += o.output_fmap;
    weights += o.weights;
    return *this;
  }
};

inline std::uint64_t dense_macs(const LayerShape& s) {
  return static_cast<std::uint64_t>(s.batch) * s.out_h() * s.out_w() * s.n() * s.m();
}

inline std::uint64_t nonskipped_macs(const LayerShape& s, const LayerStats& st) {
  return static_cast<std::uint64_t>(std::llround(static_cast<double>(dense_macs(s)) * st.nonskipped_mac_fraction()));
}

/// Fraction of dense words moved once sparse data is compressed.
inline double compression_factor(double density, double overhead) {
  return std::min(1.0, density * (1.0 + overhead));
}

/// Applies sparsity and bitwidth to a dense 16-bit access plan.
///
/// Traffic between levels shrinks by the compression factor of each datatype's
/// density. Innermost (per-MAC) accesses shrink by the non-skipped fraction.
/// Memory energy scales linearly with bitwidth; MAC energy quadratically.
inline EnergyBreakdown energy_from_plan(const LayerShape& s, const LayerStats& st, const HardwareProfile& hw,
                                        const AccessPlan& plan) {
  const std::size_t L = hw.levels.size();
  const double ov = hw.compression_overhead;
  const std::array<double, kDataTypes> compress = {compression_factor(st.input_act_density, ov),
                                                   compression_factor(st.output_act_density, ov),
                                                   compression_factor(st.weight_density, ov)};
  const double skip = st.nonskipped_mac_fraction();
  std::array<double, kDataTypes> e{};
  for (std::size_t d = 0; d < kDataTypes; ++d) {
    double outer = 0.0;
    for (std::size_t l = 0; l + 1 < L; ++l) outer += static_cast<double>(plan.counts[l][d]) * hw.levels[l].energy;
    const double inner = static_cast<double>(plan.counts[L - 1][d]) * hw.levels[L - 1].energy;
    e[d] = outer * compress[d] + inner * skip;
  }
  const double wscale = hw.weight_bits / 16.0;
  const double ascale = hw.activation_bits / 16.0;
  EnergyBreakdown b;
  b.comp = static_cast<double>(nonskipped_macs(s, st)) * hw.mac_energy * wscale * ascale;
  b.input_fmap = e[kIfmap] * ascale;
  b.output_fmap = e[kOfmap] * ascale;
  b.weights = e[kWeights] * wscale;
  return b;
}

inline EnergyBreakdown layer_energy(const LayerShape& s, const LayerStats& st, const HardwareProfile& hw,
                                    const std::string& layer = "layer") {
  st.validate(layer);
  return energy_from_plan(s, st, hw, optimize_accesses(s, hw, layer));
}

struct NamedShape {
  std::string name;
  LayerShape shape;
};

struct LayerEnergyRow {
  std::string name;
  LayerKind kind = LayerKind::kConv;
  std::uint64_t weights = 0;
  std::uint64_t nonzero_weights = 0;
  std::uint64_t macs = 0;
  std::uint64_t nonskipped_macs = 0;
  EnergyBreakdown energy;
};

struct NetworkEnergy {
  std::vector<LayerEnergyRow> layers;
  EnergyBreakdown total;
  std::uint64_t weights = 0;
  std::uint64_t nonzero_weights = 0;
  std::uint64_t macs = 0;
  std::uint64_t nonskipped_macs = 0;
};

/// Caches optimal access plans by shape; the tiling depends only on geometry and profile.
class PlanCache {
 public:
  explicit PlanCache(HardwareProfile hw) : hw_(std::move(hw)) { hw_.validate(); }

  const HardwareProfile& profile() const { return hw_; }

  const AccessPlan& get(const LayerShape& s, const std::string& layer) {
    auto key = std::make_tuple(s.kind, s.in_h, s.in_w, s.in_c, s.filt_h, s.filt_w, s.num_filters, s.stride, s.pad,
                               s.batch);
    auto it = plans_.find(key);
    if (it == plans_.end()) it = plans_.emplace(key, optimize_accesses(s, hw_, layer)).first;
    return it->second;
  }

 private:
  using Key = std::tuple<LayerKind, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t, std::size_t,
                         std::size_t, std::size_t, std::size_t>;
  HardwareProfile hw_;
  std::map<Key, AccessPlan> plans_;
};

/// Per-layer breakdowns in layer order plus exact totals. `stats` may be empty (dense).
inline NetworkEnergy network_energy(const std::vector<NamedShape>& layers, const std::vector<LayerStats>& stats,
                                    PlanCache& cache) {
  if (!stats.empty() && stats.size() != layers.size()) throw ConfigError("network_energy: stats count mismatch");
  const auto& hw = cache.profile();
  NetworkEnergy out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& [name, shape] = layers[i];
    const LayerStats st = stats.empty() ? LayerStats{} : stats[i];
    st.validate(name);
    LayerEnergyRow row;
    row.name = name;
    row.kind = shape.kind;
    row.weights = shape.weight_count();
    row.nonzero_weights = static_cast<std::uint64_t>(std::llround(st.weight_density * static_cast<double>(row.weights)));
    row.macs = dense_macs(shape);
    row.nonskipped_macs = nonskipped_macs(shape, st);
    row.energy = energy_from_plan(shape, st, hw, cache.get(shape, name));
    out.total += row.energy;
    out.weights += row.weights;
    out.nonzero_weights += row.nonzero_weights;
    out.macs += row.macs;
    out.nonskipped_macs += row.nonskipped_macs;
    out.layers.push_back(std::move(row));
  }
  return out;
}

inline NetworkEnergy network_energy(const std::vector<NamedShape>& layers, const std::vector<LayerStats>& stats,
                                    const HardwareProfile& hw) {
  PlanCache cache(hw);
  return network_energy(layers, stats, cache);
}

}  // namespace eap
