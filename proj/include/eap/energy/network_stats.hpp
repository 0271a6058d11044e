#pragma once

#include <vector>

#include "eap/dataset.hpp"
#include "eap/energy/energy.hpp"
#include "eap/network.hpp"

namespace eap {

inline std::vector<NamedShape> network_shapes(const Network& net) {
  std::vector<NamedShape> out;
  for (const auto& l : net.layers) out.push_back({l.name, l.bank.shape});
  return out;
}

/// Weight densities from the masks; activations dense.
inline std::vector<LayerStats> weight_stats(const Network& net) {
  std::vector<LayerStats> out;
  for (const auto& l : net.layers) out.push_back({l.bank.density(), 1.0, 1.0});
  return out;
}

/// Weight densities from the masks and activation densities averaged over `idx`.
inline std::vector<LayerStats> measure_stats(const Network& net, const Dataset& ds, std::span<const std::size_t> idx,
                                             std::size_t batch_size = 256) {
  auto out = weight_stats(net);
  if (idx.empty()) return out;
  std::vector<double> in_zero(net.layers.size(), 0.0), out_zero(net.layers.size(), 0.0);
  for (std::size_t b = 0; b < idx.size(); b += batch_size) {
    auto part = idx.subspan(b, std::min(batch_size, idx.size() - b));
    auto res = network_forward(net, gather_images(ds, part));
    const auto w = static_cast<double>(part.size());
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
      in_zero[l] += res.input_sparsity[l] * w;
      out_zero[l] += res.output_sparsity[l] * w;
    }
  }
  const auto total = static_cast<double>(idx.size());
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    out[l].input_act_density = 1.0 - in_zero[l] / total;
    out[l].output_act_density = 1.0 - out_zero[l] / total;
  }
  return out;
}

}  // namespace eap
