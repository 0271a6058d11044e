#pragma once

#include <nlohmann/json.hpp>

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

#include "eap/energy/energy.hpp"

namespace eap {

/// `v` printed with `digits` significant digits (%g style).
inline std::string sig(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

/// Scientific notation with 4 significant digits, for console tables.
inline std::string sci4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

inline double round_sig(double v, int digits = 6) { return std::stod(sig(v, digits)); }

inline constexpr const char* kEnergyCsvHeader = "layer,macs,nonskipped_macs,comp,ifmap,ofmap,weights,total";

inline std::string energy_csv(const NetworkEnergy& ne) {
  std::ostringstream os;
  os << kEnergyCsvHeader << '\n';
  auto row = [&](const std::string& name, std::uint64_t macs, std::uint64_t ns, const EnergyBreakdown& e) {
    os << name << ',' << macs << ',' << ns << ',' << sig(e.comp) << ',' << sig(e.input_fmap) << ','
       << sig(e.output_fmap) << ',' << sig(e.weights) << ',' << sig(e.total()) << '\n';
  };
  for (const auto& r : ne.layers) row(r.name, r.macs, r.nonskipped_macs, r.energy);
  row("total", ne.macs, ne.nonskipped_macs, ne.total);
  return os.str();
}

/// CONV vs FC shares of energy and weights.
struct KindShares {
  double conv_energy = 0.0, fc_energy = 0.0;
  std::uint64_t conv_weights = 0, fc_weights = 0;
  double conv_energy_share() const { return conv_energy / (conv_energy + fc_energy); }
  double conv_weight_share() const {
    return static_cast<double>(conv_weights) / static_cast<double>(conv_weights + fc_weights);
  }
};

inline KindShares kind_shares(const NetworkEnergy& ne) {
  KindShares s;
  for (const auto& r : ne.layers) {
    if (r.kind == LayerKind::kConv) {
      s.conv_energy += r.energy.total();
      s.conv_weights += r.weights;
    } else {
      s.fc_energy += r.energy.total();
      s.fc_weights += r.weights;
    }
  }
  return s;
}

inline nlohmann::json energy_json(const NetworkEnergy& ne) {
  auto brk = [](const EnergyBreakdown& e) {
    return nlohmann::json{{"comp", round_sig(e.comp)},
                          {"ifmap", round_sig(e.input_fmap)},
                          {"ofmap", round_sig(e.output_fmap)},
                          {"weights", round_sig(e.weights)},
                          {"total", round_sig(e.total())}};
  };
  nlohmann::json j;
  j["layers"] = nlohmann::json::array();
  for (const auto& r : ne.layers) {
    auto lj = brk(r.energy);
    lj["layer"] = r.name;
    lj["kind"] = to_string(r.kind);
    lj["macs"] = r.macs;
    lj["nonskipped_macs"] = r.nonskipped_macs;
    lj["weights_count"] = r.weights;
    lj["nonzero_weights"] = r.nonzero_weights;
    j["layers"].push_back(lj);
  }
  auto tj = brk(ne.total);
  tj["macs"] = ne.macs;
  tj["nonskipped_macs"] = ne.nonskipped_macs;
  tj["weights_count"] = ne.weights;
  tj["nonzero_weights"] = ne.nonzero_weights;
  j["totals"] = tj;
  const auto ks = kind_shares(ne);
  j["conv_energy_share"] = round_sig(ks.conv_energy_share());
  j["conv_weight_share"] = round_sig(ks.conv_weight_share());
  return j;
}

/// Parses energy_csv output back into rows (the trailing total row included).
struct EnergyCsvRow {
  std::string layer;
  std::uint64_t macs = 0, nonskipped_macs = 0;
  double comp = 0, ifmap = 0, ofmap = 0, weights = 0, total = 0;
};

inline std::vector<EnergyCsvRow> parse_energy_csv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  std::getline(is, line);
  if (line != kEnergyCsvHeader) throw ConfigError("energy csv: unexpected header");
  std::vector<EnergyCsvRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<std::string> f;
    for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
    if (f.size() != 8) throw ConfigError("energy csv: expected 8 columns");
    rows.push_back({f[0], std::stoull(f[1]), std::stoull(f[2]), std::stod(f[3]), std::stod(f[4]), std::stod(f[5]),
                    std::stod(f[6]), std::stod(f[7])});
  }
  return rows;
}

inline std::string energy_table(const NetworkEnergy& ne) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-10s %11s %11s %11s %11s %11s %11s %11s\n", "layer", "macs", "nonskipped", "comp",
                "ifmap", "ofmap", "weights", "total");
  os << buf;
  auto row = [&](const std::string& name, std::uint64_t macs, std::uint64_t ns, const EnergyBreakdown& e) {
    std::snprintf(buf, sizeof buf, "%-10s %11s %11s %11s %11s %11s %11s %11s\n", name.c_str(),
                  sci4(static_cast<double>(macs)).c_str(), sci4(static_cast<double>(ns)).c_str(), sci4(e.comp).c_str(),
                  sci4(e.input_fmap).c_str(), sci4(e.output_fmap).c_str(), sci4(e.weights).c_str(),
                  sci4(e.total()).c_str());
    os << buf;
  };
  for (const auto& r : ne.layers) row(r.name, r.macs, r.nonskipped_macs, r.energy);
  row("total", ne.macs, ne.nonskipped_macs, ne.total);
  return os.str();
}

}  // namespace eap
