#pragma once

// Drivers shared by the CLI and the acceptance run: prune-config loading,
// before/after summaries and the target-class reduction study.

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cstdio>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eap/energy/report.hpp"
#include "eap/prune/pipeline.hpp"

namespace eap {

/// First layer 0.6, last 0.8, everything else 0.95.
inline std::vector<double> default_caps(std::size_t layers) {
  std::vector<double> caps(layers, 0.95);
  if (layers > 0) caps.front() = 0.6;
  if (layers > 1) caps.back() = 0.8;
  return caps;
}

/// Reads PruneConfig fields from JSON. "caps" + "step" expand to a linear
/// schedule; an explicit "schedule" wins over both.
inline PruneConfig prune_config_from_json(const nlohmann::json& j, std::size_t layers) {
  PruneConfig c;
  try {
    c.overprune_margin = j.value("overprune_margin", c.overprune_margin);
    c.restore_batch_g = j.value("restore_batch_g", c.restore_batch_g);
    c.residual_norm_p = j.value("residual_norm_p", c.residual_norm_p);
    c.accuracy_drop_budget = j.value("accuracy_drop_budget", c.accuracy_drop_budget);
    c.sample_images = j.value("sample_images", c.sample_images);
    c.conv_position_subsample = j.value("conv_position_subsample", c.conv_position_subsample);
    c.calibration_images = j.value("calibration_images", c.calibration_images);
    c.finetune_epochs = j.value("finetune_epochs", c.finetune_epochs);
    c.finetune_lr = j.value("finetune_lr", c.finetune_lr);
    c.finetune_batch = j.value("finetune_batch", c.finetune_batch);
    c.topk = j.value("topk", c.topk);
    if (j.contains("schedule")) {
      c.schedule = j["schedule"].get<std::vector<std::vector<double>>>();
    } else {
      auto caps = j.contains("caps") ? j["caps"].get<std::vector<double>>() : default_caps(layers);
      if (caps.size() != layers) throw ConfigError("prune config: caps length must equal the layer count");
      c.schedule = linear_schedule(caps, j.value("step", 0.1));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("prune config: ") + e.what());
  }
  c.validate(layers);
  return c;
}

inline nlohmann::json to_json(const PruneConfig& c) {
  return {{"schedule", c.schedule},
          {"overprune_margin", c.overprune_margin},
          {"restore_batch_g", c.restore_batch_g},
          {"residual_norm_p", c.residual_norm_p},
          {"accuracy_drop_budget", c.accuracy_drop_budget},
          {"sample_images", c.sample_images},
          {"conv_position_subsample", c.conv_position_subsample},
          {"calibration_images", c.calibration_images},
          {"finetune_epochs", c.finetune_epochs},
          {"finetune_lr", c.finetune_lr},
          {"finetune_batch", c.finetune_batch},
          {"topk", c.topk}};
}

// ---------------------------------------------------------------------------
// Summaries

/// One row of the before/after table.
struct ModelSummary {
  std::uint64_t weights = 0;
  std::uint64_t nonzero_weights = 0;
  std::uint64_t macs = 0;
  std::uint64_t nonskipped_macs = 0;
  double energy = 0.0;
  Accuracy accuracy;
};

inline ModelSummary summarize(const Network& net, const Dataset& ds, std::span<const std::size_t> calib,
                              PlanCache& cache, std::size_t topk = 5) {
  const auto ne = network_energy(network_shapes(net), measure_stats(net, ds, calib), cache);
  ModelSummary s;
  s.weights = net.weight_count();
  s.nonzero_weights = net.nonzero_count();
  s.macs = ne.macs;
  s.nonskipped_macs = ne.nonskipped_macs;
  s.energy = ne.total.total();
  s.accuracy = evaluate(net, ds, ds.val, topk);
  return s;
}

inline constexpr const char* kSummaryCsvHeader = "model,nonzero_weights,nonskipped_macs,normalized_energy,top1,topk";

/// Energy normalized to the `before` row.
inline std::string summary_csv(const ModelSummary& before, const ModelSummary& after) {
  std::ostringstream os;
  os << kSummaryCsvHeader << '\n';
  for (const auto& [name, s] : {std::pair{"before", &before}, std::pair{"after", &after}}) {
    os << name << ',' << s->nonzero_weights << ',' << s->nonskipped_macs << ',' << sig(s->energy / before.energy)
       << ',' << sig(s->accuracy.top1) << ',' << sig(s->accuracy.topk) << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const ModelSummary& s) {
  return {{"weights", s.weights},   {"nonzero_weights", s.nonzero_weights},
          {"macs", s.macs},         {"nonskipped_macs", s.nonskipped_macs},
          {"energy", round_sig(s.energy)}, {"top1", s.accuracy.top1},
          {"topk", s.accuracy.topk}};
}

inline std::string summary_table(const ModelSummary& before, const ModelSummary& after) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-8s %12s %12s %12s %8s %8s\n", "model", "nnz_weights", "nonskip_mac", "energy",
                "top1", "topk");
  os << buf;
  for (const auto& [name, s] : {std::pair{"before", &before}, std::pair{"after", &after}}) {
    std::snprintf(buf, sizeof buf, "%-8s %12s %12s %12s %8.4f %8.4f\n", name,
                  sci4(static_cast<double>(s->nonzero_weights)).c_str(),
                  sci4(static_cast<double>(s->nonskipped_macs)).c_str(), sci4(s->energy / before.energy).c_str(),
                  s->accuracy.top1, s->accuracy.topk);
    os << buf;
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Target-class reduction

/// Keeps only the final-layer filters (and biases) of `classes`, in that order.
inline Network keep_classes(const Network& net, std::span<const int> classes) {
  net.validate();
  const std::size_t total = net.n_classes();
  std::set<int> seen;
  for (int c : classes) {
    if (c < 0 || static_cast<std::size_t>(c) >= total) throw ConfigError("class " + std::to_string(c) + " out of range");
    if (!seen.insert(c).second) throw ConfigError("class " + std::to_string(c) + " listed twice");
  }
  if (classes.size() < 2) throw ConfigError("a class subset needs at least 2 classes");
  Network out = net;
  const FilterBank& src = net.layers.back().bank;
  LayerShape s = src.shape;
  s.num_filters = classes.size();
  FilterBank dst(s);
  for (std::size_t j = 0; j < src.m(); ++j) {
    for (std::size_t t = 0; t < classes.size(); ++t) {
      const auto c = static_cast<std::size_t>(classes[t]);
      dst.weights[j * dst.n() + t] = src.weights[j * src.n() + c];
      dst.mask[j * dst.n() + t] = src.mask[j * src.n() + c];
    }
  }
  for (std::size_t t = 0; t < classes.size(); ++t) dst.bias[t] = src.bias[static_cast<std::size_t>(classes[t])];
  out.layers.back().bank = std::move(dst);
  return out;
}

/// "0,1,2,3;0,1" -> {{0,1,2,3},{0,1}}; "all" expands to every class.
inline std::vector<std::vector<int>> parse_class_subsets(const std::string& text, std::size_t n_classes) {
  std::vector<std::vector<int>> out;
  std::istringstream is(text);
  for (std::string part; std::getline(is, part, ';');) {
    std::vector<int> sub;
    if (part == "all") {
      for (std::size_t c = 0; c < n_classes; ++c) sub.push_back(static_cast<int>(c));
    } else {
      std::istringstream ps(part);
      for (std::string tok; std::getline(ps, tok, ',');) {
        try {
          std::size_t used = 0;
          sub.push_back(std::stoi(tok, &used));
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw ConfigError("bad class id '" + tok + "' in subset list");
        }
      }
    }
    if (sub.size() < 2) throw ConfigError("class subset '" + part + "' has fewer than 2 classes");
    out.push_back(std::move(sub));
  }
  if (out.empty()) throw ConfigError("no class subsets given");
  return out;
}

struct ClassSubsetResult {
  std::vector<int> classes;
  ModelSummary baseline;  ///< unpruned, restricted network
  ModelSummary pruned;
  double weight_reduction = 0.0;  ///< full-class dense value / pruned value
  double mac_reduction = 0.0;
  double energy_reduction = 0.0;
  bool ordered() const { return weight_reduction >= mac_reduction && mac_reduction >= energy_reduction; }
};

struct ClassExperiment {
  ModelSummary full;  ///< dense, all classes
  std::vector<ClassSubsetResult> subsets;
};

inline nlohmann::json to_json(const ClassExperiment& e) {
  nlohmann::json j;
  j["full"] = to_json(e.full);
  for (const auto& s : e.subsets) {
    j["subsets"].push_back({{"classes", s.classes},
                            {"n_classes", s.classes.size()},
                            {"baseline", to_json(s.baseline)},
                            {"pruned", to_json(s.pruned)},
                            {"weight_reduction", round_sig(s.weight_reduction)},
                            {"mac_reduction", round_sig(s.mac_reduction)},
                            {"energy_reduction", round_sig(s.energy_reduction)},
                            {"ordered", s.ordered()}});
  }
  return j;
}

inline constexpr const char* kClassCsvHeader =
    "n_classes,classes,nonzero_weights,nonskipped_macs,energy,top1,weight_reduction,mac_reduction,energy_reduction";

inline std::string class_experiment_csv(const ClassExperiment& e) {
  std::ostringstream os;
  os << kClassCsvHeader << '\n';
  for (const auto& s : e.subsets) {
    std::string cls;
    for (int c : s.classes) cls += (cls.empty() ? "" : " ") + std::to_string(c);
    os << s.classes.size() << ',' << cls << ',' << s.pruned.nonzero_weights << ',' << s.pruned.nonskipped_macs << ','
       << sig(s.pruned.energy) << ',' << sig(s.pruned.accuracy.top1) << ',' << sig(s.weight_reduction) << ','
       << sig(s.mac_reduction) << ',' << sig(s.energy_reduction) << '\n';
  }
  return os.str();
}

/// Prunes `full` restricted to each subset; metrics are relative to the dense full-class network.
/// The full-class baseline is measured on the full dataset; each subset on its restricted copy.
template <class Rng>
ClassExperiment run_class_experiment(const Network& full, const Dataset& ds, const std::vector<std::vector<int>>& subsets,
                                     const PruneConfig& cfg, const HardwareProfile& hw, Rng& rng,
                                     const std::function<void(std::size_t, const IterationLog&)>& on_iteration = {}) {
  if (full.n_classes() != ds.n_classes) throw ConfigError("model and dataset disagree on the class count");
  PlanCache cache(hw);
  ClassExperiment out;
  out.full = summarize(full, ds, calibration_indices(ds, cfg.calibration_images), cache, cfg.topk);
  for (std::size_t si = 0; si < subsets.size(); ++si) {
    const auto& cls = subsets[si];
    Network sub = keep_classes(full, cls);
    const Dataset sds = restrict_classes(ds, cls);
    PruneConfig scfg = cfg;
    scfg.topk = std::min(cfg.topk, cls.size());
    const auto calib = calibration_indices(sds, scfg.calibration_images);
    ClassSubsetResult r;
    r.classes = cls;
    r.baseline = summarize(sub, sds, calib, cache, scfg.topk);
    auto pr = prune_network(sub, scfg, sds, hw, rng, [&](const IterationLog& it) {
      if (on_iteration) on_iteration(si, it);
    });
    r.pruned = summarize(pr.net, sds, calib, cache, scfg.topk);
    r.weight_reduction = static_cast<double>(out.full.nonzero_weights) / static_cast<double>(r.pruned.nonzero_weights);
    r.mac_reduction = static_cast<double>(out.full.nonskipped_macs) / static_cast<double>(r.pruned.nonskipped_macs);
    r.energy_reduction = out.full.energy / r.pruned.energy;
    out.subsets.push_back(std::move(r));
  }
  return out;
}

}  // namespace eap
