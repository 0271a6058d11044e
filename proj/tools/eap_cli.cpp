// eap: train, estimate, prune and analyse small CNNs under an energy model.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "eap/experiment.hpp"
#include "eap/model_io.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::string profile;
  std::string out = "out";
  std::string bits;
  bool json = false;
};

std::mt19937_64 stream(std::uint64_t seed, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag)};
  return std::mt19937_64(seq);
}

unsigned parse_bit(const std::string& s) {
  std::size_t used = 0;
  int v = 0;
  try {
    v = std::stoi(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || v < 1 || v > 32) throw eap::ConfigError("--bits: '" + s + "' is not a bitwidth in [1, 32]");
  return static_cast<unsigned>(v);
}

eap::HardwareProfile resolve_profile(const Globals& g) {
  auto hw = g.profile.empty() ? eap::default_profile() : eap::load_profile(g.profile);
  if (!g.bits.empty()) {
    const auto comma = g.bits.find(',');
    hw.weight_bits = parse_bit(g.bits.substr(0, comma));
    hw.activation_bits = comma == std::string::npos ? hw.weight_bits : parse_bit(g.bits.substr(comma + 1));
  }
  hw.validate();
  return hw;
}

// Rewrites the whole file on every append so readers never see a partial line.
class JsonLines {
 public:
  explicit JsonLines(fs::path path) : path_(std::move(path)) { eap::write_text_atomically(path_, ""); }
  void append(const json& j) {
    text_ += j.dump() + "\n";
    eap::write_text_atomically(path_, text_);
  }

 private:
  fs::path path_;
  std::string text_;
};

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw eap::ConfigError(std::string(what) + " not found: " + path);
}

eap::PruneConfig load_prune_config(const std::string& path, const json& overrides, std::size_t layers) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw eap::ConfigError("cannot open prune config " + path);
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw eap::ConfigError(path + ": " + e.what());
    }
  }
  j.update(overrides);
  return eap::prune_config_from_json(j, layers);
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset;
  bool toy = false;
  std::size_t train_size = 4000, val_size = 1000;
  std::string arch = eap::kToyArch;
  std::size_t epochs = 8, batch = 32, energy_batch = 16;
  float lr = 0.05f, lr_decay = 0.8f;
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  if (a.toy == !a.dataset.empty()) throw eap::ConfigError("train: give exactly one of --dataset or --toy");
  if (a.batch == 0) throw eap::ConfigError("train: --batch-size must be positive");
  const auto specs = eap::parse_arch(a.arch);
  const fs::path out = g.out;
  eap::Dataset ds;
  if (a.toy) {
    auto rng = stream(g.seed, 1);
    ds = eap::make_shapes_dataset(a.train_size, a.val_size, rng);
    eap::save_dataset(ds, out / "dataset");
  } else {
    ds = eap::load_dataset(a.dataset);
  }
  const auto& d = ds.images.dims();
  auto net = eap::build_network(d[1], d[2], d[3], specs, a.energy_batch);
  if (net.n_classes() != ds.n_classes) {
    throw eap::ConfigError("train: architecture has " + std::to_string(net.n_classes()) + " outputs, dataset has " +
                           std::to_string(ds.n_classes) + " classes");
  }
  auto rng = stream(g.seed, 2);
  eap::init_network(net, rng);
  eap::TrainConfig tc{a.epochs, a.batch, a.lr, a.lr_decay, true};
  fs::create_directories(out);
  JsonLines log(out / "train_log.jsonl");
  eap::fit(net, ds, tc, rng, false, 5, [&](const eap::EpochLog& e) {
    log.append({{"epoch", e.epoch}, {"loss", e.mean_loss}, {"top1", e.val.top1}, {"topk", e.val.topk}});
    if (!g.json) std::printf("epoch %zu  loss %.4f  val top1 %.4f\n", e.epoch, e.mean_loss, e.val.top1);
  });
  const auto path = eap::save_model(net, out);
  json res{{"model", path.string()}, {"weights", net.weight_count()}};
  if (ds.val.size() > 0) {
    const auto acc = eap::evaluate(net, ds, ds.val);
    res["top1"] = acc.top1;
    res["topk"] = acc.topk;
  }
  if (g.json) {
    std::cout << res.dump(2) << '\n';
  } else {
    std::cout << "wrote " << path.string() << '\n';
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string model;
  std::string dataset;
  std::size_t calibration = 256;
};

int cmd_estimate(const Globals& g, const EstimateArgs& a) {
  require_file(a.model, "model");
  const auto hw = resolve_profile(g);
  const auto man = eap::load_manifest(a.model);
  std::vector<eap::LayerStats> stats;
  if (!a.dataset.empty()) {
    const auto ds = eap::load_dataset(a.dataset);
    const auto net = eap::load_model(a.model);
    stats = eap::measure_stats(net, ds, eap::calibration_indices(ds, a.calibration));
  } else if (man.has_tensors()) {
    stats = eap::weight_stats(eap::network_from_manifest(man, fs::path(a.model).parent_path()));
  }
  const auto ne = eap::network_energy(man.shapes(), stats, hw);
  const fs::path out = g.out;
  fs::create_directories(out);
  eap::write_text_atomically(out / "energy.csv", eap::energy_csv(ne));
  auto j = eap::energy_json(ne);
  j["profile"] = eap::to_json(hw);
  eap::write_text_atomically(out / "energy.json", j.dump(2) + "\n");
  if (g.json) {
    std::cout << j.dump(2) << '\n';
  } else {
    const auto ks = eap::kind_shares(ne);
    std::cout << eap::energy_table(ne);
    std::printf("conv: %s of weights, %s of energy\n", eap::sci4(ks.conv_weight_share()).c_str(),
                eap::sci4(ks.conv_energy_share()).c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_report(const Globals& g, const std::vector<std::string>& models) {
  for (const auto& m : models) require_file(m, "model");
  const auto hw = resolve_profile(g);
  const fs::path out = g.out;
  fs::create_directories(out);
  std::ostringstream shares;
  shares << "model,kind,weights,weight_share,comp,ifmap,ofmap,weight_movement,total,energy_share\n";
  json all = json::array();
  for (const auto& path : models) {
    const auto man = eap::load_manifest(path);
    const auto ne = eap::network_energy(man.shapes(), {}, hw);
    const auto stem = fs::path(path).stem().string();
    eap::write_text_atomically(out / (stem + "_breakdown.csv"), eap::energy_csv(ne));
    eap::EnergyBreakdown conv, fc;
    std::uint64_t conv_w = 0, fc_w = 0;
    for (const auto& r : ne.layers) {
      (r.kind == eap::LayerKind::kConv ? conv : fc) += r.energy;
      (r.kind == eap::LayerKind::kConv ? conv_w : fc_w) += r.weights;
    }
    const double et = ne.total.total();
    const double wt = static_cast<double>(ne.weights);
    for (const auto& [kind, e, w] : {std::tuple{"conv", conv, conv_w}, std::tuple{"fc", fc, fc_w}}) {
      shares << stem << ',' << kind << ',' << w << ',' << eap::sig(static_cast<double>(w) / wt) << ','
             << eap::sig(e.comp) << ',' << eap::sig(e.input_fmap) << ',' << eap::sig(e.output_fmap) << ','
             << eap::sig(e.weights) << ',' << eap::sig(e.total()) << ',' << eap::sig(e.total() / et) << '\n';
    }
    auto j = eap::energy_json(ne);
    j["model"] = stem;
    all.push_back(j);
    if (!g.json) {
      const auto ks = eap::kind_shares(ne);
      std::cout << stem << '\n' << eap::energy_table(ne);
      std::printf("conv: %s of weights, %s of energy\nfc:   %s of weights, %s of energy\n\n",
                  eap::sci4(ks.conv_weight_share()).c_str(), eap::sci4(ks.conv_energy_share()).c_str(),
                  eap::sci4(1.0 - ks.conv_weight_share()).c_str(), eap::sci4(1.0 - ks.conv_energy_share()).c_str());
    }
  }
  eap::write_text_atomically(out / "shares.csv", shares.str());
  eap::write_text_atomically(out / "report.json", all.dump(2) + "\n");
  if (g.json) std::cout << all.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct PruneArgs {
  std::string model;
  std::string dataset;
  std::string config;
  std::optional<double> budget, step;
  std::vector<double> caps;
  std::optional<std::size_t> finetune_epochs;
  std::string subsets = "all;0,1,2,3;0,1";

  json overrides() const {
    json j = json::object();
    if (budget) j["accuracy_drop_budget"] = *budget;
    if (step) j["step"] = *step;
    if (!caps.empty()) j["caps"] = caps;
    if (finetune_epochs) j["finetune_epochs"] = *finetune_epochs;
    return j;
  }
};

void print_iteration(const Globals& g, const eap::IterationLog& it) {
  if (g.json) return;
  std::printf("iter %zu  top1 %.4f  energy %s  %s\n", it.iteration, it.accuracy.top1,
              eap::sci4(it.total_energy).c_str(), it.accepted ? "accepted" : "rejected");
}

int cmd_prune(const Globals& g, const PruneArgs& a) {
  require_file(a.model, "model");
  const auto hw = resolve_profile(g);
  const auto net = eap::load_model(a.model);
  const auto ds = eap::load_dataset(a.dataset);
  const auto cfg = load_prune_config(a.config, a.overrides(), net.layers.size());
  if (net.n_classes() != ds.n_classes) throw eap::ConfigError("prune: model and dataset disagree on the class count");
  const fs::path out = g.out;
  fs::create_directories(out);
  eap::write_text_atomically(out / "run_config.json",
                             json{{"model", a.model},
                                  {"dataset", a.dataset},
                                  {"seed", g.seed},
                                  {"profile", eap::to_json(hw)},
                                  {"prune", eap::to_json(cfg)}}
                                     .dump(2) + "\n");

  JsonLines log(out / "prune_log.jsonl");
  auto rng = stream(g.seed, 3);
  auto res = eap::prune_network(net, cfg, ds, hw, rng, [&](const eap::IterationLog& it) {
    log.append(eap::to_json(it));
    print_iteration(g, it);
  });
  eap::PlanCache cache(hw);
  const auto calib = eap::calibration_indices(ds, cfg.calibration_images);
  const auto before = eap::summarize(net, ds, calib, cache, cfg.topk);
  const auto after = eap::summarize(res.net, ds, calib, cache, cfg.topk);
  eap::save_model(res.net, out);
  eap::write_text_atomically(out / "summary.csv", eap::summary_csv(before, after));
  json sj{{"before", eap::to_json(before)},
          {"after", eap::to_json(after)},
          {"iterations", res.log.size()},
          {"stopped_by_budget", res.stopped_by_budget}};
  eap::write_text_atomically(out / "summary.json", sj.dump(2) + "\n");
  if (g.json) {
    std::cout << sj.dump(2) << '\n';
  } else {
    std::cout << eap::summary_table(before, after);
  }
  return 0;
}

int cmd_experiment_classes(const Globals& g, const PruneArgs& a) {
  require_file(a.model, "model");
  const auto hw = resolve_profile(g);
  const auto net = eap::load_model(a.model);
  const auto ds = eap::load_dataset(a.dataset);
  const auto cfg = load_prune_config(a.config, a.overrides(), net.layers.size());
  const auto subsets = eap::parse_class_subsets(a.subsets, ds.n_classes);
  for (const auto& s : subsets) eap::keep_classes(net, s);
  const fs::path out = g.out;
  fs::create_directories(out);
  JsonLines log(out / "classes_log.jsonl");
  auto rng = stream(g.seed, 3);
  const auto exp = eap::run_class_experiment(net, ds, subsets, cfg, hw, rng, [&](std::size_t si, const eap::IterationLog& it) {
    auto j = eap::to_json(it);
    j["subset"] = si;
    log.append(j);
    print_iteration(g, it);
  });
  eap::write_text_atomically(out / "classes.csv", eap::class_experiment_csv(exp));
  const auto j = eap::to_json(exp);
  eap::write_text_atomically(out / "classes.json", j.dump(2) + "\n");
  if (g.json) {
    std::cout << j.dump(2) << '\n';
  } else {
    std::printf("%-8s %12s %12s %12s\n", "classes", "weight_red", "mac_red", "energy_red");
    for (const auto& s : exp.subsets) {
      std::printf("%-8zu %12s %12s %12s\n", s.classes.size(), eap::sci4(s.weight_reduction).c_str(),
                  eap::sci4(s.mac_reduction).c_str(), eap::sci4(s.energy_reduction).c_str());
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Energy-aware pruning toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random stream");
  app.add_option("--profile", g.profile, "Hardware profile (.toml or .json)");
  app.add_option("--out", g.out, "Output directory");
  app.add_option("--bits", g.bits, "Weight[,activation] bitwidth");
  app.add_flag("--json", g.json, "Print JSON instead of tables");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train the dense baseline");
  train->add_option("--dataset", ta.dataset, "Dataset directory");
  train->add_flag("--toy", ta.toy, "Generate the bundled shapes dataset into <out>/dataset");
  train->add_option("--train-size", ta.train_size);
  train->add_option("--val-size", ta.val_size);
  train->add_option("--arch", ta.arch, "Architecture string");
  train->add_option("--epochs", ta.epochs);
  train->add_option("--batch-size", ta.batch);
  train->add_option("--lr", ta.lr);
  train->add_option("--lr-decay", ta.lr_decay);
  train->add_option("--energy-batch", ta.energy_batch, "Batch size recorded in layer shapes");

  EstimateArgs ea;
  auto* estimate = app.add_subcommand("estimate", "Estimate per-layer energy");
  estimate->add_option("--model", ea.model, "Model manifest")->required();
  estimate->add_option("--dataset", ea.dataset, "Calibration dataset for activation densities");
  estimate->add_option("--calibration-images", ea.calibration);

  std::vector<std::string> report_models;
  auto* report = app.add_subcommand("report", "CONV/FC energy breakdown of dense shape manifests");
  report->add_option("--model", report_models, "Model manifest(s)")->required();

  PruneArgs pa;
  auto add_prune_opts = [&](CLI::App* sc) {
    sc->add_option("--model", pa.model, "Model manifest")->required();
    sc->add_option("--dataset", pa.dataset, "Dataset directory")->required();
    sc->add_option("--config", pa.config, "Prune config (JSON)");
    sc->add_option("--budget", pa.budget, "Allowed top-1 drop (fraction)");
    sc->add_option("--caps", pa.caps, "Per-layer final ratios")->delimiter(',');
    sc->add_option("--step", pa.step, "Ratio increase per iteration");
    sc->add_option("--finetune-epochs", pa.finetune_epochs);
  };
  auto* prune = app.add_subcommand("prune", "Energy-aware pruning");
  add_prune_opts(prune);
  auto* classes = app.add_subcommand("experiment-classes", "Prune class subsets and compare");
  add_prune_opts(classes);
  classes->add_option("--subsets", pa.subsets, "Subsets, e.g. 'all;0,1,2,3;0,1'");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*train) return cmd_train(g, ta);
    if (*estimate) return cmd_estimate(g, ea);
    if (*report) return cmd_report(g, report_models);
    if (*prune) return cmd_prune(g, pa);
    if (*classes) return cmd_experiment_classes(g, pa);
  } catch (const eap::InfeasibleProfile& e) {
    std::cerr << "infeasible profile: " << e.what() << '\n';
    return 4;
  } catch (const eap::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const eap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
