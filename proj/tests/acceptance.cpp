// Acceptance checks A1-A7. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <chrono>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "eap/experiment.hpp"
#include "eap/model_io.hpp"
#include "oracles.hpp"

using namespace eap;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

int failures = 0;

void verdict(const char* id, bool ok, const std::string& detail) {
  std::printf("%s %s  %s\n", id, ok ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  failures += !ok;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------

struct Instance {
  LayerShape shape;
  HardwareProfile hw;
};

std::vector<Instance> a1_instances(std::size_t count) {
  std::mt19937_64 rng(1001);
  std::vector<Instance> out;
  while (out.size() < count) {
    const auto s = oracle::random_conv_shape(rng, 2);
    const auto unit = LoopNest::from_shape(s).footprint({1, 1, 1, 1, 1});
    out.push_back({s, oracle::three_level(unit * (4 + rng() % 40), unit + rng() % (4 * unit))});
  }
  return out;
}

struct A1Result {
  std::size_t conv_bad = 0, tiling_bad = 0, lsq_bad = 0, restore_bad = 0;
  std::size_t lsq_filters = 0, restore_steps = 0;
  double conv_err = 0.0, lsq_err = 0.0;
};

A1Result run_a1(const std::vector<Instance>& inst) {
  std::mt19937_64 rng(1002);
  A1Result r;
  for (const auto& [s, hw] : inst) {
    // (a) forward vs naive convolution
    FilterBank b(s);
    oracle::randomize(b, rng);
    const auto x = oracle::random_tensor({s.batch, s.in_c, s.in_h, s.in_w}, rng);
    const auto y = layer_forward(x, b);
    const auto ref = oracle::naive_conv(x, b);
    double worst = 0.0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(y[i] - ref[i]));
    r.conv_err = std::max(r.conv_err, worst);
    r.conv_bad += worst >= 1e-5;

    // (b) tiling search vs exhaustive enumeration
    const auto plan = optimize_accesses(s, hw);
    const auto brute = oracle::brute_force_tiling(s, hw);
    bool same = brute.tilings > 0 && plan.total() == brute.movement && plan.tiling.tiles.size() == brute.tiles.size();
    for (std::size_t l = 0; same && l < brute.tiles.size(); ++l)
      for (std::size_t d = 0; d < 5; ++d) same = same && plan.tiling.tiles[l][d] == brute.tiles[l][d];
    r.tiling_bad += !same;

    // Layer-local problem built from this instance: Toeplitz rows of x and
    // the dense layer's bias-free outputs.
    const auto cols = im2col(x, s);
    const std::size_t rows = cols.dim(0), m = s.m(), n = s.n();
    MatD xm(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < m; ++j) xm(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[i * m + j];
    const MatD yhat = xm * LayerPruneState::weight_matrix(b);
    const auto orig = b.weights;

    // (d) one greedy restoration step vs brute-force sweep
    {
      auto pb = magnitude_prune(b, 0.7);
      LayerPruneState st{xm, yhat, {}};
      st.recompute_residual(pb);
      if (pb.nonzero_count() < pb.weights.size()) {
        const auto want = oracle::brute_force_restore(st, pb, orig);
        const auto steps = greedy_restore(st, pb, orig, pb.nonzero_count() + 1, 1, 1);
        ++r.restore_steps;
        r.restore_bad += steps.size() != 1 || steps[0].filter != want.filter || steps[0].rows[0] != want.row ||
                         std::abs(steps[0].improvement[0] - want.improvement) > 1e-9 * (1.0 + std::abs(want.improvement));
      }
    }

    // (c) local least squares vs normal-equations pseudo-inverse, on a
    // support small enough for full column rank.
    {
      const std::size_t keep = std::max<std::size_t>(1, std::min(m, rows / 2));
      auto pb = magnitude_prune_count(b, m * n - std::min(m * n, keep * n));
      LayerPruneState st{xm, yhat, {}};
      st.recompute_residual(pb);
      local_finetune_lsq(st, pb);
      for (std::size_t i = 0; i < n; ++i) {
        std::vector<std::size_t> sup;
        for (std::size_t j = 0; j < m; ++j)
          if (pb.kept(j, i)) sup.push_back(j);
        if (sup.empty()) continue;
        std::vector<std::vector<double>> xs(rows, std::vector<double>(sup.size()));
        std::vector<double> ys(rows);
        for (std::size_t k = 0; k < rows; ++k) {
          for (std::size_t t = 0; t < sup.size(); ++t)
            xs[k][t] = xm(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(sup[t]));
          ys[k] = yhat(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i));
        }
        const auto want = oracle::normal_equations(xs, ys);
        if (want.empty()) continue;  // singular support: no unique oracle answer
        ++r.lsq_filters;
        double e = 0.0;
        for (std::size_t t = 0; t < sup.size(); ++t) e = std::max(e, std::abs(pb.w(sup[t], i) - want[t]));
        r.lsq_err = std::max(r.lsq_err, e);
        r.lsq_bad += e >= 1e-5;
      }
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

struct A2Result {
  std::size_t scaling_bad = 0, monotone_bad = 0, bounds_bad = 0;
};

A2Result run_a2(const std::vector<Instance>& inst) {
  std::mt19937_64 rng(2002);
  std::uniform_real_distribution<double> u(0.05, 1.0);
  A2Result r;
  for (std::size_t k = 0; k < inst.size(); ++k) {
    const auto& [s, base_hw] = inst[k];
    auto hw = base_hw;
    const LayerStats st{u(rng), u(rng), u(rng)};
    const auto ref = layer_energy(s, st, hw);
    for (unsigned b : {2u, 4u, 8u, 16u}) {
      hw.weight_bits = hw.activation_bits = b;
      const auto e = layer_energy(s, st, hw);
      const double f = b / 16.0;
      r.scaling_bad += !(e.comp == ref.comp * f * f && e.input_fmap == ref.input_fmap * f &&
                         e.output_fmap == ref.output_fmap * f && e.weights == ref.weights * f);
    }
    const auto nest = LoopNest::from_shape(s);
    const double opt = optimize_accesses(s, base_hw).total();
    r.bounds_bad += !(fetch_once_bound(nest, base_hw).total() <= opt && opt <= no_reuse_bound(nest, base_hw).total());

    if (k % 10 == 0) {
      double grid[10][10];
      for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j) {
          const double wd = (i + 1) / 10.0, ad = (j + 1) / 10.0;
          grid[i][j] = layer_energy(s, {wd, ad, ad}, base_hw).total();
        }
      for (int i = 0; i < 10; ++i)
        for (int j = 0; j < 10; ++j)
          r.monotone_bad += (i > 0 && grid[i - 1][j] > grid[i][j]) + (j > 0 && grid[i][j - 1] > grid[i][j]);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------

struct Trained {
  Dataset ds;
  Network net;
  double top1 = 0.0;
};

Trained train_toy(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Trained t;
  t.ds = make_shapes_dataset(4000, 1000, rng);
  t.net = build_network(1, 16, 16, parse_arch(kToyArch), 16);
  init_network(t.net, rng);
  fit(t.net, t.ds, {8, 32, 0.05f, 0.8f, true}, rng);
  t.top1 = evaluate(t.net, t.ds, t.ds.val).top1;
  return t;
}

PruneConfig a3_config(std::size_t layers) {
  PruneConfig c;
  c.accuracy_drop_budget = 0.01;
  c.schedule = linear_schedule(default_caps(layers), 0.1);
  return c;
}

std::size_t masked_nonzeros(const Network& net) {
  std::size_t bad = 0;
  for (const auto& l : net.layers)
    for (std::size_t i = 0; i < l.bank.mask.size(); ++i) bad += !l.bank.mask[i] && l.bank.weights[i] != 0.0f;
  return bad;
}

double pass_drop(const Trained& t, std::span<const double> ratios, std::uint64_t seed, PruneMode mode) {
  auto net = t.net;
  const auto cfg = a3_config(net.layers.size());
  std::mt19937_64 rng(seed);
  PlanCache cache(default_profile());
  const auto calib = calibration_indices(t.ds, cfg.calibration_images);
  const auto order = order_layers_by_energy(net, measure_stats(net, t.ds, calib), cache);
  prune_pass(net, t.ds, cfg, ratios, order, rng, mode);
  return t.top1 - evaluate(net, t.ds, t.ds.val).top1;
}

}  // namespace

int main() {
  const auto inst = a1_instances(100);

  {
    const auto t0 = Clock::now();
    const auto r = run_a1(inst);
    const double secs = seconds_since(t0);
    const bool ok = r.conv_bad == 0 && r.tiling_bad == 0 && r.lsq_bad == 0 && r.restore_bad == 0 &&
                    r.lsq_filters >= 100 && r.restore_steps >= 100 && secs < 120.0;
    verdict("A1", ok,
            fmt("%zu instances; conv max err %.2e (%zu bad); tiling mismatches %zu; lsq %zu filters max err %.2e "
                "(%zu bad); restore %zu steps (%zu bad); %.1fs",
                inst.size(), r.conv_err, r.conv_bad, r.tiling_bad, r.lsq_filters, r.lsq_err, r.lsq_bad,
                r.restore_steps, r.restore_bad, secs));
  }

  {
    const auto r = run_a2(inst);
    verdict("A2", r.scaling_bad == 0 && r.monotone_bad == 0 && r.bounds_bad == 0,
            fmt("bit scaling violations %zu; monotonicity violations %zu; bound violations %zu over %zu instances",
                r.scaling_bad, r.monotone_bad, r.bounds_bad, inst.size()));
  }

  // A3, then A4 and A6 on the same task.
  const auto t0 = Clock::now();
  const auto toy = train_toy(3);
  const auto cfg = a3_config(toy.net.layers.size());
  std::mt19937_64 prng(4);
  const auto res = prune_network(toy.net, cfg, toy.ds, default_profile(), prng);
  PlanCache cache(default_profile());
  const auto calib = calibration_indices(toy.ds, cfg.calibration_images);
  const auto before = summarize(toy.net, toy.ds, calib, cache);
  const auto after = summarize(res.net, toy.ds, calib, cache);
  const double wred = static_cast<double>(before.nonzero_weights) / static_cast<double>(after.nonzero_weights);
  const double ered = before.energy / after.energy;
  const auto leaks = masked_nonzeros(res.net);
  const double a3_secs = seconds_since(t0);
  verdict("A3",
          toy.top1 >= 0.90 && wred >= 4.0 && ered >= 1.5 && leaks == 0 &&
              after.accuracy.top1 >= before.accuracy.top1 - cfg.accuracy_drop_budget - 1e-12 && a3_secs < 1800.0,
          fmt("dense top1 %.4f -> pruned %.4f; nonzero weights %zu -> %zu (%.2fx); energy %.4e -> %.4e (%.2fx); "
              "masked nonzeros %zu; %zu iterations; %.0fs",
              before.accuracy.top1, after.accuracy.top1, static_cast<std::size_t>(before.nonzero_weights),
              static_cast<std::size_t>(after.nonzero_weights), wred, before.energy, after.energy, ered, leaks,
              res.log.size(), a3_secs));

  {
    std::vector<double> ratios;
    for (const auto& l : res.net.layers) ratios.push_back(l.bank.compression_ratio());
    double full = 0.0, mag = 0.0;
    std::string per;
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      const Trained alt = seed == 0 ? Trained{} : train_toy(100 + seed);
      const Trained& t = seed == 0 ? toy : alt;
      const double f = pass_drop(t, ratios, 500 + seed, PruneMode::kFull);
      const double m = pass_drop(t, ratios, 500 + seed, PruneMode::kMagnitudeOnly);
      full += f / 3.0;
      mag += m / 3.0;
      per += fmt(" [%.4f vs %.4f]", f, m);
    }
    std::string rs;
    for (double x : ratios) rs += fmt("%.2f ", x);
    verdict("A4", full < mag,
            fmt("mean pre-finetune top1 drop: steps 2-4 %.4f vs magnitude only %.4f; per seed%s; ratios %s", full, mag,
                per.c_str(), rs.c_str()));
  }

  {
    const auto man = load_manifest(EAP_SOURCE_DIR "/manifests/alexnet.json");
    const auto ks = kind_shares(network_energy(man.shapes(), {}, default_profile()));
    verdict("A5", ks.conv_weight_share() < 0.10 && ks.conv_energy_share() > 0.50,
            fmt("AlexNet CONV layers hold %.2f%% of weights and %.2f%% of energy", 100 * ks.conv_weight_share(),
                100 * ks.conv_energy_share()));
  }

  {
    std::mt19937_64 rng(4);
    const auto subsets = parse_class_subsets("all;0,1,2,3;0,1", toy.ds.n_classes);
    const auto exp = run_class_experiment(toy.net, toy.ds, subsets, cfg, default_profile(), rng);
    std::size_t ordered = 0;
    std::string per;
    for (const auto& s : exp.subsets) {
      ordered += s.ordered();
      per += fmt(" [%zu classes: weights %.2fx, macs %.2fx, energy %.2fx]", s.classes.size(), s.weight_reduction,
                 s.mac_reduction, s.energy_reduction);
    }
    verdict("A6", ordered >= 2, fmt("ordering holds in %zu of %zu subsets;%s", ordered, exp.subsets.size(), per.c_str()));
  }

  {
    std::mt19937_64 rng(7007);
    std::size_t checked = 0, bad_inst = 0;
    double worst = 0.0, gap = 0.0;
    for (int i = 0; i < 50; ++i) {
      const auto st = oracle::finite_difference_check(oracle::two_layer(rng, i % 2 == 0), rng);
      checked += st.checked;
      bad_inst += st.failed > 0;
      worst = std::max(worst, st.worst);
      gap = std::max(gap, st.loss_gap);
    }
    verdict("A7", bad_inst == 0 && checked > 0 && gap < 1e-4,
            fmt("50 instances, %zu coordinates, max rel err %.2e, %zu failing instances", checked, worst, bad_inst));
  }

  return failures == 0 ? 0 : 1;
}
