#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <sstream>

#include "eap/energy/report.hpp"
#include "eap/model_io.hpp"
#include "oracles.hpp"

using namespace eap;

namespace {

double movement(const AccessPlan& p) { return p.total(); }

}  // namespace

TEST(Macs, DenseExamples) {
  EXPECT_EQ(dense_macs(LayerShape::fc(4, 3)), 12u);
  EXPECT_EQ(dense_macs(LayerShape::conv(1, 4, 4, 3, 1, 1, 0, 1)), 36u);
  LayerShape empty = LayerShape::fc(4, 3);
  empty.num_filters = 0;
  EXPECT_EQ(dense_macs(empty), 0u);
}

TEST(Macs, NonskippedExamples) {
  const auto s = LayerShape::conv(3, 8, 8, 3, 4, 1, 1, 2);
  EXPECT_EQ(nonskipped_macs(s, {1.0, 1.0, 1.0}), dense_macs(s));
  EXPECT_EQ(nonskipped_macs(s, {0.0, 1.0, 1.0}), 0u);
  EXPECT_EQ(nonskipped_macs(LayerShape::fc(10, 10), {0.5, 0.5, 1.0}), 25u);
}

TEST(Macs, IndependenceModelTracksInstrumentedCount) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 40; ++trial) {
    const double wd = 0.2 + 0.8 * u(rng), ad = 0.2 + 0.8 * u(rng);
    auto s = LayerShape::conv(4, 10, 10, 3, 6, 1, 0, 2);
    FilterBank b(s);
    oracle::randomize(b, rng);
    for (std::size_t i = 0; i < b.weights.size(); ++i) b.mask[i] = u(rng) < wd;
    b.apply_mask();
    auto x = oracle::random_tensor({2, 4, 10, 10}, rng);
    for (float& v : x.data()) v = u(rng) < ad ? v : 0.0f;
    const LayerStats st{b.density(), 1.0 - zero_fraction(x.data()), 1.0};
    const double model = static_cast<double>(nonskipped_macs(s, st));
    const double exact = static_cast<double>(oracle::count_nonzero_macs(x, b));
    EXPECT_LT(std::abs(model - exact) / exact, 0.2) << "trial " << trial;
  }
}

TEST(Tiling, FullReuseFetchesEachDatumOnce) {
  HardwareProfile hw;
  hw.levels = {{"dram", 200.0, std::nullopt}, {"buffer", 1.0, 1u << 20}};
  const auto s = LayerShape::conv(1, 4, 4, 3, 2, 1, 0, 1);
  const auto plan = optimize_accesses(s, hw);
  // weights 2*9, ifmap 16, ofmap 2*2*2
  EXPECT_EQ(plan.counts[0][kWeights], 18u);
  EXPECT_EQ(plan.counts[0][kIfmap], 16u);
  EXPECT_EQ(plan.counts[0][kOfmap], 8u);
  EXPECT_DOUBLE_EQ(plan.total(), 42.0 * 200.0 + 72.0 * 4.0);
}

TEST(Tiling, MinimalCapacityGivesNoReuseBound) {
  const auto s = LayerShape::conv(3, 6, 6, 3, 4, 1, 1, 2);
  const auto unit = LoopNest::from_shape(s).footprint({1, 1, 1, 1, 1});
  EXPECT_EQ(unit, 9u + 9u + 1u);
  const auto hw = oracle::three_level(unit, unit);
  const auto plan = optimize_accesses(s, hw);
  const auto bound = no_reuse_bound(LoopNest::from_shape(s), hw);
  EXPECT_EQ(plan.counts, bound.counts);
  // One outer fetch per MAC operand for weights.
  EXPECT_EQ(plan.counts[0][kWeights], dense_macs(s));
  EXPECT_THROW(optimize_accesses(s, oracle::three_level(unit, unit - 1), "convX"), InfeasibleProfile);
  try {
    optimize_accesses(s, oracle::three_level(unit, unit - 1), "convX");
  } catch (const InfeasibleProfile& e) {
    EXPECT_NE(std::string(e.what()).find("convX"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("rf"), std::string::npos);
  }
}

TEST(Tiling, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 30; ++trial) {
    const auto s = oracle::random_conv_shape(rng, 2);
    const auto unit = LoopNest::from_shape(s).footprint({1, 1, 1, 1, 1});
    const auto hw = oracle::three_level(unit * (4 + rng() % 40), unit + rng() % (4 * unit));
    const auto plan = optimize_accesses(s, hw);
    const auto brute = oracle::brute_force_tiling(s, hw);
    ASSERT_GT(brute.tilings, 0u);
    EXPECT_EQ(movement(plan), brute.movement) << "trial " << trial;
    ASSERT_EQ(plan.tiling.tiles.size(), brute.tiles.size());
    for (std::size_t l = 0; l < brute.tiles.size(); ++l) {
      for (std::size_t x = 0; x < 5; ++x) EXPECT_EQ(plan.tiling.tiles[l][x], brute.tiles[l][x]);
    }
  }
}

TEST(Tiling, CountsMatchTileWalk) {
  std::mt19937_64 rng(19);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = oracle::random_conv_shape(rng, 3);
    const auto nest = LoopNest::from_shape(s);
    TileVec t{};
    for (std::size_t x = 0; x < 5; ++x) {
      auto d = divisors(nest.bounds[x]);
      t[x] = d[rng() % d.size()];
    }
    const auto a = nest.transfers(t);
    const auto w = oracle::walk_tiles(oracle::geometry(s), {t[0], t[1], t[2], t[3], t[4]});
    EXPECT_EQ(static_cast<double>(a[kIfmap]), w[0]);
    EXPECT_EQ(static_cast<double>(a[kOfmap]), w[1]);
    EXPECT_EQ(static_cast<double>(a[kWeights]), w[2]);
  }
}

TEST(Tiling, BoundsHold) {
  std::mt19937_64 rng(23);
  const auto hw = default_profile();
  for (int trial = 0; trial < 40; ++trial) {
    const auto s = oracle::random_conv_shape(rng);
    const auto nest = LoopNest::from_shape(s);
    const double opt = optimize_accesses(s, hw).total();
    EXPECT_LE(fetch_once_bound(nest, hw).total(), opt);
    EXPECT_LE(opt, no_reuse_bound(nest, hw).total());
  }
}

TEST(Tiling, FcFoldsToChannels) {
  const auto s = LayerShape::fc(16, 8, 4, 2, 2);
  const auto nest = LoopNest::from_shape(s);
  EXPECT_EQ(nest.bounds, (TileVec{4, 8, 64, 1, 1}));
  EXPECT_EQ(nest.macs(), dense_macs(s));
}

TEST(LayerEnergy, DenseSixteenBitIsRawPlan) {
  const auto s = LayerShape::conv(4, 8, 8, 3, 8, 1, 1, 2);
  const auto hw = default_profile();
  const auto plan = optimize_accesses(s, hw);
  const auto e = layer_energy(s, {}, hw);
  EXPECT_DOUBLE_EQ(e.comp, static_cast<double>(dense_macs(s)));
  EXPECT_DOUBLE_EQ(e.input_fmap, plan.energy[kIfmap]);
  EXPECT_DOUBLE_EQ(e.output_fmap, plan.energy[kOfmap]);
  EXPECT_DOUBLE_EQ(e.weights, plan.energy[kWeights]);
  EXPECT_EQ(e.total(), e.comp + e.input_fmap + e.output_fmap + e.weights);
}

TEST(LayerEnergy, BitwidthScalingIsExact) {
  const auto s = LayerShape::conv(4, 8, 8, 3, 8, 1, 1, 2);
  const LayerStats st{0.5, 0.7, 0.6};
  auto hw = default_profile();
  const auto ref = layer_energy(s, st, hw);
  for (unsigned b : {2u, 4u, 8u, 16u}) {
    hw.weight_bits = hw.activation_bits = b;
    const auto e = layer_energy(s, st, hw);
    const double f = b / 16.0;
    EXPECT_EQ(e.comp, ref.comp * f * f);
    EXPECT_EQ(e.input_fmap, ref.input_fmap * f);
    EXPECT_EQ(e.output_fmap, ref.output_fmap * f);
    EXPECT_EQ(e.weights, ref.weights * f);
  }
  hw.weight_bits = 8;
  hw.activation_bits = 16;
  const auto mixed = layer_energy(s, st, hw);
  EXPECT_EQ(mixed.comp, ref.comp * 0.5);
  EXPECT_EQ(mixed.weights, ref.weights * 0.5);
  EXPECT_EQ(mixed.input_fmap, ref.input_fmap);
}

TEST(LayerEnergy, WeightCompression) {
  // Inter-level weight traffic shrinks by min(1, 0.5 * 1.1) = 0.55; the
  // innermost per-MAC reads shrink with the non-skipped fraction (0.5 here).
  const auto s = LayerShape::conv(4, 8, 8, 3, 8, 1, 1, 2);
  const auto hw = default_profile();
  const auto plan = optimize_accesses(s, hw);
  const double inner = static_cast<double>(plan.counts.back()[kWeights]) * hw.levels.back().energy;
  const double outer = plan.energy[kWeights] - inner;
  const auto dense = layer_energy(s, {}, hw);
  const auto sparse = layer_energy(s, {0.5, 1.0, 1.0}, hw);
  EXPECT_NEAR(sparse.weights, outer * 0.55 + inner * 0.5, 1e-9 * dense.weights);
  EXPECT_EQ(compression_factor(0.5, 0.1), 0.55);
  EXPECT_EQ(compression_factor(0.95, 0.1), 1.0);
  EXPECT_NEAR(sparse.input_fmap, dense.input_fmap - 0.5 * static_cast<double>(plan.counts.back()[kIfmap]),
              1e-9 * dense.input_fmap);
}

TEST(LayerEnergy, SparsityIsMonotone) {
  const auto hw = default_profile();
  for (const auto& s : {LayerShape::conv(8, 12, 12, 3, 16, 1, 1, 4), LayerShape::fc(256, 64, 8)}) {
    std::vector<std::vector<double>> e(10, std::vector<double>(10));
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) {
        const double wd = (i + 1) / 10.0, ad = (j + 1) / 10.0;
        e[i][j] = layer_energy(s, {wd, ad, ad}, hw).total();
      }
    for (int i = 0; i < 10; ++i)
      for (int j = 0; j < 10; ++j) {
        if (i > 0) EXPECT_LE(e[i - 1][j], e[i][j]);
        if (j > 0) EXPECT_LE(e[i][j - 1], e[i][j]);
      }
  }
}

TEST(NetworkEnergy, SingleAndEmpty) {
  const auto hw = default_profile();
  const auto s = LayerShape::fc(32, 16, 4);
  const auto ne = network_energy({{"fc1", s}}, {}, hw);
  EXPECT_EQ(ne.total.total(), layer_energy(s, {}, hw).total());
  EXPECT_EQ(network_energy({}, {}, hw).total.total(), 0.0);
  EXPECT_THROW(network_energy({{"fc1", s}}, {{}, {}}, hw), ConfigError);
}

TEST(NetworkEnergy, TotalsAreExactSums) {
  const auto hw = default_profile();
  std::vector<NamedShape> layers{{"c1", LayerShape::conv(3, 16, 16, 3, 8, 1, 1, 4)},
                                 {"c2", LayerShape::conv(8, 8, 8, 3, 16, 1, 1, 4)},
                                 {"f1", LayerShape::fc(16, 10, 4, 4, 4)}};
  const auto ne = network_energy(layers, {{0.4, 1.0, 0.5}, {0.3, 0.5, 0.4}, {0.2, 0.4, 1.0}}, hw);
  EnergyBreakdown sum;
  for (const auto& r : ne.layers) sum += r.energy;
  EXPECT_EQ(sum.comp, ne.total.comp);
  EXPECT_EQ(sum.weights, ne.total.weights);
  EXPECT_EQ(sum.total(), ne.total.total());
  EXPECT_EQ(ne.layers[1].name, "c2");
}

TEST(NetworkEnergy, AlexNetConvDominatesEnergyNotWeights) {
  const auto man = load_manifest(EAP_SOURCE_DIR "/manifests/alexnet.json");
  const auto ne = network_energy(man.shapes(), {}, default_profile());
  const auto ks = kind_shares(ne);
  EXPECT_LT(ks.conv_weight_share(), 0.10);
  EXPECT_GT(ks.conv_energy_share(), 0.50);
}

TEST(Profile, TomlMatchesDefault) {
  EXPECT_EQ(load_profile(EAP_SOURCE_DIR "/profiles/default.toml"), default_profile());
  std::istringstream j(to_json(default_profile()).dump());
  EXPECT_EQ(profile_from_json(nlohmann::json::parse(j)), default_profile());
}

TEST(Profile, InvalidProfilesRejected) {
  auto parse = [](const std::string& text) {
    std::istringstream is(text);
    return profile_from_toml(is);
  };
  const std::string head = "[[level]]\nname = \"dram\"\nenergy = 200\ncapacity = \"unbounded\"\n";
  EXPECT_NO_THROW(parse(head + "[[level]]\nname = \"rf\"\nenergy = 1\ncapacity = 64\n"));
  EXPECT_THROW(parse(head + "[[level]]\nname = \"rf\"\nenergy = 300\ncapacity = 64\n"), ConfigError);
  EXPECT_THROW(parse(head + "[[level]]\nname = \"rf\"\nenergy = 1\ncapacity = \"unbounded\"\n"), ConfigError);
  EXPECT_THROW(parse(head), ConfigError);
  EXPECT_THROW(parse("mac_energy = \n"), ConfigError);
  EXPECT_THROW(parse(head + "[[level]]\nname = \"rf\"\nenergy = 1\ncapacity = 1.5\n"), ConfigError);
}

TEST(Report, CsvRoundTrip) {
  const auto hw = default_profile();
  std::vector<NamedShape> layers{{"c1", LayerShape::conv(3, 16, 16, 3, 8, 1, 1, 4)},
                                 {"f1", LayerShape::fc(8, 10, 4, 16, 16)}};
  const auto ne = network_energy(layers, {{0.4, 1.0, 0.5}, {0.3, 0.5, 1.0}}, hw);
  const auto rows = parse_energy_csv(energy_csv(ne));
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].layer, "c1");
  EXPECT_EQ(rows[2].layer, "total");
  EXPECT_EQ(rows[1].macs, ne.layers[1].macs);
  EXPECT_EQ(rows[1].nonskipped_macs, ne.layers[1].nonskipped_macs);
  EXPECT_NEAR(rows[0].total, ne.layers[0].energy.total(), 1e-5 * ne.layers[0].energy.total());
  EXPECT_NEAR(rows[2].weights, ne.total.weights, 1e-5 * ne.total.weights);
  const auto j = energy_json(ne);
  EXPECT_EQ(j["layers"].size(), 2u);
  EXPECT_EQ(j["totals"]["total"].get<double>(), round_sig(ne.total.total()));
  EXPECT_EQ(sig(123456789.0), "1.23457e+08");
  EXPECT_EQ(sci4(1234.0), "1.234e+03");
}
