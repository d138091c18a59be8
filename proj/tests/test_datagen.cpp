#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "gridsense/datagen.hpp"
#include "gridsense/dataset_io.hpp"
#include "gridsense/grid_io.hpp"

using namespace gridsense;

namespace {

const Dataset& small_case14() {
  static const Dataset ds = [] {
    GenerationConfig cfg;
    cfg.n_train = 3;
    cfg.n_val = 2;
    cfg.n_test = 2;
    cfg.seed = 11;
    return generate_dataset(load_builtin_case("case14"), OutageOrder::single, cfg);
  }();
  return ds;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gridsense_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(Outages, CandidateCounts) {
  const auto g = load_builtin_case("case14");
  EXPECT_EQ(enumerate_outages(g, OutageOrder::single).size(), 20u);
  EXPECT_EQ(enumerate_outages(g, OutageOrder::pair).size(), 190u);
  const auto g30 = load_builtin_case("case30");
  EXPECT_EQ(enumerate_outages(g30, OutageOrder::single).size(), 41u);
  EXPECT_EQ(enumerate_outages(g30, OutageOrder::pair).size(), 820u);
}

TEST(Outages, ParseOrder) {
  EXPECT_EQ(parse_outage_order("single"), OutageOrder::single);
  EXPECT_EQ(parse_outage_order("double"), OutageOrder::pair);
  EXPECT_THROW(parse_outage_order("triple"), ConfigError);
}

TEST(Demand, DiurnalShapeHasUnitMeanAndEveningPeak) {
  const OuParams p;
  const auto d = diurnal_shape(p);
  ASSERT_EQ(d.size(), 288);
  EXPECT_NEAR(d.mean(), 1.0, 1e-12);
  Eigen::Index arg = 0;
  d.maxCoeff(&arg);
  EXPECT_EQ(arg, 18 * 12);
  // Trough at midnight, 18 h from the peak: 1 + 0.2 cos(3 pi / 4).
  EXPECT_NEAR(d.maxCoeff() / d.minCoeff(), 1.2 / (1.0 - 0.2 * std::sqrt(0.5)), 1e-9);
}

// Moments of the fluctuation over 10^4 independent seeds: zero mean, the
// continuous stationary variance at the first step, and the Euler-Maruyama
// lag-one autocorrelation 1 - theta*dt.
TEST(Demand, OuMomentsOverManySeeds) {
  const OuParams p;
  const int seeds = 10000;
  const Eigen::VectorXd baseline = Eigen::VectorXd::Ones(1);
  double m0 = 0.0, v0 = 0.0, lag = 0.0, var_mid = 0.0, mean_mid = 0.0;
  for (int s = 0; s < seeds; ++s) {
    const auto prof = simulate_ou_demand(baseline, p, 1.0, static_cast<std::uint64_t>(s) + 1);
    const double x0 = prof.fluctuation(0, 0);
    m0 += x0;
    v0 += x0 * x0;
    const double a = prof.fluctuation(100, 0), b = prof.fluctuation(101, 0);
    mean_mid += a;
    var_mid += a * a;
    lag += a * b;
  }
  m0 /= seeds;
  v0 /= seeds;
  mean_mid /= seeds;
  var_mid /= seeds;
  lag /= seeds;
  const double stationary = p.volatility * p.volatility / (2.0 * p.mean_reversion);
  const double se = std::sqrt(stationary / seeds);
  EXPECT_NEAR(m0, 0.0, 5.0 * se);
  EXPECT_NEAR(mean_mid, 0.0, 5.0 * se);
  EXPECT_NEAR(v0 / stationary, 1.0, 0.08);
  const double theta_dt = p.mean_reversion * p.step_hours;
  // The discrete recursion's own stationary variance.
  const double discrete = p.volatility * p.volatility * p.step_hours / (1.0 - (1.0 - theta_dt) * (1.0 - theta_dt));
  EXPECT_GT(var_mid, 0.9 * stationary);
  EXPECT_LT(var_mid, 1.1 * discrete);
  EXPECT_NEAR(lag / var_mid, 1.0 - theta_dt, 0.02);
}

TEST(Demand, FactorsAreNonnegativeAndScaled) {
  OuParams p;
  p.volatility = 3.0;  // large enough to hit the floor
  const Eigen::VectorXd baseline = Eigen::VectorXd::Constant(4, 2.0);
  const auto prof = simulate_ou_demand(baseline, p, 0.75, 3);
  EXPECT_GE(prof.factors.minCoeff(), 0.0);
  EXPECT_EQ(prof.steps(), 288);
  EXPECT_EQ(prof.values().cols(), 4);
  OuParams calm;
  calm.volatility = 0.0;
  const auto flat = simulate_ou_demand(baseline, calm, 0.75, 3);
  EXPECT_NEAR(flat.factors.col(0).mean(), 0.75, 1e-12);
}

TEST(Demand, SameSeedSameProfile) {
  const Eigen::VectorXd baseline = Eigen::VectorXd::LinSpaced(5, 0.1, 1.0);
  const auto a = simulate_ou_demand(baseline, {}, 1.0, 99);
  const auto b = simulate_ou_demand(baseline, {}, 1.0, 99);
  const auto c = simulate_ou_demand(baseline, {}, 1.0, 100);
  EXPECT_EQ(a.factors, b.factors);
  EXPECT_NE(a.factors, c.factors);
}

TEST(Demand, RejectsBadParameters) {
  OuParams p;
  p.mean_reversion = 0.0;
  EXPECT_THROW(simulate_ou_demand(Eigen::VectorXd::Ones(2), p, 1.0, 1), ConfigError);
  p = {};
  p.step_hours = 0.0;
  EXPECT_THROW(simulate_ou_demand(Eigen::VectorXd::Ones(2), p, 1.0, 1), ConfigError);
}

TEST(Features, LayoutIsAnglesThenMagnitudesPerBus) {
  PowerFlowSolution pre, post;
  pre.v_ang = Eigen::Vector3d(0.0, -0.1, -0.2);
  pre.v_mag = Eigen::Vector3d(1.0, 0.99, 0.98);
  post.v_ang = Eigen::Vector3d(0.0, -0.15, -0.1);
  post.v_mag = Eigen::Vector3d(1.0, 0.97, 0.99);
  const auto f = build_feature_vector(pre, post, 1.25, 4);
  ASSERT_EQ(f.values.size(), 8);
  EXPECT_NEAR(f.values[2], -0.05, 1e-15);
  EXPECT_NEAR(f.values[3], -0.02, 1e-15);
  EXPECT_NEAR(f.values[4], 0.1, 1e-15);
  EXPECT_NEAR(f.values[5], 0.01, 1e-15);
  EXPECT_EQ(f.values[6], 1.25);
  EXPECT_EQ(f.values[7], 1.0);
  EXPECT_EQ(f.label, 4);
  post.v_mag.resize(2);
  EXPECT_THROW(build_feature_vector(pre, post, 1.0), DimensionError);
}

TEST(Dataset, SmallCase14Invariants) {
  const auto& ds = small_case14();
  EXPECT_NO_THROW(validate_dataset(ds));
  EXPECT_EQ(ds.feature_count(), 30);
  EXPECT_EQ(ds.stats.candidates, 20);
  EXPECT_GE(ds.class_count(), 17);
  EXPECT_LE(ds.class_count(), 21);
  int combos = 0;
  for (const auto& c : ds.classes) combos += static_cast<int>(c.feasible_scales.size());
  EXPECT_EQ(combos, ds.stats.feasible_combinations);
  EXPECT_EQ(ds.train.size(), 3 * combos);
  EXPECT_EQ(ds.validation.size(), 2 * combos);
  EXPECT_EQ(ds.test.size(), 2 * combos);
  for (int k = 0; k < ds.class_count(); ++k) EXPECT_EQ(ds.classes[static_cast<std::size_t>(k)].class_id, k + 1);
}

TEST(Dataset, TimepointsSplitByHalfAndDoNotRepeat) {
  const auto& ds = small_case14();
  std::set<std::tuple<int, int, int>> train_keys, held_keys;
  for (const auto& k : ds.train.keys) {
    EXPECT_LT(k.timestep, 144);
    EXPECT_TRUE(train_keys.insert({k.scenario, k.scale_index, k.timestep}).second);
  }
  for (const auto* s : {&ds.validation, &ds.test})
    for (const auto& k : s->keys) {
      EXPECT_GE(k.timestep, 144);
      EXPECT_TRUE(held_keys.insert({k.scenario, k.scale_index, k.timestep}).second);
    }
}

TEST(Dataset, BiasRowIsOneAndGenLevelTracksScale) {
  const auto& ds = small_case14();
  EXPECT_TRUE((ds.train.features.row(ds.bias_index()).array() == 1.0).all());
  for (Eigen::Index i = 0; i < ds.train.size(); ++i) {
    const double scale = ds.config.scales[static_cast<std::size_t>(ds.train.keys[static_cast<std::size_t>(i)].scale_index)];
    EXPECT_NEAR(ds.train.features(ds.gen_level_index(), i) / scale, 1.0, 0.35);
  }
}

TEST(Dataset, SameSeedIsDeterministic) {
  GenerationConfig cfg;
  cfg.n_train = 1;
  cfg.n_val = 1;
  cfg.n_test = 1;
  cfg.scales = {1.0};
  cfg.seed = 5;
  const auto g = load_builtin_case("case14");
  const auto a = generate_dataset(g, OutageOrder::single, cfg);
  cfg.threads = 3;
  const auto b = generate_dataset(g, OutageOrder::single, cfg);
  EXPECT_EQ(a.train.features, b.train.features);
  EXPECT_EQ(a.test.labels, b.test.labels);
}

TEST(Dataset, TooManyTimepointsIsConfigError) {
  GenerationConfig cfg;
  cfg.n_train = 145;
  cfg.scales = {1.0};
  EXPECT_THROW(generate_dataset(load_builtin_case("case14"), OutageOrder::single, cfg), ConfigError);
}

TEST(Dataset, ValidationRejectsMissingClass) {
  Dataset ds = small_case14();
  for (auto& y : ds.train.labels)
    if (y == 1) y = 2;
  EXPECT_THROW(validate_dataset(ds), DataError);
}

TEST(Dataset, RestrictKeepsSelectedRowsOnly) {
  const auto& ds = small_case14();
  const auto r = restrict_to_buses(ds, ds.test.features, {2, 9});
  for (int row = 0; row < ds.feature_count(); ++row) {
    const bool keep = row == 2 || row == 3 || row == 16 || row == 17 || row >= 28;
    if (keep)
      EXPECT_EQ(r.row(row), ds.test.features.row(row)) << row;
    else
      EXPECT_TRUE(r.row(row).isZero()) << row;
  }
  EXPECT_THROW(restrict_to_buses(ds, ds.test.features, {99}), ConfigError);
}

TEST(DatasetIo, RoundTripIsExact) {
  const auto& ds = small_case14();
  const auto dir = temp_dir("dataset_rt");
  save_dataset(ds, dir);
  const auto back = load_dataset(dir);
  EXPECT_EQ(back.grid_name, ds.grid_name);
  EXPECT_EQ(back.bus_ids, ds.bus_ids);
  EXPECT_EQ(back.class_count(), ds.class_count());
  for (const auto& [a, b] : {std::pair{&ds.train, &back.train}, {&ds.validation, &back.validation}, {&ds.test, &back.test}}) {
    EXPECT_EQ(a->features, b->features);
    EXPECT_EQ(a->labels, b->labels);
    EXPECT_EQ(a->keys, b->keys);
  }
  for (std::size_t c = 0; c < ds.classes.size(); ++c) {
    EXPECT_EQ(back.classes[c].lines, ds.classes[c].lines);
    EXPECT_EQ(back.classes[c].feasible_scales, ds.classes[c].feasible_scales);
  }
  std::filesystem::remove_all(dir);
}

TEST(DatasetIo, CorruptFilesAreDataErrors) {
  const auto& ds = small_case14();
  const auto dir = temp_dir("dataset_bad");
  save_dataset(ds, dir);
  {
    std::ofstream os(dir / "train.bin", std::ios::binary | std::ios::trunc);
    os << "XXXX";
  }
  EXPECT_THROW(load_dataset(dir), DataError);
  EXPECT_THROW(load_dataset(dir / "missing"), DataError);
  std::filesystem::remove_all(dir);
}

TEST(DatasetIo, SplitStreamRoundTrip) {
  Split s;
  s.features = Eigen::MatrixXd::Random(4, 3);
  s.labels = {1, 3, 2};
  s.keys = {{0, 1, 2}, {3, 4, 5}, {6, 7, 8}};
  std::stringstream buf;
  write_split(buf, s);
  const auto back = read_split(buf);
  EXPECT_EQ(back.features, s.features);
  EXPECT_EQ(back.labels, s.labels);
  EXPECT_EQ(back.keys, s.keys);
}
