#pragma once

// Synthetic PMU data: stochastic demand profiles, outage enumeration, feature
// extraction and train/validation/test splits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "gridsense/error.hpp"
#include "gridsense/grid.hpp"
#include "gridsense/powerflow.hpp"
#include "gridsense/util.hpp"

namespace gridsense {

enum class OutageOrder { single = 1, pair = 2 };

inline const char* to_string(OutageOrder o) { return o == OutageOrder::single ? "single" : "double"; }

inline OutageOrder parse_outage_order(const std::string& s) {
  if (s == "single") return OutageOrder::single;
  if (s == "double") return OutageOrder::pair;
  throw ConfigError("outage order must be 'single' or 'double', got '" + s + "'");
}

struct OutageScenario {
  std::vector<BusPair> lines;
  int class_id = 0;
};

/// Candidate outages: one per distinct line, or one per unordered pair of
/// distinct lines. Feasibility is decided later, during generation.
inline std::vector<OutageScenario> enumerate_outages(const PowerGrid& g, OutageOrder order) {
  const auto lines = distinct_lines(g);
  std::vector<OutageScenario> out;
  if (order == OutageOrder::single) {
    for (const auto& l : lines) out.push_back({{l}, static_cast<int>(out.size()) + 1});
  } else {
    for (std::size_t i = 0; i < lines.size(); ++i)
      for (std::size_t j = i + 1; j < lines.size(); ++j)
        out.push_back({{lines[i], lines[j]}, static_cast<int>(out.size()) + 1});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Demand

/// Ornstein-Uhlenbeck demand fluctuation and diurnal shape. Rates are per hour.
struct OuParams {
  double mean_reversion = 2.0;
  double volatility = 0.1;  // stationary std = volatility / sqrt(2 * mean_reversion) = 5%
  double step_hours = 5.0 / 60.0;
  double horizon_hours = 24.0;
  double diurnal_amplitude = 0.2;
  double diurnal_peak_hour = 18.0;
};

struct DemandProfile {
  Eigen::VectorXd baseline;     // per bus
  Eigen::VectorXd diurnal;      // per step, mean 1
  Eigen::MatrixXd fluctuation;  // steps x buses, OU state
  Eigen::MatrixXd factors;      // steps x buses, multiplier on baseline, >= 0
  double scale = 1.0;
  std::uint64_t seed = 0;
  double step_hours = 0.0;

  Eigen::Index steps() const { return factors.rows(); }
  /// Load series, steps x buses, in the baseline's units.
  Eigen::MatrixXd values() const { return factors * baseline.asDiagonal(); }
};

inline Eigen::Index profile_steps(const OuParams& p) {
  if (!(p.step_hours > 0.0) || !std::isfinite(p.step_hours)) throw ConfigError("OU step must be positive");
  if (!(p.horizon_hours > 0.0)) throw ConfigError("OU horizon must be positive");
  return static_cast<Eigen::Index>(std::llround(p.horizon_hours / p.step_hours));
}

/// Half-sine day shape (one half period spans the horizon) peaking at
/// `diurnal_peak_hour`, normalized to mean 1 over the step grid.
inline Eigen::VectorXd diurnal_shape(const OuParams& p) {
  const Eigen::Index n = profile_steps(p);
  Eigen::VectorXd d(n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) * p.step_hours;
    d[k] = 1.0 + p.diurnal_amplitude * std::cos(std::numbers::pi * (t - p.diurnal_peak_hour) / p.horizon_hours);
  }
  return d / d.mean();
}

/// Per-bus independent OU processes (Euler-Maruyama, stationary start)
/// overlaid multiplicatively on scale * baseline * diurnal(t).
inline DemandProfile simulate_ou_demand(const Eigen::VectorXd& baseline, const OuParams& p, double scale,
                                        std::uint64_t seed) {
  const Eigen::Index steps = profile_steps(p);
  if (!(p.mean_reversion > 0.0)) throw ConfigError("OU mean reversion must be positive");
  if (p.volatility < 0.0) throw ConfigError("OU volatility must be nonnegative");
  if ((baseline.array() < 0.0).any()) throw ConfigError("baseline demand must be nonnegative");

  const Eigen::Index buses = baseline.size();
  DemandProfile prof;
  prof.baseline = baseline;
  prof.diurnal = diurnal_shape(p);
  prof.scale = scale;
  prof.seed = seed;
  prof.step_hours = p.step_hours;
  prof.fluctuation.setZero(steps, buses);

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double dt = p.step_hours;
  const double stationary_sd = p.volatility / std::sqrt(2.0 * p.mean_reversion);
  const double noise_sd = p.volatility * std::sqrt(dt);
  for (Eigen::Index b = 0; b < buses; ++b) {
    double x = stationary_sd * normal(rng);
    for (Eigen::Index k = 0; k < steps; ++k) {
      prof.fluctuation(k, b) = x;
      x += -p.mean_reversion * x * dt + noise_sd * normal(rng);
    }
  }
  prof.factors = ((scale * prof.diurnal).replicate(1, buses).array() * (1.0 + prof.fluctuation.array())).max(0.0);
  return prof;
}

// ---------------------------------------------------------------------------
// Features

struct FeatureVector {
  Eigen::VectorXd values;
  int label = 0;
};

/// [dtheta_1, d|V|_1, ..., dtheta_B, d|V|_B, gen_level, 1].
inline FeatureVector build_feature_vector(const PowerFlowSolution& pre, const PowerFlowSolution& post,
                                          double gen_level, int label = 0) {
  const Eigen::Index b = pre.v_ang.size();
  if (post.v_ang.size() != b || pre.v_mag.size() != b || post.v_mag.size() != b)
    throw DimensionError("pre/post solutions cover different bus sets");
  FeatureVector f;
  f.label = label;
  f.values.resize(2 * b + 2);
  for (Eigen::Index i = 0; i < b; ++i) {
    f.values[2 * i] = post.v_ang[i] - pre.v_ang[i];
    f.values[2 * i + 1] = post.v_mag[i] - pre.v_mag[i];
  }
  f.values[2 * b] = gen_level;
  f.values[2 * b + 1] = 1.0;
  return f;
}

// ---------------------------------------------------------------------------
// Dataset

/// Where a sample came from: candidate scenario index, scale index, profile step.
struct SampleKey {
  int scenario = 0;
  int scale_index = 0;
  int timestep = 0;

  auto operator<=>(const SampleKey&) const = default;
};

struct Split {
  Eigen::MatrixXd features;  // d x n, one sample per column
  std::vector<int> labels;   // 1..K
  std::vector<SampleKey> keys;

  Eigen::Index size() const { return features.cols(); }
  bool empty() const { return size() == 0; }
};

/// Feature indices contributed by one PMU (bus).
struct SensorGroup {
  int bus_id = 0;
  std::vector<int> features;
};

struct ClassInfo {
  int class_id = 0;
  std::vector<BusPair> lines;
  std::vector<int> feasible_scales;  // indices into GenerationConfig::scales
};

struct GenerationConfig {
  std::vector<double> scales{0.5, 0.75, 1.0, 1.25, 1.5};
  int n_train = 20;
  int n_val = 10;
  int n_test = 50;
  std::uint64_t seed = 1;
  OuParams ou;
  PowerFlowOptions pf;
  unsigned threads = 1;
};

struct GenerationStats {
  int candidates = 0;
  int structurally_infeasible = 0;
  int infeasible_classes = 0;  // candidates dropped at every scale, including structural
  int feasible_combinations = 0;
  int dropped_combinations = 0;
  long long solves = 0;
};

struct Dataset {
  std::string grid_name;
  OutageOrder order = OutageOrder::single;
  std::vector<int> bus_ids;
  std::vector<ClassInfo> classes;
  std::vector<SensorGroup> groups;
  Split train, validation, test;
  GenerationConfig config;
  GenerationStats stats;

  int class_count() const { return static_cast<int>(classes.size()); }
  int feature_count() const { return 2 * static_cast<int>(bus_ids.size()) + 2; }
  int gen_level_index() const { return 2 * static_cast<int>(bus_ids.size()); }
  int bias_index() const { return gen_level_index() + 1; }

  const SensorGroup& group_for_bus(int bus_id) const {
    for (const auto& g : groups)
      if (g.bus_id == bus_id) return g;
    throw ConfigError("bus " + std::to_string(bus_id) + " has no sensor group");
  }
};

inline std::vector<SensorGroup> sensor_groups(const std::vector<int>& bus_ids) {
  std::vector<SensorGroup> out;
  for (std::size_t i = 0; i < bus_ids.size(); ++i)
    out.push_back({bus_ids[i], {2 * static_cast<int>(i), 2 * static_cast<int>(i) + 1}});
  return out;
}

/// Checks the structural invariants of a dataset; throws DataError.
inline void validate_dataset(const Dataset& ds) {
  const int d = ds.feature_count();
  const int k = ds.class_count();
  if (k == 0) throw DataError("dataset has no feasible outage classes");
  std::vector<int> seen(static_cast<std::size_t>(d), 0);
  for (const auto& g : ds.groups)
    for (int f : g.features) {
      if (f < 0 || f >= ds.gen_level_index()) throw DataError("sensor group covers a non-sensor feature");
      if (seen[static_cast<std::size_t>(f)]++) throw DataError("sensor groups overlap");
    }
  for (int f = 0; f < ds.gen_level_index(); ++f)
    if (!seen[static_cast<std::size_t>(f)]) throw DataError("sensor groups do not cover every sensor feature");

  auto check = [&](const Split& s, const char* name) {
    if (s.features.cols() > 0 && s.features.rows() != d)
      throw DataError(std::string(name) + " split has the wrong feature width");
    if (static_cast<Eigen::Index>(s.labels.size()) != s.size())
      throw DataError(std::string(name) + " split has mismatched labels");
    for (int y : s.labels)
      if (y < 1 || y > k) throw DataError(std::string(name) + " split has an out-of-range label");
  };
  check(ds.train, "train");
  check(ds.validation, "validation");
  check(ds.test, "test");

  std::vector<bool> present(static_cast<std::size_t>(k) + 1, false);
  for (int y : ds.train.labels) present[static_cast<std::size_t>(y)] = true;
  for (int c = 1; c <= k; ++c)
    if (!present[static_cast<std::size_t>(c)])
      throw DataError("class " + std::to_string(c) + " has no training samples (every class must be present in train)");
}

namespace detail {

inline std::vector<int> sample_steps(int first, int count, int take, std::uint64_t seed) {
  if (take > count)
    throw ConfigError("cannot draw " + std::to_string(take) + " distinct timepoints from " + std::to_string(count));
  std::vector<int> idx(static_cast<std::size_t>(count));
  std::iota(idx.begin(), idx.end(), first);
  std::mt19937_64 rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(static_cast<std::size_t>(take));
  return idx;
}

struct ComboSamples {
  bool feasible = false;
  std::vector<FeatureVector> train, validation, test;
  std::vector<int> train_steps, validation_steps, test_steps;
  long long solves = 0;
};

}  // namespace detail

/// Simulates every (outage, scale) combination and assembles the three splits.
/// Training timepoints come from the first half of the horizon, validation and
/// test timepoints from the second half. A combination is dropped when any of
/// its post-outage flows fails to solve; a class is dropped when no scale
/// survives.
inline Dataset generate_dataset(const PowerGrid& grid, OutageOrder order, const GenerationConfig& cfg) {
  if (cfg.scales.empty()) throw ConfigError("at least one demand scale is required");
  if (cfg.n_train < 0 || cfg.n_val < 0 || cfg.n_test < 0) throw ConfigError("split sizes must be nonnegative");
  for (double s : cfg.scales)
    if (!(s > 0.0)) throw ConfigError("demand scales must be positive");

  const auto bus_count = static_cast<Eigen::Index>(grid.bus_count());
  const Eigen::Index steps = profile_steps(cfg.ou);
  const int half = static_cast<int>(steps / 2);
  const auto nscales = cfg.scales.size();

  const DemandAssignment base = baseline_demand(grid);
  Eigen::VectorXd p_base = base.p_load, q_base = base.q_load;
  const double total_base = p_base.sum();
  if (!(total_base > 0.0)) throw ConfigError("grid has no positive total load");

  // One demand profile per scale; all buses share the multiplier matrix, with
  // reactive load following the same factor as active load.
  std::vector<DemandProfile> profiles;
  for (std::size_t s = 0; s < nscales; ++s)
    profiles.push_back(simulate_ou_demand(p_base.cwiseMax(0.0), cfg.ou, cfg.scales[s], derive_seed(cfg.seed, {1, s})));

  auto demand_at = [&](std::size_t s, Eigen::Index k) {
    DemandAssignment d;
    const Eigen::VectorXd f = profiles[s].factors.row(k).transpose();
    d.p_load = f.cwiseProduct(p_base);
    d.q_load = f.cwiseProduct(q_base);
    d.gen_scale = d.p_load.sum() / total_base;
    return d;
  };

  // Intact-grid solutions for every (scale, step).
  std::vector<PowerFlowResult> intact(nscales * static_cast<std::size_t>(steps));
  parallel_for(intact.size(), cfg.threads, [&](std::size_t i) {
    const std::size_t s = i / static_cast<std::size_t>(steps);
    const auto k = static_cast<Eigen::Index>(i % static_cast<std::size_t>(steps));
    intact[i] = solve_ac_power_flow(grid, demand_at(s, k), cfg.pf);
  });
  auto pre_at = [&](std::size_t s, int k) -> const PowerFlowResult& {
    return intact[s * static_cast<std::size_t>(steps) + static_cast<std::size_t>(k)];
  };

  const auto candidates = enumerate_outages(grid, order);
  std::vector<std::vector<detail::ComboSamples>> results(candidates.size());
  std::vector<char> structural(candidates.size(), 0);

  parallel_for(candidates.size(), cfg.threads, [&](std::size_t c) {
    auto& per_scale = results[c];
    per_scale.resize(nscales);
    const auto outaged = apply_outage(grid, candidates[c].lines);
    if (!outaged) {
      structural[c] = 1;
      return;
    }
    for (std::size_t s = 0; s < nscales; ++s) {
      auto& combo = per_scale[s];
      combo.train_steps = detail::sample_steps(0, half, cfg.n_train, derive_seed(cfg.seed, {2, c, s, 0}));
      auto second = detail::sample_steps(half, static_cast<int>(steps) - half, cfg.n_val + cfg.n_test,
                                         derive_seed(cfg.seed, {2, c, s, 1}));
      combo.validation_steps.assign(second.begin(), second.begin() + cfg.n_val);
      combo.test_steps.assign(second.begin() + cfg.n_val, second.end());

      bool ok = true;
      auto collect = [&](const std::vector<int>& ks, std::vector<FeatureVector>& out) {
        for (int k : ks) {
          if (!ok) return;
          const auto& pre = pre_at(s, k);
          if (!pre.converged()) {
            ok = false;
            return;
          }
          const auto demand = demand_at(s, k);
          const auto post = solve_ac_power_flow(*outaged, demand, cfg.pf);
          ++combo.solves;
          if (!post.converged()) {
            ok = false;
            return;
          }
          out.push_back(build_feature_vector(pre.solution, post.solution, demand.gen_scale));
        }
      };
      collect(combo.train_steps, combo.train);
      collect(combo.validation_steps, combo.validation);
      collect(combo.test_steps, combo.test);
      combo.feasible = ok;
      if (!ok) {
        combo.train.clear();
        combo.validation.clear();
        combo.test.clear();
      }
    }
  });

  Dataset ds;
  ds.grid_name = grid.name;
  ds.order = order;
  ds.config = cfg;
  for (const auto& b : grid.buses) ds.bus_ids.push_back(b.id);
  ds.groups = sensor_groups(ds.bus_ids);
  ds.stats.candidates = static_cast<int>(candidates.size());

  const Eigen::Index d = 2 * bus_count + 2;
  std::vector<std::pair<FeatureVector, SampleKey>> tr, va, te;
  for (std::size_t c = 0; c < candidates.size(); ++c) {
    if (structural[c]) {
      ++ds.stats.structurally_infeasible;
      ++ds.stats.infeasible_classes;
      continue;
    }
    ClassInfo info;
    info.lines = candidates[c].lines;
    for (std::size_t s = 0; s < nscales; ++s) {
      ds.stats.solves += results[c][s].solves;
      if (results[c][s].feasible) {
        info.feasible_scales.push_back(static_cast<int>(s));
        ++ds.stats.feasible_combinations;
      } else {
        ++ds.stats.dropped_combinations;
      }
    }
    if (info.feasible_scales.empty()) {
      ++ds.stats.infeasible_classes;
      continue;
    }
    info.class_id = ds.class_count() + 1;
    for (int s : info.feasible_scales) {
      auto& combo = results[c][static_cast<std::size_t>(s)];
      auto push = [&](std::vector<FeatureVector>& from, const std::vector<int>& ks, auto& to) {
        for (std::size_t i = 0; i < from.size(); ++i) {
          from[i].label = info.class_id;
          to.emplace_back(std::move(from[i]), SampleKey{static_cast<int>(c), s, ks[i]});
        }
      };
      push(combo.train, combo.train_steps, tr);
      push(combo.validation, combo.validation_steps, va);
      push(combo.test, combo.test_steps, te);
    }
    ds.classes.push_back(std::move(info));
  }

  auto fill = [d](Split& split, std::vector<std::pair<FeatureVector, SampleKey>>& rows) {
    split.features.resize(d, static_cast<Eigen::Index>(rows.size()));
    split.labels.clear();
    split.keys.clear();
    for (std::size_t i = 0; i < rows.size(); ++i) {
      split.features.col(static_cast<Eigen::Index>(i)) = rows[i].first.values;
      split.labels.push_back(rows[i].first.label);
      split.keys.push_back(rows[i].second);
    }
  };
  fill(ds.train, tr);
  fill(ds.validation, va);
  fill(ds.test, te);

  validate_dataset(ds);
  return ds;
}

/// Copy of `X` with the given sensor features kept and every other sensor
/// feature zeroed (gen_level and bias rows are always kept).
inline Eigen::MatrixXd restrict_to_buses(const Dataset& ds, const Eigen::MatrixXd& x, const std::vector<int>& buses) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  out.row(ds.gen_level_index()) = x.row(ds.gen_level_index());
  out.row(ds.bias_index()) = x.row(ds.bias_index());
  for (int b : buses)
    for (int f : ds.group_for_bus(b).features) out.row(f) = x.row(f);
  return out;
}

}  // namespace gridsense
