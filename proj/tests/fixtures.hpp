#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include "gridsense/datagen.hpp"

namespace gridsense::fixtures {

/// Synthetic dataset: `buses` buses, `classes` classes. The class index is
/// written in base r across the `informative` buses, one digit per bus (as an
/// angle on the unit circle), so every informative bus is needed.
inline Dataset synthetic_dataset(int buses, int classes, const std::vector<int>& informative, int per_class,
                                 std::uint64_t seed, double noise = 0.05) {
  Dataset ds;
  ds.grid_name = "synthetic";
  for (int b = 1; b <= buses; ++b) ds.bus_ids.push_back(b);
  ds.groups = sensor_groups(ds.bus_ids);
  for (int c = 1; c <= classes; ++c) ds.classes.push_back({c, {{c, c + 1}}, {0}});
  int radix = 1;
  while (std::pow(radix, static_cast<double>(informative.size())) < classes) ++radix;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  auto fill = [&](Split& s, int count) {
    const int n = count * classes;
    s.features.resize(ds.feature_count(), n);
    s.labels.clear();
    s.keys.clear();
    for (int i = 0; i < n; ++i) {
      const int y = 1 + i % classes;
      for (int r = 0; r < 2 * buses; ++r) s.features(r, i) = noise * normal(rng);
      int rest = y - 1;
      for (std::size_t j = 0; j < informative.size(); ++j) {
        const int b = informative[j];
        const int digit = rest % radix;
        rest /= radix;
        const double angle = 2.0 * std::numbers::pi * digit / radix;
        s.features(2 * (b - 1), i) += std::cos(angle);
        s.features(2 * (b - 1) + 1, i) += std::sin(angle);
      }
      s.features(ds.gen_level_index(), i) = 1.0;
      s.features(ds.bias_index(), i) = 1.0;
      s.labels.push_back(y);
      s.keys.push_back({y - 1, 0, i});
    }
  };
  fill(ds.train, per_class);
  fill(ds.validation, std::max(1, per_class / 2));
  fill(ds.test, per_class);
  validate_dataset(ds);
  return ds;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("gridsense_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace gridsense::fixtures
