#pragma once

// On-disk dataset: manifest.json plus one binary matrix file per split.
// Layout is documented in docs/formats.md.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "gridsense/binary_io.hpp"
#include "gridsense/datagen.hpp"

namespace gridsense {

inline constexpr int dataset_format_version = 1;
inline constexpr std::uint32_t split_format_version = 1;

inline nlohmann::json to_json(const OuParams& p) {
  return {{"mean_reversion", p.mean_reversion}, {"volatility", p.volatility},
          {"step_hours", p.step_hours},         {"horizon_hours", p.horizon_hours},
          {"diurnal_amplitude", p.diurnal_amplitude}, {"diurnal_peak_hour", p.diurnal_peak_hour}};
}

inline OuParams ou_params_from_json(const nlohmann::json& j, OuParams p = {}) {
  p.mean_reversion = j.value("mean_reversion", p.mean_reversion);
  p.volatility = j.value("volatility", p.volatility);
  p.step_hours = j.value("step_hours", p.step_hours);
  p.horizon_hours = j.value("horizon_hours", p.horizon_hours);
  p.diurnal_amplitude = j.value("diurnal_amplitude", p.diurnal_amplitude);
  p.diurnal_peak_hour = j.value("diurnal_peak_hour", p.diurnal_peak_hour);
  return p;
}

/// Thread count is left out: it never changes the generated data.
inline nlohmann::json to_json(const GenerationConfig& c) {
  return {{"scales", c.scales},
          {"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"seed", c.seed},
          {"ou", to_json(c.ou)},
          {"power_flow",
           {{"tol", c.pf.tol}, {"max_iter", c.pf.max_iter}, {"enforce_q_limits", c.pf.enforce_q_limits}}}};
}

inline GenerationConfig generation_config_from_json(const nlohmann::json& j, GenerationConfig c = {}) {
  c.scales = j.value("scales", c.scales);
  c.n_train = j.value("n_train", c.n_train);
  c.n_val = j.value("n_val", c.n_val);
  c.n_test = j.value("n_test", c.n_test);
  c.seed = j.value("seed", c.seed);
  if (j.contains("ou")) c.ou = ou_params_from_json(j.at("ou"), c.ou);
  if (j.contains("power_flow")) {
    const auto& pf = j.at("power_flow");
    c.pf.tol = pf.value("tol", c.pf.tol);
    c.pf.max_iter = pf.value("max_iter", c.pf.max_iter);
    c.pf.enforce_q_limits = pf.value("enforce_q_limits", c.pf.enforce_q_limits);
  }
  return c;
}

inline void write_split(std::ostream& os, const Split& s) {
  binary::write_magic(os, "GSFM");
  binary::write<std::uint32_t>(os, split_format_version);
  binary::write<std::uint64_t>(os, static_cast<std::uint64_t>(s.size()));
  binary::write<std::uint64_t>(os, static_cast<std::uint64_t>(s.features.rows()));
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    const auto& k = s.keys[static_cast<std::size_t>(i)];
    binary::write<std::int32_t>(os, s.labels[static_cast<std::size_t>(i)]);
    binary::write<std::int32_t>(os, k.scenario);
    binary::write<std::int32_t>(os, k.scale_index);
    binary::write<std::int32_t>(os, k.timestep);
    for (Eigen::Index r = 0; r < s.features.rows(); ++r) binary::write<double>(os, s.features(r, i));
  }
}

inline Split read_split(std::istream& is) {
  binary::expect_magic(is, "GSFM", "split file");
  const auto version = binary::read<std::uint32_t>(is);
  if (version != split_format_version) throw DataError("unsupported split file version " + std::to_string(version));
  const auto rows = binary::read<std::uint64_t>(is);
  const auto cols = binary::read<std::uint64_t>(is);
  if (cols > (1u << 20) || rows > (1ull << 32)) throw DataError("split file header is implausible");
  Split s;
  s.features.resize(static_cast<Eigen::Index>(cols), static_cast<Eigen::Index>(rows));
  s.labels.resize(rows);
  s.keys.resize(rows);
  for (std::uint64_t i = 0; i < rows; ++i) {
    s.labels[i] = binary::read<std::int32_t>(is);
    s.keys[i].scenario = binary::read<std::int32_t>(is);
    s.keys[i].scale_index = binary::read<std::int32_t>(is);
    s.keys[i].timestep = binary::read<std::int32_t>(is);
    for (std::uint64_t r = 0; r < cols; ++r)
      s.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(i)) = binary::read<double>(is);
  }
  return s;
}

inline nlohmann::json dataset_manifest(const Dataset& ds) {
  nlohmann::json classes = nlohmann::json::array();
  for (const auto& c : ds.classes) {
    nlohmann::json lines = nlohmann::json::array();
    for (const auto& l : c.lines) lines.push_back({l.a, l.b});
    classes.push_back({{"class_id", c.class_id}, {"lines", lines}, {"feasible_scales", c.feasible_scales}});
  }
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : ds.groups) groups.push_back({{"bus", g.bus_id}, {"features", g.features}});
  const auto& st = ds.stats;
  return {{"format", "gridsense-dataset"},
          {"version", dataset_format_version},
          {"grid", ds.grid_name},
          {"order", to_string(ds.order)},
          {"bus_ids", ds.bus_ids},
          {"feature_count", ds.feature_count()},
          {"class_count", ds.class_count()},
          {"classes", classes},
          {"groups", groups},
          {"config", to_json(ds.config)},
          {"stats",
           {{"candidates", st.candidates},
            {"structurally_infeasible", st.structurally_infeasible},
            {"infeasible_classes", st.infeasible_classes},
            {"feasible_combinations", st.feasible_combinations},
            {"dropped_combinations", st.dropped_combinations},
            {"solves", st.solves}}},
          {"splits",
           {{"train", {{"file", "train.bin"}, {"rows", ds.train.size()}}},
            {"validation", {{"file", "validation.bin"}, {"rows", ds.validation.size()}}},
            {"test", {{"file", "test.bin"}, {"rows", ds.test.size()}}}}}};
}

/// Writes manifest.json, train.bin, validation.bin and test.bin into `dir`.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream os(dir / "manifest.json");
    os << dataset_manifest(ds).dump(2) << '\n';
    if (!os) throw DataError("cannot write " + (dir / "manifest.json").string());
  }
  auto put = [&](const Split& s, const char* name) {
    std::ofstream os(dir / name, std::ios::binary);
    write_split(os, s);
    if (!os) throw DataError("cannot write " + (dir / name).string());
  };
  put(ds.train, "train.bin");
  put(ds.validation, "validation.bin");
  put(ds.test, "test.bin");
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  std::ifstream ms(dir / "manifest.json");
  if (!ms) throw DataError("cannot open " + (dir / "manifest.json").string());
  nlohmann::json j;
  try {
    ms >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset manifest is not valid JSON: ") + e.what());
  }
  if (j.value("format", "") != "gridsense-dataset") throw DataError("not a dataset manifest");
  if (j.value("version", 0) != dataset_format_version)
    throw DataError("unsupported dataset version " + std::to_string(j.value("version", 0)));

  Dataset ds;
  try {
    ds.grid_name = j.at("grid").get<std::string>();
    ds.order = parse_outage_order(j.at("order").get<std::string>());
    ds.bus_ids = j.at("bus_ids").get<std::vector<int>>();
    for (const auto& c : j.at("classes")) {
      ClassInfo info;
      info.class_id = c.at("class_id").get<int>();
      for (const auto& l : c.at("lines")) info.lines.emplace_back(l.at(0).get<int>(), l.at(1).get<int>());
      info.feasible_scales = c.at("feasible_scales").get<std::vector<int>>();
      ds.classes.push_back(std::move(info));
    }
    for (const auto& g : j.at("groups"))
      ds.groups.push_back({g.at("bus").get<int>(), g.at("features").get<std::vector<int>>()});
    ds.config = generation_config_from_json(j.at("config"));
    const auto& st = j.at("stats");
    ds.stats.candidates = st.at("candidates").get<int>();
    ds.stats.structurally_infeasible = st.at("structurally_infeasible").get<int>();
    ds.stats.infeasible_classes = st.at("infeasible_classes").get<int>();
    ds.stats.feasible_combinations = st.at("feasible_combinations").get<int>();
    ds.stats.dropped_combinations = st.at("dropped_combinations").get<int>();
    ds.stats.solves = st.at("solves").get<long long>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed dataset manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("malformed dataset manifest: ") + e.what());
  }
  auto get = [&](const char* name) {
    const auto file = j.at("splits").at(name).at("file").get<std::string>();
    std::ifstream is(dir / file, std::ios::binary);
    if (!is) throw DataError("cannot open " + (dir / file).string());
    return read_split(is);
  };
  ds.train = get("train");
  ds.validation = get("validation");
  ds.test = get("test");
  validate_dataset(ds);
  return ds;
}

}  // namespace gridsense
