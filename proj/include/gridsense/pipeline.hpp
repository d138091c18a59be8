#pragma once

// End-to-end runs driven by a JSON configuration: generate, train or select,
// evaluate, and record every artifact with its SHA-256 in a run manifest.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "gridsense/analysis.hpp"
#include "gridsense/dataset_io.hpp"
#include "gridsense/grid_io.hpp"
#include "gridsense/model_io.hpp"
#include "gridsense/selection.hpp"

#ifndef GRIDSENSE_VERSION
#define GRIDSENSE_VERSION "0.0.0"
#endif

namespace gridsense {

inline constexpr int run_config_schema = 1;

inline std::string sha256_hex(std::string_view data) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("SHA-256 computation failed");
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return os.str();
}

inline std::string read_file_bytes(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  if (!is) throw DataError("cannot open " + p.string());
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

inline std::string sha256_file(const std::filesystem::path& p) { return sha256_hex(read_file_bytes(p)); }

struct SelectionSettings {
  bool enabled = false;
  SelectionMethod method = SelectionMethod::greedy;
  int buses = 3;
  std::vector<double> taus = tau_grid();
  int restarts = 10;
  SparsaConfig sparsa{};
  std::vector<int> preinstalled, excluded;
};

struct RunConfig {
  std::string case_name = "case14";
  OutageOrder order = OutageOrder::single;
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string output_dir = "run";
  GenerationConfig generation{};
  TrainConfig train{};
  SelectionSettings selection{};
  std::vector<int> ks{1, 2};
};

/// Profile presets. "full" keeps the published budgets (50,000 network
/// iterations); "ci" caps training at 5,000 iterations, uses two restarts on a
/// coarse tau grid, and draws fewer points per (outage, scale) for double
/// outages.
inline void apply_profile(RunConfig& c, const std::string& profile) {
  if (profile == "full") {
    c.train.lbfgs.max_iter = c.train.hidden.empty() ? 500000 : 50000;
    c.train.lbfgs.grad_tol = c.train.hidden.empty() ? 1e-3 : 0.0;
    c.selection.taus = tau_grid();
    c.selection.restarts = 10;
    c.selection.sparsa.max_iter = 10000;
  } else if (profile == "ci") {
    c.train.lbfgs.max_iter = 5000;
    c.train.lbfgs.grad_tol = c.train.hidden.empty() ? 1e-3 : 0.0;
    c.selection.taus = {2.0, 8.0, 32.0};
    c.selection.restarts = 2;
    c.selection.sparsa.max_iter = 500;
    if (c.order == OutageOrder::pair) {
      c.generation.n_train = 2;
      c.generation.n_val = 1;
      c.generation.n_test = 5;
    }
  } else {
    throw ConfigError("profile must be 'full' or 'ci', got '" + profile + "'");
  }
  c.selection.sparsa.rel_tol = 1e-5;
}

inline nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json lb = {{"memory", c.train.lbfgs.memory},       {"max_iter", c.train.lbfgs.max_iter},
                       {"grad_tol", c.train.lbfgs.grad_tol},   {"rel_tol", c.train.lbfgs.rel_tol},
                       {"skip_eps", c.train.lbfgs.skip_eps},   {"armijo", c.train.lbfgs.armijo},
                       {"backtrack", c.train.lbfgs.backtrack}};
  const auto& s = c.selection;
  nlohmann::json sel = {{"enabled", s.enabled},
                        {"method", to_string(s.method)},
                        {"buses", s.buses},
                        {"taus", s.taus},
                        {"restarts", s.restarts},
                        {"sparsa",
                         {{"alpha_min", s.sparsa.alpha_min},
                          {"alpha_max", s.sparsa.alpha_max},
                          {"sigma", s.sparsa.sigma},
                          {"rel_tol", s.sparsa.rel_tol},
                          {"max_iter", s.sparsa.max_iter}}},
                        {"preinstalled", s.preinstalled},
                        {"excluded", s.excluded}};
  return {{"schema", run_config_schema},
          {"case", c.case_name},
          {"order", to_string(c.order)},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"generation", to_json(c.generation)},
          {"model",
           {{"hidden", c.train.hidden}, {"init_exponent", c.train.init_exponent}, {"epsilon", c.train.epsilon}}},
          {"lbfgs", lb},
          {"selection", sel},
          {"evaluation", {{"ks", c.ks}}}};
}

/// Reads a configuration document over `base`; absent keys keep base values.
inline RunConfig run_config_from_json(const nlohmann::json& j, RunConfig c = {}) {
  try {
    if (j.value("schema", run_config_schema) != run_config_schema)
      throw ConfigError("unsupported config schema " + std::to_string(j.value("schema", 0)));
    c.case_name = j.value("case", c.case_name);
    if (j.contains("order")) c.order = parse_outage_order(j.at("order").get<std::string>());
    c.seed = j.value("seed", c.seed);
    c.output_dir = j.value("output_dir", c.output_dir);
    if (j.contains("generation")) c.generation = generation_config_from_json(j.at("generation"), c.generation);
    if (j.contains("model")) {
      const auto& m = j.at("model");
      c.train.hidden = m.value("hidden", c.train.hidden);
      c.train.init_exponent = m.value("init_exponent", c.train.init_exponent);
      c.train.epsilon = m.value("epsilon", c.train.epsilon);
    }
    if (j.contains("lbfgs")) {
      const auto& l = j.at("lbfgs");
      auto& lb = c.train.lbfgs;
      lb.memory = l.value("memory", lb.memory);
      lb.max_iter = l.value("max_iter", lb.max_iter);
      lb.grad_tol = l.value("grad_tol", lb.grad_tol);
      lb.rel_tol = l.value("rel_tol", lb.rel_tol);
      lb.skip_eps = l.value("skip_eps", lb.skip_eps);
      lb.armijo = l.value("armijo", lb.armijo);
      lb.backtrack = l.value("backtrack", lb.backtrack);
    }
    if (j.contains("selection")) {
      const auto& s = j.at("selection");
      auto& o = c.selection;
      o.enabled = s.value("enabled", o.enabled);
      if (s.contains("method")) o.method = parse_selection_method(s.at("method").get<std::string>());
      o.buses = s.value("buses", o.buses);
      o.taus = s.value("taus", o.taus);
      o.restarts = s.value("restarts", o.restarts);
      o.preinstalled = s.value("preinstalled", o.preinstalled);
      o.excluded = s.value("excluded", o.excluded);
      if (s.contains("sparsa")) {
        const auto& p = s.at("sparsa");
        o.sparsa.alpha_min = p.value("alpha_min", o.sparsa.alpha_min);
        o.sparsa.alpha_max = p.value("alpha_max", o.sparsa.alpha_max);
        o.sparsa.sigma = p.value("sigma", o.sparsa.sigma);
        o.sparsa.rel_tol = p.value("rel_tol", o.sparsa.rel_tol);
        o.sparsa.max_iter = p.value("max_iter", o.sparsa.max_iter);
      }
    }
    if (j.contains("evaluation")) c.ks = j.at("evaluation").value("ks", c.ks);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return c;
}

inline void validate_run_config(const RunConfig& c) {
  builtin_case_text(c.case_name);
  const auto& g = c.generation;
  if (g.n_train <= 0) throw DataError("n_train must be positive: every class needs training samples");
  if (g.n_val < 0 || g.n_test < 0) throw ConfigError("split sizes must be nonnegative");
  for (int h : c.train.hidden)
    if (h <= 0) throw ConfigError("hidden layer widths must be positive");
  if (c.train.epsilon < 0.0) throw ConfigError("epsilon must be nonnegative");
  if (c.train.lbfgs.max_iter < 0 || c.train.lbfgs.memory < 1) throw ConfigError("invalid L-BFGS settings");
  if (c.ks.empty()) throw ConfigError("at least one k is required");
  if (c.selection.enabled) {
    if (c.selection.buses < 1) throw ConfigError("selection needs at least one bus");
    if (c.selection.restarts < 1 || c.selection.taus.empty()) throw ConfigError("selection needs taus and restarts");
    if (c.generation.n_val <= 0) throw ConfigError("selection needs a validation split");
  }
}

struct ArtifactRecord {
  std::string path;  // relative to the output directory
  std::string sha256;
  std::uintmax_t bytes = 0;
};

struct RunManifest {
  std::string config_hash;
  std::vector<ArtifactRecord> artifacts;
  std::vector<std::pair<std::string, double>> timings;  // seconds per stage
  nlohmann::json stages = nlohmann::json::object();     // solver reports per stage
  nlohmann::json versions;
};

inline nlohmann::json to_json(const TerminationReport& r) {
  return {{"reason", to_string(r.reason)}, {"iterations", r.iterations}, {"objective", r.objective},
          {"grad_norm", r.grad_norm},       {"evaluations", r.evaluations}, {"skipped_pairs", r.skipped_pairs}};
}

inline nlohmann::json to_json(const RunManifest& m) {
  nlohmann::json arts = nlohmann::json::array();
  for (const auto& a : m.artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}, {"bytes", a.bytes}});
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [k, v] : m.timings) t[k] = v;
  return {{"config_hash", m.config_hash}, {"artifacts", arts}, {"timings", t}, {"stages", m.stages},
          {"versions", m.versions}};
}

inline nlohmann::json version_info() {
  std::string compiler = "unknown";
#if defined(__clang__)
  compiler = "clang " __clang_version__;
#elif defined(__GNUC__)
  compiler = "gcc " + std::to_string(__GNUC__) + "." + std::to_string(__GNUC_MINOR__) + "." +
             std::to_string(__GNUC_PATCHLEVEL__);
#endif
  return {{"gridsense", GRIDSENSE_VERSION},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"compiler", compiler}};
}

namespace detail {

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  os << text;
  if (!os) throw DataError("cannot write " + p.string());
}

}  // namespace detail

/// gen -> train (or select + retrain) -> evaluate. Artifacts land in
/// config.output_dir; manifest.json lists each with its SHA-256.
inline RunManifest run_pipeline(const RunConfig& cfg) {
  validate_run_config(cfg);
  namespace fs = std::filesystem;
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);

  RunManifest man;
  man.versions = version_info();
  const std::string config_text = to_json(cfg).dump(2) + "\n";
  man.config_hash = sha256_hex(config_text);
  detail::write_text(out / "config.json", config_text);

  auto clock = std::chrono::steady_clock::now();
  auto lap = [&](const char* stage) {
    const auto now = std::chrono::steady_clock::now();
    man.timings.emplace_back(stage, std::chrono::duration<double>(now - clock).count());
    clock = now;
  };

  GenerationConfig gen = cfg.generation;
  gen.seed = derive_seed(cfg.seed, {0x67656e});
  gen.threads = cfg.threads;
  const PowerGrid grid = load_builtin_case(cfg.case_name);
  const Dataset ds = generate_dataset(grid, cfg.order, gen);
  save_dataset(ds, out / "dataset");
  lap("generate");

  ModelCheckpoint ckpt;
  ckpt.epsilon = cfg.train.epsilon;
  ckpt.grid = grid.name;
  const auto train_seed = derive_seed(cfg.seed, {0x747261696e});
  if (cfg.selection.enabled) {
    SelectionConfig sc;
    sc.train = cfg.train;
    sc.sparsa = cfg.selection.sparsa;
    sc.preinstalled = cfg.selection.preinstalled;
    sc.excluded = cfg.selection.excluded;
    auto tuned = tune_tau(ds, cfg.selection.method, cfg.selection.buses, sc, cfg.selection.taus,
                          cfg.selection.restarts, train_seed, cfg.threads);
    detail::write_text(out / "selection.json", to_json(tuned.best).dump(2) + "\n");
    std::ostringstream sweep;
    write_sweep_csv(sweep, tuned.sweep);
    detail::write_text(out / "sweep.csv", sweep.str());
    ckpt.model = std::move(tuned.retrained.model);
    ckpt.selected_buses = tuned.retrained.buses;
    man.stages["train"] = to_json(tuned.retrained.report);
    lap("select");
  } else {
    fs::remove(out / "selection.json");
    fs::remove(out / "sweep.csv");
    auto trained = finalize_model(ds, {}, cfg.train, train_seed);
    ckpt.model = std::move(trained.model);
    man.stages["train"] = to_json(trained.report);
    lap("train");
  }
  if (!ckpt.model.params.allFinite()) throw SolverError("training produced non-finite weights");
  save_checkpoint(ckpt, out / "model.bin");

  nlohmann::json reports = nlohmann::json::object();
  if (!ds.validation.empty()) reports["validation"] = to_json(evaluate(ckpt.model, ds.validation, "validation", cfg.ks));
  if (!ds.test.empty()) reports["test"] = to_json(evaluate(ckpt.model, ds.test, "test", cfg.ks));
  detail::write_text(out / "eval.json", reports.dump(2) + "\n");
  lap("evaluate");

  for (const char* rel : {"config.json", "dataset/manifest.json", "dataset/train.bin", "dataset/validation.bin",
                          "dataset/test.bin", "selection.json", "sweep.csv", "model.bin", "eval.json"}) {
    const fs::path p = out / rel;
    if (!fs::exists(p)) continue;
    man.artifacts.push_back({rel, sha256_file(p), fs::file_size(p)});
  }
  detail::write_text(out / "manifest.json", to_json(man).dump(2) + "\n");
  return man;
}

}  // namespace gridsense
