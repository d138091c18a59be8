#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "gridsense/gridsense.hpp"

namespace fs = std::filesystem;
using namespace gridsense;

namespace {

struct GridSource {
  std::string case_name = "case14";
  std::string file;

  void add_to(CLI::App* app) {
    app->add_option("--case", case_name, "Builtin case (case14, case30, case57, case118)");
    app->add_option("--file", file, "MATPOWER case file (overrides --case)");
  }

  PowerGrid load() const {
    if (file.empty()) return load_builtin_case(case_name);
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot open case file " + file);
    std::ostringstream os;
    os << is.rdbuf();
    auto parsed = parse_matpower_case_verbose(os.str());
    for (const auto& w : parsed.warnings) std::cerr << "warning: " << w << '\n';
    if (parsed.grid.name.empty()) parsed.grid.name = fs::path(file).stem().string();
    return parsed.grid;
  }
};

std::vector<BusPair> parse_outage_list(const std::string& text) {
  std::vector<BusPair> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) throw ConfigError("outage '" + item + "' must look like FROM-TO");
    try {
      out.emplace_back(std::stoi(item.substr(0, dash)), std::stoi(item.substr(dash + 1)));
    } catch (const std::exception&) {
      throw ConfigError("outage '" + item + "' must look like FROM-TO");
    }
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& text) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoi(item));
    } catch (const std::exception&) {
      throw ConfigError("'" + item + "' is not an integer");
    }
  }
  return out;
}

std::vector<double> parse_tau_grid(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("tau grid must look like LO:HI (exponents of 2)");
  try {
    return tau_grid(std::stoi(text.substr(0, colon)), std::stoi(text.substr(colon + 1)));
  } catch (const std::invalid_argument&) {
    throw ConfigError("tau grid must look like LO:HI (exponents of 2)");
  }
}

const Split& pick_split(const Dataset& ds, const std::string& name) {
  if (name == "train") return ds.train;
  if (name == "validation") return ds.validation;
  if (name == "test") return ds.test;
  throw ConfigError("split must be train, validation or test, got '" + name + "'");
}

void write_json(const std::string& path, const nlohmann::json& j) {
  if (path.empty() || path == "-") {
    std::cout << j.dump(2) << '\n';
    return;
  }
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path);
  os << j.dump(2) << '\n';
  if (!os) throw DataError("cannot write " + path);
}

std::ofstream open_out(const std::string& path) {
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  std::ofstream os(path);
  if (!os) throw DataError("cannot write " + path);
  os.precision(17);
  return os;
}

/// Keeps only the samples whose label is in `classes` (all when empty).
std::pair<Eigen::MatrixXd, std::vector<int>> filter_classes(const Split& s, const std::vector<int>& classes) {
  if (classes.empty()) return {s.features, s.labels};
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (std::find(classes.begin(), classes.end(), s.labels[static_cast<std::size_t>(i)]) != classes.end()) keep.push_back(i);
  Eigen::MatrixXd x(s.features.rows(), static_cast<Eigen::Index>(keep.size()));
  std::vector<int> y;
  for (std::size_t j = 0; j < keep.size(); ++j) {
    x.col(static_cast<Eigen::Index>(j)) = s.features.col(keep[j]);
    y.push_back(s.labels[static_cast<std::size_t>(keep[j])]);
  }
  return {x, y};
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return 2;
  if (dynamic_cast<const DataError*>(&e) || dynamic_cast<const GridError*>(&e) ||
      dynamic_cast<const ParseError*>(&e))
    return 3;
  if (dynamic_cast<const SolverError*>(&e)) return 4;
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Line-outage identification from PMU data"};
  app.set_version_flag("--version", std::string(GRIDSENSE_VERSION));
  app.require_subcommand(1);

  // grid ---------------------------------------------------------------
  auto* grid_cmd = app.add_subcommand("grid", "Inspect a power grid");
  grid_cmd->require_subcommand(1);
  auto* dump_cmd = grid_cmd->add_subcommand("dump", "Print a case as JSON or MATPOWER text");
  GridSource dump_src;
  dump_src.add_to(dump_cmd);
  std::string dump_format = "json";
  dump_cmd->add_option("--format", dump_format, "json or matpower")->check(CLI::IsMember({"json", "matpower"}));
  dump_cmd->callback([&] {
    const auto g = dump_src.load();
    validate_grid(g);
    if (dump_format == "json")
      std::cout << to_json(g).dump(2) << '\n';
    else
      std::cout << to_matpower_text(g);
  });

  // pf -----------------------------------------------------------------
  auto* pf_cmd = app.add_subcommand("pf", "Solve the AC power flow");
  GridSource pf_src;
  pf_src.add_to(pf_cmd);
  std::string pf_outage;
  double pf_scale = 1.0;
  PowerFlowOptions pf_opts;
  pf_cmd->add_option("--outage", pf_outage, "Lines to remove, FROM-TO[,FROM-TO]");
  pf_cmd->add_option("--scale", pf_scale, "Demand and dispatch multiplier")->check(CLI::PositiveNumber);
  pf_cmd->add_option("--tol", pf_opts.tol, "Mismatch tolerance (p.u.)");
  pf_cmd->add_option("--max-iter", pf_opts.max_iter, "Newton iteration cap");
  pf_cmd->add_flag("--q-limits", pf_opts.enforce_q_limits, "Switch PV buses to PQ at generator Q limits");
  pf_cmd->callback([&] {
    auto g = pf_src.load();
    validate_grid(g);
    nlohmann::json j;
    if (!pf_outage.empty()) {
      const auto lines = parse_outage_list(pf_outage);
      std::optional<PowerGrid> out;
      try {
        out = apply_outage(g, lines);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
      }
      if (!out) {
        j["status"] = to_string(PowerFlowStatus::structurally_infeasible);
        std::cout << j.dump(2) << '\n';
        throw DataError("outage leaves the network structurally infeasible");
      }
      g = std::move(*out);
    }
    auto demand = baseline_demand(g);
    demand.p_load *= pf_scale;
    demand.q_load *= pf_scale;
    demand.gen_scale = pf_scale;
    const auto res = solve_ac_power_flow(g, demand, pf_opts);
    std::cout << to_json(res, g).dump(2) << '\n';
    if (!res.converged()) throw DataError(std::string("power flow did not converge: ") + to_string(res.status));
  });

  // gen ----------------------------------------------------------------
  auto* gen_cmd = app.add_subcommand("gen", "Generate an outage dataset");
  GridSource gen_src;
  gen_src.add_to(gen_cmd);
  std::string gen_order = "single", gen_out, gen_profile = "full";
  GenerationConfig gen_cfg;
  gen_cmd->add_option("--order", gen_order, "single or double")->check(CLI::IsMember({"single", "double"}));
  gen_cmd->add_option("--out", gen_out, "Output directory")->required();
  gen_cmd->add_option("--seed", gen_cfg.seed, "Master seed");
  gen_cmd->add_option("--profile", gen_profile, "full or ci")->check(CLI::IsMember({"full", "ci"}));
  auto* n_train_opt = gen_cmd->add_option("--n-train", gen_cfg.n_train, "Training points per (outage, scale)");
  auto* n_val_opt = gen_cmd->add_option("--n-val", gen_cfg.n_val, "Validation points per (outage, scale)");
  auto* n_test_opt = gen_cmd->add_option("--n-test", gen_cfg.n_test, "Test points per (outage, scale)");
  gen_cmd->add_option("--scales", gen_cfg.scales, "Demand scale factors")->delimiter(',');
  gen_cmd->add_flag("--q-limits", gen_cfg.pf.enforce_q_limits, "Enforce generator Q limits");
  gen_cmd->add_option("--threads", gen_cfg.threads, "Worker threads");
  gen_cmd->callback([&] {
    const auto g = gen_src.load();
    validate_grid(g);
    const auto order = parse_outage_order(gen_order);
    RunConfig rc;
    rc.order = order;
    rc.generation = gen_cfg;
    apply_profile(rc, gen_profile);
    GenerationConfig cfg = gen_cfg;
    if (!n_train_opt->count()) cfg.n_train = rc.generation.n_train;
    if (!n_val_opt->count()) cfg.n_val = rc.generation.n_val;
    if (!n_test_opt->count()) cfg.n_test = rc.generation.n_test;
    const auto ds = generate_dataset(g, order, cfg);
    save_dataset(ds, gen_out);
    const auto& st = ds.stats;
    std::cout << nlohmann::json{{"classes", ds.class_count()},
                                {"candidates", st.candidates},
                                {"infeasible_classes", st.infeasible_classes},
                                {"train", ds.train.size()},
                                {"validation", ds.validation.size()},
                                {"test", ds.test.size()},
                                {"features", ds.feature_count()},
                                {"out", gen_out}}
                     .dump(2)
              << '\n';
  });

  // train --------------------------------------------------------------
  auto* train_cmd = app.add_subcommand("train", "Train a classifier on a dataset");
  std::string train_data, train_out, train_hidden = "100", train_buses, train_trace, train_profile = "ci";
  bool train_linear = false;
  std::uint64_t train_seed = 1;
  int train_max_iter = -1;
  double train_eps = 1e-8, train_init = 0.0;
  train_cmd->add_option("--data", train_data, "Dataset directory")->required();
  train_cmd->add_option("--out", train_out, "Model file")->required();
  train_cmd->add_option("--hidden", train_hidden, "Hidden layer widths, comma separated");
  train_cmd->add_flag("--linear", train_linear, "Train the linear (MLR) model");
  train_cmd->add_option("--buses", train_buses, "Instrumented buses, comma separated (default all)");
  train_cmd->add_option("--seed", train_seed, "Initialization seed");
  train_cmd->add_option("--profile", train_profile, "full or ci iteration budget")->check(CLI::IsMember({"full", "ci"}));
  train_cmd->add_option("--max-iter", train_max_iter, "L-BFGS iteration cap (overrides the profile)");
  train_cmd->add_option("--epsilon", train_eps, "Weight decay coefficient");
  train_cmd->add_option("--init-exponent", train_init, "Initial weight scale exponent t (a = 10^-t)");
  train_cmd->add_option("--trace", train_trace, "Per-iteration CSV trace");
  train_cmd->callback([&] {
    const auto ds = load_dataset(train_data);
    RunConfig rc;
    rc.train.hidden = train_linear ? std::vector<int>{} : parse_int_list(train_hidden);
    apply_profile(rc, train_profile);
    rc.train.epsilon = train_eps;
    rc.train.init_exponent = train_init;
    if (train_max_iter >= 0) rc.train.lbfgs.max_iter = train_max_iter;
    std::vector<IterationRecord> trace;
    LbfgsObserver obs;
    if (!train_trace.empty()) obs = [&](const IterationRecord& r, const LbfgsState&) { trace.push_back(r); };
    const auto buses = train_buses.empty() ? std::vector<int>{} : parse_int_list(train_buses);
    auto trained = finalize_model(ds, buses, rc.train, train_seed, obs);
    if (!trained.model.params.allFinite()) throw SolverError("training produced non-finite weights");
    save_checkpoint({trained.model, train_eps, buses, ds.grid_name}, train_out);
    if (!train_trace.empty()) {
      auto os = open_out(train_trace);
      write_trace_csv(os, trace);
    }
    std::cout << to_json(trained.report).dump(2) << '\n';
  });

  // select -------------------------------------------------------------
  auto* sel_cmd = app.add_subcommand("select", "Choose PMU locations");
  std::string sel_data, sel_out, sel_method = "greedy", sel_grid = "-8:8", sel_hidden = "100", sel_pre, sel_ex,
                                 sel_profile = "ci";
  int sel_buses = 3, sel_restarts = -1, sel_sparsa_iter = -1, sel_max_iter = -1;
  bool sel_linear = false;
  std::uint64_t sel_seed = 1;
  unsigned sel_threads = 1;
  sel_cmd->add_option("--data", sel_data, "Dataset directory")->required();
  sel_cmd->add_option("--out", sel_out, "Output directory")->required();
  sel_cmd->add_option("--method", sel_method, "greedy or lasso")->check(CLI::IsMember({"greedy", "lasso"}));
  sel_cmd->add_option("--buses", sel_buses, "Number of PMUs to place");
  sel_cmd->add_option("--tau-grid", sel_grid, "Exponent range LO:HI of the tau grid 2^LO..2^HI");
  sel_cmd->add_option("--restarts", sel_restarts, "Random starts per tau (overrides the profile)");
  sel_cmd->add_option("--hidden", sel_hidden, "Hidden layer widths, comma separated");
  sel_cmd->add_flag("--linear", sel_linear, "Use the linear (MLR) model");
  sel_cmd->add_option("--preinstalled", sel_pre, "Buses that already carry PMUs");
  sel_cmd->add_option("--excluded", sel_ex, "Buses that cannot carry PMUs");
  sel_cmd->add_option("--seed", sel_seed, "Master seed");
  sel_cmd->add_option("--profile", sel_profile, "full or ci budgets")->check(CLI::IsMember({"full", "ci"}));
  sel_cmd->add_option("--sparsa-max-iter", sel_sparsa_iter, "SpaRSA iteration cap per solve");
  sel_cmd->add_option("--max-iter", sel_max_iter, "L-BFGS iteration cap for retraining");
  sel_cmd->add_option("--threads", sel_threads, "Worker threads");
  sel_cmd->callback([&] {
    const auto ds = load_dataset(sel_data);
    RunConfig rc;
    rc.train.hidden = sel_linear ? std::vector<int>{} : parse_int_list(sel_hidden);
    apply_profile(rc, sel_profile);
    SelectionConfig sc;
    sc.train = rc.train;
    sc.sparsa = rc.selection.sparsa;
    if (sel_sparsa_iter >= 0) sc.sparsa.max_iter = sel_sparsa_iter;
    if (sel_max_iter >= 0) sc.train.lbfgs.max_iter = sel_max_iter;
    if (!sel_pre.empty()) sc.preinstalled = parse_int_list(sel_pre);
    if (!sel_ex.empty()) sc.excluded = parse_int_list(sel_ex);
    const auto taus = parse_tau_grid(sel_grid);
    const int restarts = sel_restarts >= 0 ? sel_restarts : rc.selection.restarts;
    auto tuned = tune_tau(ds, parse_selection_method(sel_method), sel_buses, sc, taus, restarts, sel_seed, sel_threads);
    fs::create_directories(sel_out);
    write_json((fs::path(sel_out) / "selection.json").string(), to_json(tuned.best));
    auto os = open_out((fs::path(sel_out) / "sweep.csv").string());
    write_sweep_csv(os, tuned.sweep);
    save_checkpoint({tuned.retrained.model, sc.train.epsilon, tuned.retrained.buses, ds.grid_name},
                    fs::path(sel_out) / "model.bin");
    std::cout << to_json(tuned.best).dump(2) << '\n';
  });

  // evaluate -----------------------------------------------------------
  auto* eval_cmd = app.add_subcommand("evaluate", "Top-k error of a model on a split");
  std::string eval_data, eval_model, eval_split = "test", eval_ks = "1,2", eval_out;
  eval_cmd->add_option("--data", eval_data, "Dataset directory")->required();
  eval_cmd->add_option("--model", eval_model, "Model file")->required();
  eval_cmd->add_option("--split", eval_split, "train, validation or test");
  eval_cmd->add_option("--ks", eval_ks, "Comma separated k values");
  eval_cmd->add_option("--out", eval_out, "JSON report path (default stdout)");
  eval_cmd->callback([&] {
    const auto ds = load_dataset(eval_data);
    const auto ck = load_checkpoint(eval_model);
    write_json(eval_out, to_json(evaluate(ck.model, pick_split(ds, eval_split), eval_split, parse_int_list(eval_ks))));
  });

  // analyze ------------------------------------------------------------
  auto* an_cmd = app.add_subcommand("analyze", "Diagnostics: eval, clusters, pca, activations");
  an_cmd->require_subcommand(1);
  std::string an_data, an_model, an_split = "test", an_out, an_stage = "raw", an_buses, an_axes = "1,2", an_classes,
                                  an_ks = "1,2";
  SaturationThresholds an_th;
  auto common = [&](CLI::App* c, bool need_model) {
    c->add_option("--data", an_data, "Dataset directory")->required();
    auto* m = c->add_option("--model", an_model, "Model file");
    if (need_model) m->required();
    c->add_option("--split", an_split, "train, validation or test");
    c->add_option("--out", an_out, "Output CSV path")->required();
  };
  auto* an_eval = an_cmd->add_subcommand("eval", "Per-class error table");
  common(an_eval, true);
  an_eval->add_option("--ks", an_ks, "Comma separated k values");
  an_eval->callback([&] {
    const auto ds = load_dataset(an_data);
    const auto ck = load_checkpoint(an_model);
    const auto rep = evaluate(ck.model, pick_split(ds, an_split), an_split, parse_int_list(an_ks));
    auto os = open_out(an_out);
    write_eval_csv(os, rep);
    write_json(an_out + ".json", to_json(rep));
  });
  auto* an_clusters = an_cmd->add_subcommand("clusters", "Within-cluster and between-centroid distances");
  common(an_clusters, false);
  an_clusters->add_option("--stage", an_stage, "raw, selected or hidden");
  an_clusters->add_option("--buses", an_buses, "Selected buses (default: the model's, else all)");
  an_clusters->callback([&] {
    const auto ds = load_dataset(an_data);
    const auto& split = pick_split(ds, an_split);
    const auto stage = parse_cluster_stage(an_stage);
    std::optional<ModelCheckpoint> ck;
    if (!an_model.empty()) ck = load_checkpoint(an_model);
    std::vector<int> buses = !an_buses.empty() ? parse_int_list(an_buses) : (ck ? ck->selected_buses : std::vector<int>{});
    const auto rep = stage_representation(ds, split.features, stage, buses, ck ? &ck->model : nullptr);
    const auto st = cluster_statistics(rep, split.labels, ds.class_count());
    auto os = open_out(an_out);
    os << "stage,within_mean,within_std,between_mean,between_std,centroid_pairs\n"
       << to_string(stage) << ',' << st.within_mean << ',' << st.within_std << ',' << st.between_mean << ','
       << st.between_std << ',' << st.centroid_pairs << '\n';
    auto meta = to_json(st);
    meta["stage"] = to_string(stage);
    meta["split"] = an_split;
    meta["buses"] = buses;
    write_json(an_out + ".json", meta);
  });
  auto* an_pca = an_cmd->add_subcommand("pca", "Project samples on two principal axes");
  common(an_pca, false);
  an_pca->add_option("--axes", an_axes, "Two 1-based component indices, e.g. 1,5");
  an_pca->add_option("--classes", an_classes, "Class ids to keep, comma separated (default all)");
  an_pca->add_option("--stage", an_stage, "raw, selected or hidden");
  an_pca->add_option("--buses", an_buses, "Selected buses (default: the model's, else all)");
  an_pca->callback([&] {
    const auto ds = load_dataset(an_data);
    const auto axes = parse_int_list(an_axes);
    if (axes.size() != 2) throw ConfigError("--axes needs exactly two indices");
    const auto stage = parse_cluster_stage(an_stage);
    std::optional<ModelCheckpoint> ck;
    if (!an_model.empty()) ck = load_checkpoint(an_model);
    std::vector<int> buses = !an_buses.empty() ? parse_int_list(an_buses) : (ck ? ck->selected_buses : std::vector<int>{});
    const auto [x, y] = filter_classes(pick_split(ds, an_split), an_classes.empty() ? std::vector<int>{} : parse_int_list(an_classes));
    const auto rep = stage_representation(ds, x, stage, buses, ck ? &ck->model : nullptr);
    const auto pca = pca_fit(rep);
    const auto xy = pca_project(pca, rep, {axes[0], axes[1]});
    auto os = open_out(an_out);
    os << "class_id,pc" << axes[0] << ",pc" << axes[1] << '\n';
    for (Eigen::Index i = 0; i < xy.rows(); ++i) os << y[static_cast<std::size_t>(i)] << ',' << xy(i, 0) << ',' << xy(i, 1) << '\n';
    const Eigen::VectorXd ratio = pca.explained_variance_ratio();
    write_json(an_out + ".json", {{"axes", axes},
                                  {"stage", to_string(stage)},
                                  {"samples", xy.rows()},
                                  {"explained_variance_ratio",
                                   std::vector<double>(ratio.data(), ratio.data() + ratio.size())}});
  });
  auto* an_act = an_cmd->add_subcommand("activations", "Hidden activation map and saturated nodes");
  common(an_act, true);
  an_act->add_option("--max-range", an_th.max_range, "Saturation: activation range below this");
  an_act->add_option("--min-abs-mean", an_th.min_abs_mean, "Saturation: |mean| above this");
  an_act->callback([&] {
    const auto ds = load_dataset(an_data);
    const auto ck = load_checkpoint(an_model);
    const auto map = hidden_activation_map(ck.model, pick_split(ds, an_split).features, an_th);
    auto os = open_out(an_out);
    for (Eigen::Index j = 0; j < map.activations.cols(); ++j) os << (j ? "," : "") << "node" << j + 1;
    os << '\n';
    for (Eigen::Index i = 0; i < map.activations.rows(); ++i) {
      for (Eigen::Index j = 0; j < map.activations.cols(); ++j) os << (j ? "," : "") << map.activations(i, j);
      os << '\n';
    }
    std::vector<int> saturated;
    for (std::size_t j = 0; j < map.saturated.size(); ++j)
      if (map.saturated[j]) saturated.push_back(static_cast<int>(j) + 1);
    write_json(an_out + ".json", {{"nodes", map.activations.cols()},
                                  {"samples", map.activations.rows()},
                                  {"saturated_nodes", saturated},
                                  {"max_range", an_th.max_range},
                                  {"min_abs_mean", an_th.min_abs_mean}});
  });

  // run ----------------------------------------------------------------
  auto* run_cmd = app.add_subcommand("run", "Run the full pipeline from a JSON config");
  std::string run_config, run_profile, run_out;
  std::uint64_t run_seed = 0;
  unsigned run_threads = 0;
  run_cmd->add_option("--config", run_config, "Config file")->required();
  run_cmd->add_option("--profile", run_profile, "Apply a budget profile (full or ci) before the config keys");
  auto* run_seed_opt = run_cmd->add_option("--seed", run_seed, "Override the master seed");
  run_cmd->add_option("--out", run_out, "Override the output directory");
  run_cmd->add_option("--threads", run_threads, "Worker threads");
  run_cmd->callback([&] {
    std::ifstream is(run_config);
    if (!is) throw ConfigError("cannot open config " + run_config);
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    RunConfig rc = run_config_from_json(j);
    if (!run_profile.empty()) {
      apply_profile(rc, run_profile);
      rc = run_config_from_json(j, rc);
    }
    if (run_seed_opt->count()) rc.seed = run_seed;
    if (!run_out.empty()) rc.output_dir = run_out;
    if (run_threads) rc.threads = run_threads;
    std::cout << to_json(run_pipeline(rc)).dump(2) << '\n';
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return 0;
}
