#pragma once

// PMU placement: network training on a bus subset, the greedy group-sparse
// heuristic, direct group-lasso with a tau search, and the tau/restart sweep.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsense/analysis.hpp"
#include "gridsense/datagen.hpp"
#include "gridsense/model.hpp"
#include "gridsense/optim.hpp"
#include "gridsense/util.hpp"

namespace gridsense {

struct TrainConfig {
  std::vector<int> hidden{100};  // hidden layer widths; empty gives the linear (MLR) model
  double init_exponent = 0.0;
  double epsilon = 1e-8;
  LbfgsConfig lbfgs{};
};

inline std::vector<int> network_dims(const Dataset& ds, const std::vector<int>& hidden) {
  std::vector<int> dims{ds.feature_count()};
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(ds.class_count());
  return dims;
}

/// Flat indices of the W_1 columns that feed from sensor features of buses
/// outside `keep` (gen_level and bias columns are never masked).
inline std::vector<Eigen::Index> masked_coordinates(const NetworkModel& m, const Dataset& ds,
                                                    const std::vector<int>& keep) {
  const std::set<int> kept(keep.begin(), keep.end());
  std::vector<Eigen::Index> out;
  const Eigen::Index rows = m.dims[1];
  for (const auto& g : ds.groups) {
    if (kept.count(g.bus_id)) continue;
    for (int f : g.features)
      for (Eigen::Index r = 0; r < rows; ++r) out.push_back(static_cast<Eigen::Index>(f) * rows + r);
  }
  return out;
}

inline SmoothFunction training_objective(const NetworkModel& shape, const Split& train, double epsilon) {
  auto ws = std::make_shared<Workspace>();
  auto m = std::make_shared<NetworkModel>(shape);
  return [m, ws, &train, epsilon](const Eigen::VectorXd& p, Eigen::VectorXd& g) {
    m->params = p;
    return loss_and_gradient(*m, train.features, train.labels, epsilon, g, *ws);
  };
}

struct TrainedModel {
  NetworkModel model;
  TerminationReport report;
  std::vector<int> buses;  // instrumented buses the model may read
};

inline void check_buses(const Dataset& ds, const std::vector<int>& buses) {
  std::set<int> seen;
  for (int b : buses) {
    ds.group_for_bus(b);
    if (!seen.insert(b).second) throw ConfigError("bus " + std::to_string(b) + " listed twice");
  }
}

/// Trains the unregularized network with W_1 columns of unselected buses held
/// at zero. An empty bus list means every bus.
inline TrainedModel finalize_model(const Dataset& ds, const std::vector<int>& buses, const TrainConfig& cfg,
                                   std::uint64_t seed, const LbfgsObserver& observer = {}) {
  check_buses(ds, buses);
  const std::vector<int> keep = buses.empty() ? ds.bus_ids : buses;
  TrainedModel out;
  out.buses = keep;
  out.model = init_weights(network_dims(ds, cfg.hidden), cfg.init_exponent, seed);
  LbfgsConfig lc = cfg.lbfgs;
  const auto masked = masked_coordinates(out.model, ds, keep);
  lc.fixed_zero.insert(lc.fixed_zero.end(), masked.begin(), masked.end());
  auto res = lbfgs_minimize(training_objective(out.model, ds.train, cfg.epsilon), out.model.params, lc, observer);
  out.model.params = std::move(res.x);
  out.report = res.report;
  return out;
}

// ---------------------------------------------------------------------------

enum class SelectionMethod { greedy, lasso };

inline const char* to_string(SelectionMethod m) { return m == SelectionMethod::greedy ? "greedy" : "lasso"; }

inline SelectionMethod parse_selection_method(const std::string& s) {
  if (s == "greedy") return SelectionMethod::greedy;
  if (s == "lasso") return SelectionMethod::lasso;
  throw ConfigError("selection method must be 'greedy' or 'lasso', got '" + s + "'");
}

struct SelectionConfig {
  TrainConfig train{};          // network shape, epsilon, and the retraining solver
  SparsaConfig sparsa{};        // tau is set per run
  std::vector<int> preinstalled;  // buses already instrumented: never penalized, never counted
  std::vector<int> excluded;      // buses that cannot host a PMU: held at zero
};

struct SelectionStep {
  int bus = 0;
  double group_norm = 0.0;
  TerminationReport solve;
};

struct SelectionResult {
  SelectionMethod method = SelectionMethod::greedy;
  std::vector<int> selected_buses;
  double tau = 0.0;
  bool terminated_early = false;  // greedy stopped at a zero group norm
  bool exact_count = true;        // lasso reached the requested count
  int requested = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<SelectionStep> steps;
  std::optional<double> validation_error;  // top-1 on the validation split after retraining
  NetworkModel model;                        // regularized solution at termination
};

namespace detail {

struct GroupSetup {
  GroupStructure groups;
  std::vector<int> candidates;  // group indices that may be selected
  std::vector<Eigen::Index> fixed_zero;
};

inline GroupSetup group_setup(const Dataset& ds, const NetworkModel& shape, const SelectionConfig& cfg) {
  check_buses(ds, cfg.preinstalled);
  check_buses(ds, cfg.excluded);
  const std::set<int> pre(cfg.preinstalled.begin(), cfg.preinstalled.end());
  const std::set<int> ex(cfg.excluded.begin(), cfg.excluded.end());
  for (int b : pre)
    if (ex.count(b)) throw ConfigError("bus " + std::to_string(b) + " is both preinstalled and excluded");
  std::vector<std::vector<int>> feature_groups;
  for (const auto& g : ds.groups) feature_groups.push_back(g.features);
  GroupSetup s;
  s.groups.groups = weight_groups(shape, feature_groups);
  for (std::size_t i = 0; i < ds.groups.size(); ++i) {
    const int bus = ds.groups[i].bus_id;
    if (ex.count(bus)) {
      const auto& idx = s.groups.groups[i];
      s.fixed_zero.insert(s.fixed_zero.end(), idx.begin(), idx.end());
    } else if (!pre.count(bus)) {
      s.candidates.push_back(static_cast<int>(i));
    }
  }
  return s;
}

}  // namespace detail

/// Greedy heuristic: solve the group-regularized problem over the current
/// candidate set, move the candidate with the largest W_1 group norm into the
/// selection, warm-start the next solve from this solution, and stop at
/// `max_groups` or when every candidate norm is zero.
inline SelectionResult greedy_select(const Dataset& ds, double tau, int max_groups, const SelectionConfig& cfg,
                                     std::uint64_t seed) {
  NetworkModel m = init_weights(network_dims(ds, cfg.train.hidden), cfg.train.init_exponent, seed);
  auto setup = detail::group_setup(ds, m, cfg);
  if (max_groups < 0 || max_groups > static_cast<int>(setup.candidates.size()))
    throw ConfigError("cannot select " + std::to_string(max_groups) + " buses from " +
                      std::to_string(setup.candidates.size()) + " candidates");
  SelectionResult r;
  r.method = SelectionMethod::greedy;
  r.tau = tau;
  r.requested = max_groups;
  r.seeds = {seed};

  SparsaConfig sc = cfg.sparsa;
  sc.tau = tau;
  sc.fixed_zero.insert(sc.fixed_zero.end(), setup.fixed_zero.begin(), setup.fixed_zero.end());
  const auto f = training_objective(m, ds.train, cfg.train.epsilon);
  setup.groups.active = setup.candidates;
  for (int k = 0; k < max_groups; ++k) {
    auto res = sparsa_minimize(f, m.params, setup.groups, sc);
    m.params = std::move(res.x);
    int best = -1;
    double best_norm = 0.0;
    for (int gi : setup.groups.active) {
      const double nrm = res.group_norms[static_cast<std::size_t>(gi)];
      if (best < 0 || nrm > best_norm) {
        best = gi;
        best_norm = nrm;
      }
    }
    if (best < 0 || best_norm == 0.0) {
      r.terminated_early = true;
      break;
    }
    std::erase(setup.groups.active, best);
    r.selected_buses.push_back(ds.groups[static_cast<std::size_t>(best)].bus_id);
    r.steps.push_back({r.selected_buses.back(), best_norm, res.report});
  }
  r.model = std::move(m);
  return r;
}

/// Direct group-lasso: bisection on tau until the number of nonzero candidate
/// groups equals `target` or the bracket is narrower than `width_tol`. Every
/// solve starts from the same seeded point. Without an exact hit the closest
/// count seen is returned with exact_count = false.
inline SelectionResult lasso_select(const Dataset& ds, int target, const SelectionConfig& cfg, std::uint64_t seed,
                                    double tau_lo = 0.0, double tau_hi = 256.0, double width_tol = 1e-7) {
  const NetworkModel start = init_weights(network_dims(ds, cfg.train.hidden), cfg.train.init_exponent, seed);
  auto setup = detail::group_setup(ds, start, cfg);
  if (target < 0 || target > static_cast<int>(setup.candidates.size()))
    throw ConfigError("cannot select " + std::to_string(target) + " buses from " +
                      std::to_string(setup.candidates.size()) + " candidates");
  if (!(tau_lo >= 0.0 && tau_hi > tau_lo)) throw ConfigError("invalid tau bracket");
  setup.groups.active = setup.candidates;
  const auto f = training_objective(start, ds.train, cfg.train.epsilon);

  struct Solve {
    double tau;
    std::vector<int> nonzero;  // group indices, by decreasing norm
    NetworkModel model;
    TerminationReport report;
    std::vector<double> norms;
  };
  auto solve = [&](double tau) {
    SparsaConfig sc = cfg.sparsa;
    sc.tau = tau;
    sc.fixed_zero.insert(sc.fixed_zero.end(), setup.fixed_zero.begin(), setup.fixed_zero.end());
    auto res = sparsa_minimize(f, start.params, setup.groups, sc);
    Solve s{tau, {}, start, res.report, res.group_norms};
    s.model.params = std::move(res.x);
    for (int gi : setup.candidates)
      if (res.group_norms[static_cast<std::size_t>(gi)] > 0.0) s.nonzero.push_back(gi);
    std::stable_sort(s.nonzero.begin(), s.nonzero.end(), [&](int a, int b) {
      return res.group_norms[static_cast<std::size_t>(a)] > res.group_norms[static_cast<std::size_t>(b)];
    });
    return s;
  };

  std::optional<Solve> best;
  auto consider = [&](Solve s) {
    const auto miss = [&](const Solve& x) { return std::abs(static_cast<int>(x.nonzero.size()) - target); };
    if (!best || miss(s) < miss(*best)) best = std::move(s);
  };
  double lo = tau_lo, hi = tau_hi;
  for (;;) {
    const double mid = 0.5 * (lo + hi);
    Solve s = solve(mid);
    const int count = static_cast<int>(s.nonzero.size());
    consider(std::move(s));
    if (count == target || hi - lo < width_tol) break;
    if (count > target)
      lo = mid;
    else
      hi = mid;
  }

  SelectionResult r;
  r.method = SelectionMethod::lasso;
  r.requested = target;
  r.seeds = {seed};
  r.tau = best->tau;
  r.exact_count = static_cast<int>(best->nonzero.size()) == target;
  for (int gi : best->nonzero) {
    r.selected_buses.push_back(ds.groups[static_cast<std::size_t>(gi)].bus_id);
    r.steps.push_back({r.selected_buses.back(), best->norms[static_cast<std::size_t>(gi)], best->report});
  }
  r.model = std::move(best->model);
  return r;
}

// ---------------------------------------------------------------------------

/// tau values 2^lo, ..., 2^hi.
inline std::vector<double> tau_grid(int lo_exp = -8, int hi_exp = 8) {
  if (lo_exp > hi_exp) throw ConfigError("empty tau grid");
  std::vector<double> g;
  for (int e = lo_exp; e <= hi_exp; ++e) g.push_back(std::ldexp(1.0, e));
  return g;
}

struct SweepRun {
  double tau = 0.0;
  int restart = 0;
  std::uint64_t seed = 0;
  std::vector<int> selected_buses;
  bool discarded = false;  // fewer buses than requested
  std::optional<double> validation_error;
};

struct TauSweepRecord {
  std::vector<double> taus;
  int restarts = 0;
  std::vector<SweepRun> runs;  // ordered by (tau index, restart)
};

inline void write_sweep_csv(std::ostream& os, const TauSweepRecord& rec) {
  os << "tau,restart,seed,discarded,validation_error,buses\n";
  os.precision(17);
  for (const auto& r : rec.runs) {
    os << r.tau << ',' << r.restart << ',' << r.seed << ',' << (r.discarded ? 1 : 0) << ',';
    if (r.validation_error) os << *r.validation_error;
    os << ',';
    for (std::size_t i = 0; i < r.selected_buses.size(); ++i) os << (i ? " " : "") << r.selected_buses[i];
    os << '\n';
  }
}

struct TuneResult {
  SelectionResult best;
  TrainedModel retrained;
  TauSweepRecord sweep;
};

/// Runs the selection method for every (tau, restart), retrains each full-size
/// bus set, and keeps the lowest validation top-1 error (ties: earlier tau,
/// then earlier restart). Runs that selected fewer buses than requested are
/// discarded; throws DataError when every run was discarded. With a single
/// class every bus set scores zero, so the first run is returned as is.
/// Buses a retrained model may read: the preinstalled ones plus the selection.
inline std::vector<int> instrumented_buses(const SelectionConfig& cfg, const std::vector<int>& selected) {
  std::vector<int> out = cfg.preinstalled;
  out.insert(out.end(), selected.begin(), selected.end());
  return out;
}

inline TuneResult tune_tau(const Dataset& ds, SelectionMethod method, int buses, const SelectionConfig& cfg,
                           const std::vector<double>& taus, int restarts, std::uint64_t seed, unsigned threads = 1) {
  if (ds.validation.empty()) throw DataError("tau tuning needs a non-empty validation split");
  if (taus.empty() || restarts < 1) throw ConfigError("tau tuning needs at least one tau and one restart");
  for (std::size_t i = 1; i < taus.size(); ++i)
    if (!(taus[i] > taus[i - 1])) throw ConfigError("tau grid must be strictly increasing");

  TauSweepRecord rec;
  rec.taus = taus;
  rec.restarts = restarts;
  const std::size_t total = taus.size() * static_cast<std::size_t>(restarts);
  std::vector<SelectionResult> results(total);
  std::vector<std::optional<TrainedModel>> models(total);
  rec.runs.resize(total);

  if (ds.class_count() == 1) {
    const auto s = derive_seed(seed, {0, 0});
    results[0] = method == SelectionMethod::greedy ? greedy_select(ds, taus[0], buses, cfg, s)
                                                   : lasso_select(ds, buses, cfg, s, 0.0, taus.back());
    TuneResult out;
    const auto keep = instrumented_buses(cfg, results[0].selected_buses);
    out.retrained = finalize_model(ds, keep.empty() ? ds.bus_ids : keep, cfg.train, s);
    out.best = std::move(results[0]);
    out.best.validation_error = 0.0;
    rec.runs.resize(1);
    rec.runs[0] = {out.best.tau, 0, s, out.best.selected_buses, false, 0.0};
    out.sweep = std::move(rec);
    return out;
  }

  parallel_for(total, threads, [&](std::size_t i) {
    const std::size_t t = i / static_cast<std::size_t>(restarts);
    const int k = static_cast<int>(i % static_cast<std::size_t>(restarts));
    const auto s = derive_seed(seed, {t, static_cast<std::uint64_t>(k)});
    auto& run = rec.runs[i];
    run.tau = taus[t];
    run.restart = k;
    run.seed = s;
    results[i] = method == SelectionMethod::greedy ? greedy_select(ds, taus[t], buses, cfg, s)
                                                   : lasso_select(ds, buses, cfg, s, 0.0, taus[t]);
    run.selected_buses = results[i].selected_buses;
    run.discarded = static_cast<int>(results[i].selected_buses.size()) < buses;
    if (run.discarded) return;
    models[i] = finalize_model(ds, instrumented_buses(cfg, results[i].selected_buses), cfg.train, s);
    run.validation_error = evaluate(models[i]->model, ds.validation, "validation").top1_error();
    results[i].validation_error = run.validation_error;
  });

  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < total; ++i) {
    if (rec.runs[i].discarded) continue;
    if (!best || *rec.runs[i].validation_error < *rec.runs[*best].validation_error) best = i;
  }
  if (!best) throw DataError("every selection run stopped before reaching " + std::to_string(buses) + " buses");
  TuneResult out;
  out.best = std::move(results[*best]);
  out.retrained = std::move(*models[*best]);
  out.sweep = std::move(rec);
  return out;
}

inline nlohmann::json to_json(const SelectionResult& r) {
  nlohmann::json steps = nlohmann::json::array();
  for (const auto& s : r.steps)
    steps.push_back({{"bus", s.bus},
                     {"group_norm", s.group_norm},
                     {"solver", {{"reason", to_string(s.solve.reason)}, {"iterations", s.solve.iterations},
                                 {"objective", s.solve.objective}}}});
  nlohmann::json j = {{"method", to_string(r.method)},
                      {"selected_buses", r.selected_buses},
                      {"requested", r.requested},
                      {"tau", r.tau},
                      {"terminated_early", r.terminated_early},
                      {"exact_count", r.exact_count},
                      {"seeds", r.seeds},
                      {"steps", steps}};
  j["validation_error"] = r.validation_error ? nlohmann::json(*r.validation_error) : nlohmann::json(nullptr);
  return j;
}

}  // namespace gridsense
