#pragma once

// AC power flow by Newton-Raphson in polar coordinates, plus line-outage
// topology edits.

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <Eigen/SparseLU>
#include <nlohmann/json.hpp>

#include "gridsense/error.hpp"
#include "gridsense/grid.hpp"

namespace gridsense {

using Complex = std::complex<double>;
using AdmittanceMatrix = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

/// Bus admittance matrix over in-service branches. Diagonal entries are always
/// stored, even when zero.
inline AdmittanceMatrix build_ybus(const PowerGrid& g) {
  const auto n = static_cast<Eigen::Index>(g.bus_count());
  std::vector<Eigen::Triplet<Complex>> trip;
  trip.reserve(4 * g.branches.size() + g.bus_count());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& b = g.buses[static_cast<std::size_t>(i)];
    trip.emplace_back(i, i, Complex(b.shunt_g, b.shunt_b));
  }
  for (const auto& br : g.branches) {
    if (!br.in_service) continue;
    const auto f = static_cast<Eigen::Index>(g.index_of(br.from_bus));
    const auto t = static_cast<Eigen::Index>(g.index_of(br.to_bus));
    const Complex ys = 1.0 / Complex(br.r, br.x);
    const Complex tap = std::polar(br.tap_ratio, br.phase_shift);
    const Complex ytt = ys + Complex(0.0, br.b_charging / 2.0);
    const Complex yff = ytt / (br.tap_ratio * br.tap_ratio);
    const Complex yft = -ys / std::conj(tap);
    const Complex ytf = -ys / tap;
    trip.emplace_back(f, f, yff);
    trip.emplace_back(t, t, ytt);
    trip.emplace_back(f, t, yft);
    trip.emplace_back(t, f, ytf);
  }
  AdmittanceMatrix y(n, n);
  y.setFromTriplets(trip.begin(), trip.end());
  return y;
}

/// Per-bus loads (p.u.) and the common generator dispatch multiplier.
struct DemandAssignment {
  Eigen::VectorXd p_load;
  Eigen::VectorXd q_load;
  double gen_scale = 1.0;
};

inline DemandAssignment baseline_demand(const PowerGrid& g) {
  DemandAssignment d;
  d.p_load.resize(static_cast<Eigen::Index>(g.bus_count()));
  d.q_load.resize(static_cast<Eigen::Index>(g.bus_count()));
  for (std::size_t i = 0; i < g.bus_count(); ++i) {
    d.p_load[static_cast<Eigen::Index>(i)] = g.buses[i].p_load;
    d.q_load[static_cast<Eigen::Index>(i)] = g.buses[i].q_load;
  }
  return d;
}

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 30;
  bool enforce_q_limits = false;  // PV->PQ switching at generator Q limits
};

enum class PowerFlowStatus { converged, max_iterations, non_finite, singular_jacobian, structurally_infeasible };

inline const char* to_string(PowerFlowStatus s) {
  switch (s) {
    case PowerFlowStatus::converged: return "converged";
    case PowerFlowStatus::max_iterations: return "max_iterations";
    case PowerFlowStatus::non_finite: return "non_finite";
    case PowerFlowStatus::singular_jacobian: return "singular_jacobian";
    case PowerFlowStatus::structurally_infeasible: return "structurally_infeasible";
  }
  return "?";
}

struct PowerFlowSolution {
  Eigen::VectorXd v_mag;
  Eigen::VectorXd v_ang;
  Eigen::VectorXd p_injection;
  Eigen::VectorXd q_injection;
  int iterations = 0;        // Newton steps of the final (post Q-limit) run
  int total_iterations = 0;  // across all Q-limit restarts
  int q_limit_switches = 0;
  double max_mismatch = 0.0;
  std::vector<BusType> bus_types;  // effective types after PV->PQ switching
};

struct PowerFlowResult {
  PowerFlowStatus status = PowerFlowStatus::max_iterations;
  PowerFlowSolution solution;

  bool converged() const { return status == PowerFlowStatus::converged; }
};

namespace detail {

struct NewtonOutcome {
  PowerFlowStatus status;
  int iterations;
  double max_mismatch;
};

// Newton-Raphson for fixed bus types. `vm`/`va` hold the flat start on entry
// and the final iterate on exit; `s_spec` is the specified net injection.
inline NewtonOutcome newton_raphson(const AdmittanceMatrix& y, const std::vector<BusType>& types,
                                    const Eigen::VectorXcd& s_spec, Eigen::VectorXd& vm, Eigen::VectorXd& va,
                                    const PowerFlowOptions& opts) {
  const Eigen::Index n = y.rows();
  std::vector<Eigen::Index> ang_col(static_cast<std::size_t>(n), -1), mag_col(static_cast<std::size_t>(n), -1);
  Eigen::Index nvar = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (types[static_cast<std::size_t>(i)] != BusType::slack) ang_col[static_cast<std::size_t>(i)] = nvar++;
  for (Eigen::Index i = 0; i < n; ++i)
    if (types[static_cast<std::size_t>(i)] == BusType::pq) mag_col[static_cast<std::size_t>(i)] = nvar++;

  Eigen::VectorXcd v(n), current(n);
  Eigen::VectorXd mismatch(nvar);
  auto evaluate = [&]() {
    for (Eigen::Index i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
    current = y * v;
    double worst = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Complex s = v[i] * std::conj(current[i]) - s_spec[i];
      const auto a = ang_col[static_cast<std::size_t>(i)];
      const auto m = mag_col[static_cast<std::size_t>(i)];
      if (a >= 0) {
        mismatch[a] = s.real();
        worst = std::max(worst, std::abs(s.real()));
      }
      if (m >= 0) {
        mismatch[m] = s.imag();
        worst = std::max(worst, std::abs(s.imag()));
      }
    }
    return worst;
  };

  std::vector<Eigen::Triplet<double>> trip;
  Eigen::SparseMatrix<double> jac(nvar, nvar);
  Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
  bool analyzed = false;
  const Complex j(0.0, 1.0);

  for (int it = 0;; ++it) {
    const double worst = evaluate();
    if (!std::isfinite(worst)) return {PowerFlowStatus::non_finite, it, worst};
    if (worst <= opts.tol) return {PowerFlowStatus::converged, it, worst};
    if (it >= opts.max_iter) return {PowerFlowStatus::max_iterations, it, worst};

    trip.clear();
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto ai = ang_col[static_cast<std::size_t>(i)];
      const auto mi = mag_col[static_cast<std::size_t>(i)];
      if (ai < 0 && mi < 0) continue;
      const Complex unit_i = v[i] / vm[i];
      for (AdmittanceMatrix::InnerIterator e(y, i); e; ++e) {
        const Eigen::Index k = e.col();
        const Complex yik = e.value();
        Complex ds_dva, ds_dvm;
        if (k == i) {
          ds_dva = j * v[i] * std::conj(current[i] - yik * v[i]);
          ds_dvm = v[i] * std::conj(yik * unit_i) + std::conj(current[i]) * unit_i;
        } else {
          ds_dva = -j * v[i] * std::conj(yik * v[k]);
          ds_dvm = v[i] * std::conj(yik * v[k] / vm[k]);
        }
        const auto ak = ang_col[static_cast<std::size_t>(k)];
        const auto mk = mag_col[static_cast<std::size_t>(k)];
        if (ai >= 0) {
          if (ak >= 0) trip.emplace_back(ai, ak, ds_dva.real());
          if (mk >= 0) trip.emplace_back(ai, mk, ds_dvm.real());
        }
        if (mi >= 0) {
          if (ak >= 0) trip.emplace_back(mi, ak, ds_dva.imag());
          if (mk >= 0) trip.emplace_back(mi, mk, ds_dvm.imag());
        }
      }
    }
    jac.setFromTriplets(trip.begin(), trip.end());
    if (!analyzed) {
      lu.analyzePattern(jac);
      analyzed = true;
    }
    lu.factorize(jac);
    if (lu.info() != Eigen::Success) return {PowerFlowStatus::singular_jacobian, it, worst};
    const Eigen::VectorXd dx = lu.solve(-mismatch);
    if (lu.info() != Eigen::Success || !dx.allFinite()) return {PowerFlowStatus::non_finite, it, worst};
    for (Eigen::Index i = 0; i < n; ++i) {
      const auto a = ang_col[static_cast<std::size_t>(i)];
      const auto m = mag_col[static_cast<std::size_t>(i)];
      if (a >= 0) va[i] += dx[a];
      if (m >= 0) vm[i] += dx[m];
    }
  }
}

}  // namespace detail

/// Reference bus per connected component: the grid's slack bus for its own
/// component, and the in-service generator bus with the largest scheduled
/// output for every other component (ties broken by bus order). A component
/// without generation has no reference (-1). Indices are bus indices.
inline std::vector<int> island_references(const PowerGrid& g, int* component_count = nullptr) {
  int count = 0;
  const auto label = connected_components(g, &count);
  std::vector<int> ref(static_cast<std::size_t>(count), -1);
  std::vector<double> best(static_cast<std::size_t>(count), -std::numeric_limits<double>::infinity());
  const auto slack = g.slack_index();
  ref[static_cast<std::size_t>(label[slack])] = static_cast<int>(slack);
  best[static_cast<std::size_t>(label[slack])] = std::numeric_limits<double>::infinity();
  for (const auto& gen : g.generators) {
    if (!gen.in_service) continue;
    const auto b = g.index_of(gen.bus);
    const auto c = static_cast<std::size_t>(label[b]);
    if (gen.p_set > best[c]) {
      best[c] = gen.p_set;
      ref[c] = static_cast<int>(b);
    }
  }
  if (component_count) *component_count = count;
  return ref;
}

/// True when every island has generation and the slack bus is not cut off on
/// its own.
inline bool structurally_feasible(const PowerGrid& g) {
  int count = 0;
  const auto label = connected_components(g, &count);
  const auto ref = island_references(g);
  if (std::any_of(ref.begin(), ref.end(), [](int r) { return r < 0; })) return false;
  const auto slack_label = label[g.slack_index()];
  return count == 1 || std::count(label.begin(), label.end(), slack_label) > 1;
}

/// Solves the AC power flow from a flat start. Returns a non-converged status
/// (never throws) when Newton fails; throws DimensionError when `demand` does
/// not match the grid.
inline PowerFlowResult solve_ac_power_flow(const PowerGrid& g, const DemandAssignment& demand,
                                           const PowerFlowOptions& opts = {}) {
  const auto n = static_cast<Eigen::Index>(g.bus_count());
  if (demand.p_load.size() != n || demand.q_load.size() != n)
    throw DimensionError("demand has " + std::to_string(demand.p_load.size()) + " entries, grid has " +
                         std::to_string(n) + " buses");

  const AdmittanceMatrix y = build_ybus(g);

  std::vector<BusType> types(static_cast<std::size_t>(n));
  Eigen::VectorXd p_gen = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd q_min = Eigen::VectorXd::Zero(n), q_max = Eigen::VectorXd::Zero(n);
  std::vector<int> active_gens(static_cast<std::size_t>(n), 0);
  for (const auto& gen : g.generators) {
    if (!gen.in_service) continue;
    const auto b = static_cast<Eigen::Index>(g.index_of(gen.bus));
    p_gen[b] += gen.p_set * demand.gen_scale;
    q_min[b] += gen.q_min;
    q_max[b] += gen.q_max;
    ++active_gens[static_cast<std::size_t>(b)];
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto t = g.buses[static_cast<std::size_t>(i)].type;
    types[static_cast<std::size_t>(i)] = (t == BusType::pv && active_gens[static_cast<std::size_t>(i)] == 0) ? BusType::pq : t;
  }
  PowerFlowResult result;
  if (!structurally_feasible(g)) {
    result.status = PowerFlowStatus::structurally_infeasible;
    return result;
  }
  for (int r : island_references(g)) types[static_cast<std::size_t>(r)] = BusType::slack;
  Eigen::VectorXd q_gen_fixed = Eigen::VectorXd::Zero(n);

  auto& sol = result.solution;
  const int max_restarts = static_cast<int>(n);
  for (int restart = 0;; ++restart) {
    Eigen::VectorXcd s_spec(n);
    Eigen::VectorXd vm(n), va = Eigen::VectorXd::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      s_spec[i] = Complex(p_gen[i] - demand.p_load[i], q_gen_fixed[i] - demand.q_load[i]);
      vm[i] = types[static_cast<std::size_t>(i)] == BusType::pq ? 1.0 : g.buses[static_cast<std::size_t>(i)].v_mag_setpoint;
    }
    const auto out = detail::newton_raphson(y, types, s_spec, vm, va, opts);
    sol.iterations = out.iterations;
    sol.total_iterations += out.iterations;
    sol.max_mismatch = out.max_mismatch;
    if (out.status != PowerFlowStatus::converged) {
      result.status = out.status;
      return result;
    }
    if ((vm.array() <= 0.0).any()) {
      result.status = PowerFlowStatus::non_finite;
      return result;
    }

    Eigen::VectorXcd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = std::polar(vm[i], va[i]);
    const Eigen::VectorXcd s = v.cwiseProduct((y * v).conjugate());

    bool switched = false;
    if (opts.enforce_q_limits && restart < max_restarts) {
      constexpr double slack_tol = 1e-9;
      for (Eigen::Index i = 0; i < n; ++i) {
        if (types[static_cast<std::size_t>(i)] != BusType::pv) continue;
        const double qg = s[i].imag() + demand.q_load[i];
        if (qg > q_max[i] + slack_tol) {
          types[static_cast<std::size_t>(i)] = BusType::pq;
          q_gen_fixed[i] = q_max[i];
          switched = true;
          ++sol.q_limit_switches;
        } else if (qg < q_min[i] - slack_tol) {
          types[static_cast<std::size_t>(i)] = BusType::pq;
          q_gen_fixed[i] = q_min[i];
          switched = true;
          ++sol.q_limit_switches;
        }
      }
    }
    if (switched) continue;

    sol.v_mag = vm;
    sol.v_ang = va;
    sol.p_injection = s.real();
    sol.q_injection = s.imag();
    sol.bus_types = types;
    result.status = PowerFlowStatus::converged;
    return result;
  }
}

/// Takes every branch between each listed bus pair out of service. Returns
/// nullopt when the outage isolates the slack bus or leaves an island without
/// generation. Throws std::invalid_argument for a pair that carries no
/// in-service branch.
inline std::optional<PowerGrid> apply_outage(const PowerGrid& g, std::span<const BusPair> lines) {
  PowerGrid out = g;
  for (const auto& line : lines) {
    bool found = false;
    for (auto& br : out.branches) {
      if (br.in_service && BusPair(br.from_bus, br.to_bus) == line) {
        br.in_service = false;
        found = true;
      }
    }
    if (!found)
      throw std::invalid_argument("no in-service line between buses " + std::to_string(line.a) + " and " +
                                  std::to_string(line.b));
  }
  if (!structurally_feasible(out)) return std::nullopt;
  return out;
}

/// Net active injection summed over buses: series plus shunt losses.
inline double total_losses(const PowerFlowSolution& s) { return s.p_injection.sum(); }

inline nlohmann::json to_json(const PowerFlowResult& r, const PowerGrid& g) {
  nlohmann::json j;
  j["status"] = to_string(r.status);
  if (!r.converged()) return j;
  const auto& s = r.solution;
  j["iterations"] = s.iterations;
  j["total_iterations"] = s.total_iterations;
  j["q_limit_switches"] = s.q_limit_switches;
  j["max_mismatch"] = s.max_mismatch;
  j["losses_mw"] = total_losses(s) * g.base_mva;
  nlohmann::json buses = nlohmann::json::array();
  for (std::size_t i = 0; i < g.bus_count(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    buses.push_back({{"id", g.buses[i].id},
                     {"type", to_string(s.bus_types[i])},
                     {"v_mag", s.v_mag[k]},
                     {"v_ang_deg", s.v_ang[k] * 180.0 / std::numbers::pi},
                     {"p_injection_mw", s.p_injection[k] * g.base_mva},
                     {"q_injection_mvar", s.q_injection[k] * g.base_mva}});
  }
  j["buses"] = std::move(buses);
  return j;
}

}  // namespace gridsense
