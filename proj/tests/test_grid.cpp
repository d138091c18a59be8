#include <gtest/gtest.h>

#include <queue>
#include <random>
#include <set>

#include "gridsense/grid_io.hpp"
#include "gridsense/powerflow.hpp"

using namespace gridsense;

namespace {

struct CaseShape {
  const char* name;
  std::size_t buses, branches, generators;
};

const CaseShape kShapes[] = {
    {"case14", 14, 20, 5}, {"case30", 30, 41, 6}, {"case57", 57, 80, 7}, {"case118", 118, 186, 54}};

const char* kTiny = R"(function mpc = tiny
mpc.baseMVA = 100;
mpc.bus = [
  1 3 0 0 0 0 1 1.0 0 135 1 1.1 0.9;
  2 1 50 20 0 0 1 1.0 0 135 1 1.1 0.9;
  3 2 30 10 0 0 1 1.0 0 135 1 1.1 0.9;
];
mpc.gen = [
  1 0 0 300 -300 1.02 100 1 250 10;
  3 40 0 50 -50 1.01 100 1 100 10;
];
mpc.branch = [
  1 2 0.01 0.06 0.02 0 0 0 0 0 1 -360 360;
  2 3 0.02 0.08 0.01 0 0 0 0 0 1 -360 360;
  1 3 0.01 0.05 0.00 0 0 0 0.98 2 1 -360 360;
];
)";

// Breadth-first search over in-service branches, independent of connected_components.
std::set<int> reachable(const PowerGrid& g, int from) {
  std::set<int> seen{from};
  std::queue<int> q;
  q.push(from);
  while (!q.empty()) {
    const int u = q.front();
    q.pop();
    for (const auto& br : g.branches) {
      if (!br.in_service) continue;
      for (auto [a, b] : {std::pair{br.from_bus, br.to_bus}, std::pair{br.to_bus, br.from_bus}})
        if (a == u && seen.insert(b).second) q.push(b);
    }
  }
  return seen;
}

}  // namespace

TEST(GridIo, BuiltinCasesHaveExpectedShape) {
  for (const auto& s : kShapes) {
    const auto g = load_builtin_case(s.name);
    EXPECT_EQ(g.bus_count(), s.buses) << s.name;
    EXPECT_EQ(g.branches.size(), s.branches) << s.name;
    EXPECT_EQ(g.generators.size(), s.generators) << s.name;
    EXPECT_NO_THROW(validate_grid(g)) << s.name;
  }
}

TEST(GridIo, UnknownBuiltinIsConfigError) { EXPECT_THROW(load_builtin_case("case9999"), ConfigError); }

TEST(GridIo, ParsesPerUnitAndRadians) {
  const auto g = parse_matpower_case(kTiny);
  EXPECT_EQ(g.name, "tiny");
  ASSERT_EQ(g.bus_count(), 3u);
  EXPECT_DOUBLE_EQ(g.buses[1].p_load, 0.5);
  EXPECT_DOUBLE_EQ(g.buses[1].q_load, 0.2);
  EXPECT_EQ(g.buses[0].type, BusType::slack);
  EXPECT_EQ(g.buses[2].type, BusType::pv);
  EXPECT_DOUBLE_EQ(g.generators[1].p_set, 0.4);
  EXPECT_DOUBLE_EQ(g.branches[2].tap_ratio, 0.98);
  EXPECT_NEAR(g.branches[2].phase_shift, 2.0 * std::numbers::pi / 180.0, 1e-15);
  EXPECT_DOUBLE_EQ(g.branches[0].tap_ratio, 1.0);  // 0 in the file means nominal
}

TEST(GridIo, MatpowerTextRoundTrip) {
  for (const auto& s : kShapes) {
    const auto g = load_builtin_case(s.name);
    const auto back = parse_matpower_case(to_matpower_text(g));
    EXPECT_EQ(back, g) << s.name;
  }
}

TEST(GridIo, JsonListsEveryElement) {
  const auto j = to_json(load_builtin_case("case14"));
  EXPECT_EQ(j.at("buses").size(), 14u);
  EXPECT_EQ(j.at("branches").size(), 20u);
  EXPECT_EQ(j.at("generators").size(), 5u);
}

TEST(GridIo, ParseErrorCarriesPosition) {
  try {
    parse_matpower_case("mpc.baseMVA = 100;\nmpc.bus = [ 1 3 x ];\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_GT(e.column(), 1u);
  }
}

TEST(GridIo, MissingSectionsAreRejected) {
  EXPECT_ANY_THROW(parse_matpower_case("mpc.baseMVA = 100;\n"));
  EXPECT_ANY_THROW(parse_matpower_case(""));
}

TEST(GridIo, ValidationCatchesBrokenGrids) {
  auto g = parse_matpower_case(kTiny);
  auto bad = g;
  bad.branches[0].to_bus = 99;
  EXPECT_THROW(validate_grid(bad), GridError);
  bad = g;
  bad.buses[1].type = BusType::slack;
  EXPECT_THROW(validate_grid(bad), GridError);
  bad = g;
  bad.branches[1].r = bad.branches[1].x = 0.0;
  EXPECT_THROW(validate_grid(bad), GridError);
  bad = g;
  bad.buses[2].id = 1;
  EXPECT_THROW(validate_grid(bad), GridError);
}

// Random byte edits of a valid case either parse or fail with a typed error.
TEST(GridIo, FuzzedInputFailsCleanly) {
  const std::string base = kTiny;
  const std::string alphabet = "0123456789.;[]=-+eE \n%abcmp";
  std::mt19937_64 rng(20240917);
  int parsed = 0, rejected = 0;
  for (int trial = 0; trial < 3000; ++trial) {
    std::string s = base;
    const int edits = 1 + static_cast<int>(rng() % 4);
    for (int e = 0; e < edits; ++e) {
      const auto pos = rng() % s.size();
      switch (rng() % 4) {
        case 0: s[pos] = alphabet[rng() % alphabet.size()]; break;
        case 1: s.erase(pos, 1 + rng() % 5); break;
        case 2: s.insert(pos, 1, alphabet[rng() % alphabet.size()]); break;
        default: s.resize(pos); break;
      }
      if (s.empty()) s = ";";
    }
    try {
      const auto g = parse_matpower_case(s);
      validate_grid(g);
      ++parsed;
    } catch (const ParseError&) {
      ++rejected;
    } catch (const GridError&) {
      ++rejected;
    }
  }
  EXPECT_GT(rejected, 0);
  EXPECT_EQ(parsed + rejected, 3000);
}

TEST(Ybus, SparsityMatchesAdjacency) {
  for (const char* name : {"case14", "case30", "case57"}) {
    const auto g = load_builtin_case(name);
    const auto y = build_ybus(g);
    std::set<std::pair<std::size_t, std::size_t>> expected;
    for (std::size_t i = 0; i < g.bus_count(); ++i) expected.insert({i, i});
    for (const auto& br : g.branches) {
      const auto f = g.index_of(br.from_bus), t = g.index_of(br.to_bus);
      expected.insert({f, t});
      expected.insert({t, f});
    }
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (Eigen::Index r = 0; r < y.outerSize(); ++r)
      for (AdmittanceMatrix::InnerIterator it(y, r); it; ++it)
        got.insert({static_cast<std::size_t>(it.row()), static_cast<std::size_t>(it.col())});
    EXPECT_EQ(got, expected) << name;
  }
}

TEST(Ybus, SinglePiBranchByHand) {
  PowerGrid g;
  g.buses = {{1, BusType::slack}, {2, BusType::pq}};
  Branch br;
  br.from_bus = 1;
  br.to_bus = 2;
  br.r = 0.02;
  br.x = 0.1;
  br.b_charging = 0.04;
  br.tap_ratio = 0.95;
  br.phase_shift = 0.1;
  g.branches = {br};
  const Eigen::MatrixXcd y = Eigen::MatrixXcd(build_ybus(g));
  const Complex ys = 1.0 / Complex(0.02, 0.1);
  const Complex bc(0.0, 0.02);
  const Complex t = std::polar(0.95, 0.1);
  EXPECT_LT(std::abs(y(0, 0) - (ys + bc) / (0.95 * 0.95)), 1e-12);
  EXPECT_LT(std::abs(y(1, 1) - (ys + bc)), 1e-12);
  EXPECT_LT(std::abs(y(0, 1) + ys / std::conj(t)), 1e-12);
  EXPECT_LT(std::abs(y(1, 0) + ys / t), 1e-12);
}

TEST(Ybus, OutOfServiceBranchesAreIgnored) {
  auto g = parse_matpower_case(kTiny);
  g.branches[0].in_service = false;
  const Eigen::MatrixXcd y = Eigen::MatrixXcd(build_ybus(g));
  EXPECT_EQ(y(0, 1), Complex(0.0, 0.0));
  EXPECT_EQ(y(1, 0), Complex(0.0, 0.0));
}

TEST(PowerFlow, BaseCasesConvergeQuickly) {
  for (const char* name : {"case14", "case30", "case57", "case118"}) {
    const auto g = load_builtin_case(name);
    const auto r = solve_ac_power_flow(g, baseline_demand(g));
    ASSERT_TRUE(r.converged()) << name;
    EXPECT_LE(r.solution.iterations, 10) << name;
    EXPECT_LE(r.solution.max_mismatch, 1e-8) << name;
    EXPECT_GE(total_losses(r.solution), 0.0) << name;
  }
}

TEST(PowerFlow, Case14MatchesReferenceSlackOutput) {
  const auto g = load_builtin_case("case14");
  const auto r = solve_ac_power_flow(g, baseline_demand(g));
  ASSERT_TRUE(r.converged());
  // Published base-case solution: slack 232.4 MW, bus 14 at 1.036 p.u. and -16.03 degrees.
  EXPECT_NEAR(r.solution.p_injection[0] * g.base_mva, 232.4, 0.1);
  EXPECT_NEAR(r.solution.v_mag[13], 1.036, 1e-3);
  EXPECT_NEAR(r.solution.v_ang[13] * 180.0 / std::numbers::pi, -16.03, 0.01);
}

TEST(PowerFlow, SolutionSatisfiesInjectionEquations) {
  const auto g = load_builtin_case("case30");
  const auto r = solve_ac_power_flow(g, baseline_demand(g));
  ASSERT_TRUE(r.converged());
  const auto& s = r.solution;
  const Eigen::VectorXcd v = (s.v_mag.array() * (Complex(0, 1) * s.v_ang.array().cast<Complex>()).exp()).matrix();
  const Eigen::VectorXcd inj = v.array() * (Eigen::MatrixXcd(build_ybus(g)) * v).conjugate().array();
  for (std::size_t i = 0; i < g.bus_count(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    EXPECT_NEAR(inj[k].real(), s.p_injection[k], 1e-10);
    EXPECT_NEAR(inj[k].imag(), s.q_injection[k], 1e-10);
    if (g.buses[i].type == BusType::pq) {
      EXPECT_NEAR(s.p_injection[k], -g.buses[i].p_load, 1e-8);
      EXPECT_NEAR(s.q_injection[k], -g.buses[i].q_load, 1e-8);
    }
  }
}

TEST(PowerFlow, FlatNoLoadGridNeedsNoNewtonStep) {
  auto g = load_builtin_case("case14");
  for (auto& b : g.buses) {
    b.p_load = b.q_load = b.shunt_g = b.shunt_b = 0.0;
    b.v_mag_setpoint = 1.0;
  }
  for (auto& br : g.branches) {
    br.b_charging = 0.0;
    br.tap_ratio = 1.0;
    br.phase_shift = 0.0;
  }
  for (auto& gen : g.generators) {
    gen.p_set = 0.0;
    gen.v_setpoint = 1.0;
  }
  const auto r = solve_ac_power_flow(g, baseline_demand(g));
  ASSERT_TRUE(r.converged());
  EXPECT_LE(r.solution.iterations, 1);
  EXPECT_NEAR(total_losses(r.solution), 0.0, 1e-12);
}

TEST(PowerFlow, DemandSizeMismatchThrows) {
  const auto g = load_builtin_case("case14");
  auto d = baseline_demand(g);
  d.p_load.resize(3);
  EXPECT_THROW(solve_ac_power_flow(g, d), DimensionError);
}

TEST(PowerFlow, QLimitSwitchingRespectsBounds) {
  const auto g = load_builtin_case("case14");
  auto d = baseline_demand(g);
  d.p_load *= 1.5;
  d.q_load *= 1.5;
  d.gen_scale = 1.5;
  PowerFlowOptions opts;
  opts.enforce_q_limits = true;
  const auto r = solve_ac_power_flow(g, d, opts);
  ASSERT_TRUE(r.converged());
  for (std::size_t i = 0; i < g.bus_count(); ++i) {
    if (r.solution.bus_types[i] != BusType::pv) continue;
    double qmin = 0.0, qmax = 0.0;
    for (const auto& gen : g.generators)
      if (gen.in_service && gen.bus == g.buses[i].id) {
        qmin += gen.q_min;
        qmax += gen.q_max;
      }
    const double qg = r.solution.q_injection[static_cast<Eigen::Index>(i)] + d.q_load[static_cast<Eigen::Index>(i)];
    EXPECT_LE(qg, qmax + 1e-6);
    EXPECT_GE(qg, qmin - 1e-6);
  }
}

// Single-line outages of case14/case30 classified against a BFS oracle: an
// outage is structurally infeasible iff some island lacks generation or the
// slack bus is left alone.
TEST(Outage, FeasibilityAgreesWithGraphSearch) {
  for (const char* name : {"case14", "case30", "case57"}) {
    const auto g = load_builtin_case(name);
    std::set<int> gen_buses;
    for (const auto& gen : g.generators)
      if (gen.in_service) gen_buses.insert(gen.bus);
    const int slack = g.buses[g.slack_index()].id;
    for (const auto& line : distinct_lines(g)) {
      PowerGrid cut = g;
      for (auto& br : cut.branches)
        if (BusPair(br.from_bus, br.to_bus) == line) br.in_service = false;
      bool ok = true;
      std::set<int> covered;
      for (const auto& b : g.buses) {
        if (covered.count(b.id)) continue;
        const auto island = reachable(cut, b.id);
        covered.insert(island.begin(), island.end());
        bool has_gen = false;
        for (int id : island) has_gen = has_gen || gen_buses.count(id) || id == slack;
        if (!has_gen) ok = false;
        if (island.count(slack) && island.size() == 1 && island.size() != g.bus_count()) ok = false;
      }
      const auto applied = apply_outage(g, std::vector<BusPair>{line});
      EXPECT_EQ(applied.has_value(), ok) << name << " line " << line.a << "-" << line.b;
    }
  }
}

TEST(Outage, Case14RadialLinesBehaveAsExpected) {
  const auto g = load_builtin_case("case14");
  // 7-8 strands the synchronous condenser at bus 8: an island with its own generator.
  const auto cut78 = apply_outage(g, std::vector<BusPair>{{7, 8}});
  ASSERT_TRUE(cut78.has_value());
  int count = 0;
  const auto refs = island_references(*cut78, &count);
  EXPECT_EQ(count, 2);
  EXPECT_EQ(refs.size(), 2u);
  // 1-2 together with 1-5 isolates the slack bus.
  EXPECT_FALSE(apply_outage(g, std::vector<BusPair>{{1, 2}, {1, 5}}).has_value());
  // 7-9 and 4-7 leave bus 7 without generation.
  EXPECT_FALSE(apply_outage(g, std::vector<BusPair>{{7, 9}, {4, 7}, {7, 8}}).has_value());
}

TEST(Outage, UnknownLineThrows) {
  const auto g = load_builtin_case("case14");
  EXPECT_THROW(apply_outage(g, std::vector<BusPair>{{1, 14}}), std::invalid_argument);
}

TEST(Outage, StructurallyInfeasibleStatusFromSolver) {
  auto g = load_builtin_case("case14");
  for (auto& br : g.branches)
    if (BusPair(br.from_bus, br.to_bus) == BusPair(1, 2) || BusPair(br.from_bus, br.to_bus) == BusPair(1, 5))
      br.in_service = false;
  const auto r = solve_ac_power_flow(g, baseline_demand(g));
  EXPECT_EQ(r.status, PowerFlowStatus::structurally_infeasible);
}
