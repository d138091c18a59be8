#pragma once

// Physical grid model. All electrical quantities are per-unit on base_mva;
// angles are radians.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gridsense/error.hpp"

namespace gridsense {

enum class BusType { pq = 1, pv = 2, slack = 3 };

inline const char* to_string(BusType t) {
  switch (t) {
    case BusType::pq: return "PQ";
    case BusType::pv: return "PV";
    case BusType::slack: return "slack";
  }
  return "?";
}

struct Bus {
  int id = 0;
  BusType type = BusType::pq;
  double p_load = 0.0;  // p.u.
  double q_load = 0.0;  // p.u.
  double v_mag_setpoint = 1.0;
  double shunt_g = 0.0;  // p.u. at 1 p.u. voltage
  double shunt_b = 0.0;

  bool operator==(const Bus&) const = default;
};

struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double tap_ratio = 1.0;
  double phase_shift = 0.0;  // rad
  bool in_service = true;

  bool operator==(const Branch&) const = default;
};

struct Generator {
  int bus = 0;
  double p_set = 0.0;
  double q_min = 0.0;
  double q_max = 0.0;
  double v_setpoint = 1.0;
  bool in_service = true;

  bool operator==(const Generator&) const = default;
};

/// Unordered pair of bus ids, stored with a < b. Identifies a "line": every
/// branch between the two buses.
struct BusPair {
  int a = 0;
  int b = 0;

  BusPair() = default;
  BusPair(int u, int v) : a(std::min(u, v)), b(std::max(u, v)) {}

  auto operator<=>(const BusPair&) const = default;
  bool operator==(const BusPair&) const = default;
};

struct PowerGrid {
  std::string name;
  double base_mva = 100.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Generator> generators;

  bool operator==(const PowerGrid&) const = default;

  std::size_t bus_count() const { return buses.size(); }

  std::optional<std::size_t> find_bus(int id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return i;
    return std::nullopt;
  }

  std::size_t index_of(int id) const {
    if (auto i = find_bus(id)) return *i;
    throw GridError("unknown bus id " + std::to_string(id));
  }

  std::size_t slack_index() const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].type == BusType::slack) return i;
    throw GridError("grid has no slack bus");
  }
};

/// Throws GridError on the first violated invariant.
inline void validate_grid(const PowerGrid& g) {
  if (!(g.base_mva > 0.0) || !std::isfinite(g.base_mva)) throw GridError("baseMVA must be positive");
  if (g.buses.empty()) throw GridError("grid has no buses");

  std::set<int> ids;
  int slack_count = 0;
  for (const auto& b : g.buses) {
    if (!ids.insert(b.id).second) throw GridError("duplicate bus id " + std::to_string(b.id));
    if (b.type == BusType::slack) ++slack_count;
    for (double v : {b.p_load, b.q_load, b.v_mag_setpoint, b.shunt_g, b.shunt_b})
      if (!std::isfinite(v)) throw GridError("non-finite value on bus " + std::to_string(b.id));
    if (b.type != BusType::pq && !(b.v_mag_setpoint > 0.0))
      throw GridError("bus " + std::to_string(b.id) + " needs a positive voltage setpoint");
  }
  if (slack_count != 1)
    throw GridError("grid must have exactly one slack bus, found " + std::to_string(slack_count));

  for (std::size_t k = 0; k < g.branches.size(); ++k) {
    const auto& br = g.branches[k];
    const std::string tag = "branch " + std::to_string(k + 1);
    if (!ids.count(br.from_bus)) throw GridError(tag + " references missing bus " + std::to_string(br.from_bus));
    if (!ids.count(br.to_bus)) throw GridError(tag + " references missing bus " + std::to_string(br.to_bus));
    if (br.from_bus == br.to_bus) throw GridError(tag + " is a self loop");
    for (double v : {br.r, br.x, br.b_charging, br.tap_ratio, br.phase_shift})
      if (!std::isfinite(v)) throw GridError(tag + " has a non-finite parameter");
    if (!(br.r * br.r + br.x * br.x > 0.0)) throw GridError(tag + " has zero impedance");
    if (!(br.tap_ratio > 0.0)) throw GridError(tag + " has a non-positive tap ratio");
  }

  for (std::size_t k = 0; k < g.generators.size(); ++k) {
    const auto& gen = g.generators[k];
    const std::string tag = "generator " + std::to_string(k + 1);
    if (!ids.count(gen.bus)) throw GridError(tag + " references missing bus " + std::to_string(gen.bus));
    if (!std::isfinite(gen.p_set) || std::isnan(gen.q_min) || std::isnan(gen.q_max))
      throw GridError(tag + " has a non-finite parameter");
    if (gen.q_min > gen.q_max) throw GridError(tag + " has q_min > q_max");
    if (!(gen.v_setpoint > 0.0)) throw GridError(tag + " needs a positive voltage setpoint");
  }
}

/// Distinct bus pairs carrying at least one in-service branch, in order of first appearance.
inline std::vector<BusPair> distinct_lines(const PowerGrid& g) {
  std::vector<BusPair> out;
  std::set<BusPair> seen;
  for (const auto& br : g.branches) {
    if (!br.in_service) continue;
    BusPair p(br.from_bus, br.to_bus);
    if (seen.insert(p).second) out.push_back(p);
  }
  return out;
}

/// Connected components over in-service branches; returns a component label per bus index.
inline std::vector<int> connected_components(const PowerGrid& g, int* count = nullptr) {
  const std::size_t n = g.bus_count();
  std::vector<std::vector<std::size_t>> adj(n);
  for (const auto& br : g.branches) {
    if (!br.in_service) continue;
    auto f = g.index_of(br.from_bus);
    auto t = g.index_of(br.to_bus);
    adj[f].push_back(t);
    adj[t].push_back(f);
  }
  std::vector<int> label(n, -1);
  int next = 0;
  std::vector<std::size_t> stack;
  for (std::size_t s = 0; s < n; ++s) {
    if (label[s] >= 0) continue;
    label[s] = next;
    stack.assign(1, s);
    while (!stack.empty()) {
      auto u = stack.back();
      stack.pop_back();
      for (auto v : adj[u])
        if (label[v] < 0) {
          label[v] = next;
          stack.push_back(v);
        }
    }
    ++next;
  }
  if (count) *count = next;
  return label;
}

}  // namespace gridsense
