#pragma once

// MATPOWER case text ingestion, serialization and the embedded IEEE cases.

#include <array>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsense/cases/case118.hpp"
#include "gridsense/cases/case14.hpp"
#include "gridsense/cases/case30.hpp"
#include "gridsense/cases/case57.hpp"
#include "gridsense/error.hpp"
#include "gridsense/grid.hpp"

namespace gridsense {

struct ParsedCase {
  PowerGrid grid;
  std::vector<std::string> warnings;
};

namespace detail {

using Matrix = std::vector<std::vector<double>>;

class CaseLexer {
 public:
  explicit CaseLexer(std::string_view text) : text_(text) {}

  bool done() {
    skip_blank(true);
    return pos_ >= text_.size();
  }

  std::size_t line() const { return line_; }
  std::size_t column() const { return col_; }

  [[noreturn]] void fail(const std::string& msg) const { throw ParseError(line_, col_, msg); }

  char peek() const { return pos_ < text_.size() ? text_[pos_] : '\0'; }

  void advance() {
    if (pos_ >= text_.size()) return;
    if (text_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }

  // Skips spaces, tabs, carriage returns, comments and (optionally) newlines.
  void skip_blank(bool newlines) {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == ' ' || c == '\t' || c == '\r' || (newlines && c == '\n')) {
        advance();
      } else if (c == '%') {
        while (pos_ < text_.size() && text_[pos_] != '\n') advance();
      } else {
        break;
      }
    }
  }

  void skip_line() {
    while (pos_ < text_.size() && text_[pos_] != '\n') advance();
  }

  static bool ident_char(char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' || c == '.';
  }

  std::string identifier() {
    char c = peek();
    if (!((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_')) fail("expected an identifier");
    std::string out;
    while (pos_ < text_.size() && ident_char(text_[pos_])) {
      out.push_back(text_[pos_]);
      advance();
    }
    return out;
  }

  void expect(char c) {
    skip_blank(false);
    if (peek() != c) fail(std::string("expected '") + c + "'");
    advance();
  }

  bool at_number_start() const {
    char c = peek();
    return (c >= '0' && c <= '9') || c == '-' || c == '+' || c == '.' || c == 'I' || c == 'N';
  }

  double number() {
    std::string tok;
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      bool ok = (c >= '0' && c <= '9') || c == '.' || c == 'e' || c == 'E' || c == '+' || c == '-' ||
                (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z');
      if (!ok) break;
      tok.push_back(c);
      advance();
    }
    if (tok.empty()) fail("expected a number");
    std::string_view body = tok;
    bool negative = false;
    if (body.front() == '+' || body.front() == '-') {
      negative = body.front() == '-';
      body.remove_prefix(1);
    }
    double v = 0.0;
    if (body == "Inf" || body == "inf") {
      v = std::numeric_limits<double>::infinity();
    } else if (body == "NaN" || body == "nan") {
      v = std::numeric_limits<double>::quiet_NaN();
    } else {
      auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
      if (ec != std::errc() || ptr != body.data() + body.size()) {
        fail("malformed number '" + tok + "'");
      }
    }
    return negative ? -v : v;
  }

  Matrix matrix() {
    expect('[');
    Matrix rows;
    std::vector<double> row;
    auto end_row = [&] {
      if (row.empty()) return;
      if (!rows.empty() && rows.front().size() != row.size())
        fail("row has " + std::to_string(row.size()) + " columns, expected " + std::to_string(rows.front().size()));
      rows.push_back(std::move(row));
      row.clear();
    };
    for (;;) {
      skip_blank(false);
      char c = peek();
      if (pos_ >= text_.size()) fail("unterminated matrix");
      if (c == ']') {
        end_row();
        advance();
        return rows;
      }
      if (c == ';' || c == '\n') {
        end_row();
        advance();
      } else if (c == ',') {
        advance();
      } else if (at_number_start()) {
        row.push_back(number());
      } else {
        fail(std::string("unexpected character '") + printable(c) + "' in matrix");
      }
    }
  }

  void skip_string() {
    expect('\'');
    while (pos_ < text_.size() && text_[pos_] != '\'' && text_[pos_] != '\n') advance();
    if (peek() != '\'') fail("unterminated string");
    advance();
  }

  void skip_cell() {
    expect('{');
    int depth = 1;
    while (pos_ < text_.size() && depth > 0) {
      char c = text_[pos_];
      if (c == '\'') {
        skip_string();
        continue;
      }
      if (c == '%') {
        skip_line();
        continue;
      }
      if (c == '{') ++depth;
      if (c == '}') --depth;
      advance();
    }
    if (depth != 0) fail("unterminated cell array");
  }

  static std::string printable(char c) {
    auto u = static_cast<unsigned char>(c);
    if (u >= 0x20 && u < 0x7f) return std::string(1, c);
    static constexpr char hex[] = "0123456789abcdef";
    return std::string("\\x") + hex[u >> 4] + hex[u & 15];
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t col_ = 1;
};

inline constexpr double deg_to_rad = std::numbers::pi / 180.0;

}  // namespace detail

/// Parses MATPOWER case text. Columns beyond the supported range are ignored
/// and reported in `warnings`.
inline ParsedCase parse_matpower_case_verbose(std::string_view text) {
  detail::CaseLexer lex(text);
  ParsedCase out;
  std::optional<double> base_mva;
  std::optional<detail::Matrix> bus, gen, branch;
  std::string case_name;

  while (!lex.done()) {
    std::string name = lex.identifier();
    if (name == "function") {
      lex.skip_blank(false);
      // "function mpc = caseXX": keep the trailing identifier as the case name.
      std::string rest;
      while (lex.peek() != '\n' && lex.peek() != '\0') {
        rest.push_back(lex.peek());
        lex.advance();
      }
      auto eq = rest.find('=');
      std::string tail = eq == std::string::npos ? rest : rest.substr(eq + 1);
      auto b = tail.find_first_not_of(" \t\r");
      auto e = tail.find_last_not_of(" \t\r;");
      if (b != std::string::npos && e != std::string::npos && e >= b) case_name = tail.substr(b, e - b + 1);
      continue;
    }
    lex.expect('=');
    lex.skip_blank(false);
    const char c = lex.peek();
    if (c == '[') {
      auto m = lex.matrix();
      if (name == "mpc.bus") bus = std::move(m);
      else if (name == "mpc.gen") gen = std::move(m);
      else if (name == "mpc.branch") branch = std::move(m);
    } else if (c == '\'') {
      lex.skip_string();
    } else if (c == '{') {
      lex.skip_cell();
    } else if (lex.at_number_start()) {
      double v = lex.number();
      if (name == "mpc.baseMVA") base_mva = v;
    } else {
      lex.fail("unsupported value for '" + name + "'");
    }
    lex.skip_blank(false);
    if (lex.peek() == ';') lex.advance();
    lex.skip_blank(false);
    if (lex.peek() != '\n' && lex.peek() != '\0' && lex.peek() != '%')
      lex.fail("expected end of statement after '" + name + "'");
  }

  if (!base_mva) throw GridError("missing mpc.baseMVA");
  if (!bus) throw GridError("missing mpc.bus");
  if (!branch) throw GridError("missing mpc.branch");
  if (!gen) throw GridError("missing mpc.gen");

  auto check_cols = [&](const detail::Matrix& m, const char* what, std::size_t required, std::size_t supported) {
    if (m.empty()) return;
    if (m.front().size() < required)
      throw GridError(std::string("mpc.") + what + " needs at least " + std::to_string(required) + " columns");
    if (m.front().size() > supported)
      out.warnings.push_back(std::string("mpc.") + what + ": ignoring columns " + std::to_string(supported + 1) +
                             "-" + std::to_string(m.front().size()));
  };
  check_cols(*bus, "bus", 13, 13);
  check_cols(*branch, "branch", 11, 13);
  check_cols(*gen, "gen", 8, 10);

  PowerGrid& g = out.grid;
  g.name = case_name;
  g.base_mva = *base_mva;
  if (!(g.base_mva > 0.0) || !std::isfinite(g.base_mva)) throw GridError("baseMVA must be positive");
  const double base = g.base_mva;

  auto as_int = [](double v, const char* what) {
    if (!std::isfinite(v) || v != std::floor(v) || std::abs(v) > 1e9)
      throw GridError(std::string(what) + " must be an integer");
    return static_cast<int>(v);
  };

  for (const auto& row : *bus) {
    Bus b;
    b.id = as_int(row[0], "bus id");
    int type = as_int(row[1], "bus type");
    switch (type) {
      case 1: b.type = BusType::pq; break;
      case 2: b.type = BusType::pv; break;
      case 3: b.type = BusType::slack; break;
      default: throw GridError("bus " + std::to_string(b.id) + " has unsupported type " + std::to_string(type));
    }
    b.p_load = row[2] / base;
    b.q_load = row[3] / base;
    b.shunt_g = row[4] / base;
    b.shunt_b = row[5] / base;
    b.v_mag_setpoint = row[7];
    g.buses.push_back(b);
  }

  for (const auto& row : *branch) {
    Branch br;
    br.from_bus = as_int(row[0], "branch from-bus");
    br.to_bus = as_int(row[1], "branch to-bus");
    br.r = row[2];
    br.x = row[3];
    br.b_charging = row[4];
    br.tap_ratio = row[8] == 0.0 ? 1.0 : row[8];
    br.phase_shift = row[9] * detail::deg_to_rad;
    br.in_service = row[10] > 0.0;
    g.branches.push_back(br);
  }

  for (const auto& row : *gen) {
    Generator gn;
    gn.bus = as_int(row[0], "generator bus");
    gn.p_set = row[1] / base;
    gn.q_max = row[3] / base;
    gn.q_min = row[4] / base;
    gn.v_setpoint = row[5];
    gn.in_service = row[7] > 0.0;
    g.generators.push_back(gn);
  }

  // Regulated buses take their voltage setpoint from the first in-service generator.
  for (auto& b : g.buses) {
    if (b.type == BusType::pq) continue;
    for (const auto& gn : g.generators)
      if (gn.bus == b.id && gn.in_service) {
        b.v_mag_setpoint = gn.v_setpoint;
        break;
      }
  }

  validate_grid(g);
  return out;
}

inline PowerGrid parse_matpower_case(std::string_view text) { return parse_matpower_case_verbose(text).grid; }

namespace detail {
inline void append_number(std::string& s, double v) {
  if (std::isinf(v)) {
    s += v > 0 ? "Inf" : "-Inf";
    return;
  }
  std::array<char, 32> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  s.append(buf.data(), ptr);
}
}  // namespace detail

/// Serializes to MATPOWER case text that parses back to an equal grid.
inline std::string to_matpower_text(const PowerGrid& g) {
  const double base = g.base_mva;
  std::string s;
  s += "function mpc = " + (g.name.empty() ? std::string("case") : g.name) + "\n";
  s += "mpc.version = '2';\n";
  s += "mpc.baseMVA = ";
  detail::append_number(s, base);
  s += ";\n\nmpc.bus = [\n";
  auto row = [&s](std::initializer_list<double> vals) {
    s += '\t';
    bool first = true;
    for (double v : vals) {
      if (!first) s += '\t';
      first = false;
      detail::append_number(s, v);
    }
    s += ";\n";
  };
  for (const auto& b : g.buses)
    row({double(b.id), double(static_cast<int>(b.type)), b.p_load * base, b.q_load * base, b.shunt_g * base,
         b.shunt_b * base, 1, b.v_mag_setpoint, 0, 0, 1, 1.1, 0.9});
  s += "];\n\nmpc.gen = [\n";
  for (const auto& gn : g.generators)
    row({double(gn.bus), gn.p_set * base, 0, gn.q_max * base, gn.q_min * base, gn.v_setpoint, base,
         gn.in_service ? 1.0 : 0.0, 0, 0});
  s += "];\n\nmpc.branch = [\n";
  for (const auto& br : g.branches)
    row({double(br.from_bus), double(br.to_bus), br.r, br.x, br.b_charging, 0, 0, 0,
         br.tap_ratio == 1.0 ? 0.0 : br.tap_ratio, br.phase_shift / detail::deg_to_rad, br.in_service ? 1.0 : 0.0,
         -360, 360});
  s += "];\n";
  return s;
}

inline const std::vector<std::string>& builtin_case_names() {
  static const std::vector<std::string> names{"case14", "case30", "case57", "case118"};
  return names;
}

inline std::string_view builtin_case_text(std::string_view name) {
  if (name == "case14") return cases::case14_text;
  if (name == "case30") return cases::case30_text;
  if (name == "case57") return cases::case57_text;
  if (name == "case118") return cases::case118_text;
  throw ConfigError("unknown builtin case '" + std::string(name) + "' (expected case14, case30, case57 or case118)");
}

inline PowerGrid load_builtin_case(std::string_view name) { return parse_matpower_case(builtin_case_text(name)); }

/// Canonical JSON dump (physical units: MW, MVAr, degrees).
inline nlohmann::json to_json(const PowerGrid& g) {
  using nlohmann::json;
  const double base = g.base_mva;
  json j;
  j["name"] = g.name;
  j["base_mva"] = base;
  json buses = json::array();
  for (const auto& b : g.buses)
    buses.push_back({{"id", b.id},
                     {"type", to_string(b.type)},
                     {"p_load_mw", b.p_load * base},
                     {"q_load_mvar", b.q_load * base},
                     {"v_mag_setpoint", b.v_mag_setpoint},
                     {"shunt_g_mw", b.shunt_g * base},
                     {"shunt_b_mvar", b.shunt_b * base}});
  json branches = json::array();
  for (const auto& br : g.branches)
    branches.push_back({{"from", br.from_bus},
                        {"to", br.to_bus},
                        {"r", br.r},
                        {"x", br.x},
                        {"b", br.b_charging},
                        {"tap_ratio", br.tap_ratio},
                        {"phase_shift_deg", br.phase_shift / detail::deg_to_rad},
                        {"in_service", br.in_service}});
  json gens = json::array();
  for (const auto& gn : g.generators)
    gens.push_back({{"bus", gn.bus},
                    {"p_set_mw", gn.p_set * base},
                    {"q_min_mvar", std::isinf(gn.q_min) ? json(gn.q_min > 0 ? "Inf" : "-Inf") : json(gn.q_min * base)},
                    {"q_max_mvar", std::isinf(gn.q_max) ? json(gn.q_max > 0 ? "Inf" : "-Inf") : json(gn.q_max * base)},
                    {"v_setpoint", gn.v_setpoint},
                    {"in_service", gn.in_service}});
  j["buses"] = std::move(buses);
  j["branches"] = std::move(branches);
  j["generators"] = std::move(gens);
  return j;
}

}  // namespace gridsense
