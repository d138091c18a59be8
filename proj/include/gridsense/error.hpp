#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace gridsense {

/// Malformed case text. Line and column are 1-based.
class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, std::size_t column, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Well-formed input that violates a grid invariant (dangling bus, zero impedance, ...).
class GridError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Programming error: vector or matrix sizes that do not line up.
class DimensionError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Invalid user configuration. Maps to exit code 2.
class ConfigError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Infeasible or degenerate data (empty split, missing class, ...). Maps to exit code 3.
class DataError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// A solver could not produce a usable result. Maps to exit code 4.
class SolverError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace gridsense
