#pragma once

// Model checkpoint: one JSON header line, then a binary weight payload.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gridsense/binary_io.hpp"
#include "gridsense/model.hpp"

namespace gridsense {

inline constexpr int model_format_version = 1;

struct ModelCheckpoint {
  NetworkModel model;
  double epsilon = 1e-8;
  std::vector<int> selected_buses;  // empty: every bus instrumented
  std::string grid;
};

inline void write_checkpoint(std::ostream& os, const ModelCheckpoint& c) {
  const nlohmann::json header = {{"format", "gridsense-model"},
                                 {"version", model_format_version},
                                 {"dims", c.model.dims},
                                 {"activation", "tanh"},
                                 {"epsilon", c.epsilon},
                                 {"selected_buses", c.selected_buses},
                                 {"grid", c.grid},
                                 {"parameter_count", c.model.params.size()}};
  os << header.dump() << '\n';
  binary::write_magic(os, "GSMW");
  binary::write<std::uint32_t>(os, model_format_version);
  binary::write<std::uint64_t>(os, static_cast<std::uint64_t>(c.model.params.size()));
  for (Eigen::Index i = 0; i < c.model.params.size(); ++i) binary::write<double>(os, c.model.params[i]);
}

inline ModelCheckpoint read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("model file is empty");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("model header is not valid JSON: ") + e.what());
  }
  if (h.value("format", "") != "gridsense-model") throw DataError("not a model file");
  if (h.value("version", 0) != model_format_version)
    throw DataError("unsupported model version " + std::to_string(h.value("version", 0)));
  if (h.value("activation", "") != "tanh") throw DataError("unsupported activation");

  ModelCheckpoint c;
  try {
    c.model = NetworkModel(h.at("dims").get<std::vector<int>>());
    c.epsilon = h.at("epsilon").get<double>();
    c.selected_buses = h.at("selected_buses").get<std::vector<int>>();
    c.grid = h.value("grid", "");
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed model header: ") + e.what());
  } catch (const DimensionError& e) {
    throw DataError(std::string("malformed model header: ") + e.what());
  }
  binary::expect_magic(is, "GSMW", "model payload");
  if (binary::read<std::uint32_t>(is) != static_cast<std::uint32_t>(model_format_version))
    throw DataError("model payload version mismatch");
  const auto count = binary::read<std::uint64_t>(is);
  if (count != static_cast<std::uint64_t>(c.model.params.size()))
    throw DataError("model payload has " + std::to_string(count) + " parameters, header dims need " +
                    std::to_string(c.model.params.size()));
  for (Eigen::Index i = 0; i < c.model.params.size(); ++i) c.model.params[i] = binary::read<double>(is);
  if (!c.model.params.allFinite()) throw DataError("model contains non-finite parameters");
  return c;
}

inline void save_checkpoint(const ModelCheckpoint& c, const std::filesystem::path& file) {
  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary);
  write_checkpoint(os, c);
  if (!os) throw DataError("cannot write " + file.string());
}

inline ModelCheckpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw DataError("cannot open " + file.string());
  return read_checkpoint(is);
}

}  // namespace gridsense
