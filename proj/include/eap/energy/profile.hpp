#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "eap/error.hpp"

namespace eap {

struct MemoryLevel {
  std::string name;
  double energy = 1.0;                   ///< per 16-bit access, in MAC units
  std::optional<std::uint64_t> capacity;  ///< 16-bit words; nullopt = unbounded

  friend bool operator==(const MemoryLevel&, const MemoryLevel&) = default;
};

/// Memory hierarchy (outermost first) plus MAC energy and datapath widths.
struct HardwareProfile {
  std::vector<MemoryLevel> levels;
  double mac_energy = 1.0;
  unsigned weight_bits = 16;
  unsigned activation_bits = 16;
  double compression_overhead = 0.1;

  void validate() const {
    if (levels.size() < 2) throw ConfigError("profile: need at least two memory levels");
    if (levels.front().capacity) throw ConfigError("profile: outermost level must be unbounded");
    for (std::size_t i = 0; i < levels.size(); ++i) {
      const auto& l = levels[i];
      if (!(l.energy > 0.0)) throw ConfigError("profile: level '" + l.name + "' energy must be positive");
      if (i > 0) {
        if (!l.capacity) throw ConfigError("profile: only the outermost level may be unbounded ('" + l.name + "')");
        if (*l.capacity == 0) throw ConfigError("profile: level '" + l.name + "' has zero capacity");
        if (!(l.energy < levels[i - 1].energy)) {
          throw ConfigError("profile: energies must strictly decrease inward ('" + l.name + "')");
        }
      }
    }
    if (!(mac_energy >= 0.0)) throw ConfigError("profile: mac_energy must be nonnegative");
    if (weight_bits == 0 || activation_bits == 0) throw ConfigError("profile: bitwidths must be positive");
    if (!(compression_overhead >= 0.0)) throw ConfigError("profile: compression_overhead must be nonnegative");
  }

  friend bool operator==(const HardwareProfile&, const HardwareProfile&) = default;
};

/// DRAM 200, global buffer 6, array 2, register file 1 (MAC = 1).
inline HardwareProfile default_profile() {
  HardwareProfile hw;
  hw.levels = {{"dram", 200.0, std::nullopt},
               {"global_buffer", 6.0, 65536},
               {"array", 2.0, 4096},
               {"register_file", 1.0, 512}};
  return hw;
}

inline nlohmann::json to_json(const HardwareProfile& hw) {
  nlohmann::json j;
  j["mac_energy"] = hw.mac_energy;
  j["weight_bits"] = hw.weight_bits;
  j["activation_bits"] = hw.activation_bits;
  j["compression_overhead"] = hw.compression_overhead;
  for (const auto& l : hw.levels) {
    nlohmann::json lj{{"name", l.name}, {"energy", l.energy}};
    if (l.capacity) lj["capacity"] = *l.capacity;
    else lj["capacity"] = "unbounded";
    j["level"].push_back(lj);
  }
  return j;
}

namespace detail {

using TomlValue = std::variant<double, std::string>;
using TomlTable = std::map<std::string, TomlValue>;

struct TomlDoc {
  TomlTable root;
  std::map<std::string, std::vector<TomlTable>> arrays;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

/// Flat TOML subset: `key = number|"string"`, `[[array]]` table headers, `#` comments.
inline TomlDoc parse_toml_subset(std::istream& is, const std::string& origin) {
  TomlDoc doc;
  TomlTable* cur = &doc.root;
  std::string line;
  for (int lineno = 1; std::getline(is, line); ++lineno) {
    auto fail = [&](const std::string& msg) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + msg);
    };
    bool in_str = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      if (line[i] == '"') in_str = !in_str;
      if (line[i] == '#' && !in_str) {
        line.resize(i);
        break;
      }
    }
    line = trim(line);
    if (line.empty()) continue;
    if (line.rfind("[[", 0) == 0) {
      if (line.size() < 5 || line.substr(line.size() - 2) != "]]") fail("malformed array-of-tables header");
      auto& vec = doc.arrays[trim(line.substr(2, line.size() - 4))];
      vec.emplace_back();
      cur = &vec.back();
      continue;
    }
    if (line.front() == '[') fail("plain tables are not supported");
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty()) fail("empty key or value");
    if (val.front() == '"') {
      if (val.size() < 2 || val.back() != '"') fail("unterminated string");
      (*cur)[key] = val.substr(1, val.size() - 2);
    } else {
      std::string num;
      for (char ch : val) {
        if (ch != '_') num.push_back(ch);
      }
      std::size_t used = 0;
      double d = 0.0;
      try {
        d = std::stod(num, &used);
      } catch (const std::exception&) {
        fail("bad number '" + val + "'");
      }
      if (used != num.size()) fail("bad number '" + val + "'");
      (*cur)[key] = d;
    }
  }
  return doc;
}

}  // namespace detail

inline HardwareProfile profile_from_json(const nlohmann::json& j) {
  HardwareProfile hw;
  try {
    hw.mac_energy = j.value("mac_energy", 1.0);
    hw.weight_bits = j.value("weight_bits", 16u);
    hw.activation_bits = j.value("activation_bits", 16u);
    hw.compression_overhead = j.value("compression_overhead", 0.1);
    for (const auto& lj : j.at("level")) {
      MemoryLevel l;
      l.name = lj.at("name").get<std::string>();
      l.energy = lj.at("energy").get<double>();
      if (lj.contains("capacity") && !lj["capacity"].is_string()) {
        l.capacity = lj["capacity"].get<std::uint64_t>();
      } else if (lj.contains("capacity") && lj["capacity"].get<std::string>() != "unbounded") {
        throw ConfigError("profile: capacity must be an integer or \"unbounded\"");
      }
      hw.levels.push_back(l);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("profile: ") + e.what());
  }
  hw.validate();
  return hw;
}

inline HardwareProfile profile_from_toml(std::istream& is, const std::string& origin = "<toml>") {
  auto doc = detail::parse_toml_subset(is, origin);
  nlohmann::json j = nlohmann::json::object();
  auto put = [](nlohmann::json& dst, const std::string& k, const detail::TomlValue& v) {
    if (const auto* d = std::get_if<double>(&v)) dst[k] = *d;
    else dst[k] = std::get<std::string>(v);
  };
  for (const auto& [k, v] : doc.root) put(j, k, v);
  for (const auto& [k, v] : doc.arrays) {
    if (k != "level") throw ConfigError(origin + ": unknown table array [[" + k + "]]");
    for (const auto& t : v) {
      nlohmann::json lj = nlohmann::json::object();
      for (const auto& [tk, tv] : t) put(lj, tk, tv);
      j["level"].push_back(lj);
    }
  }
  // Integral fields arrive as doubles from the TOML reader.
  for (const char* key : {"weight_bits", "activation_bits"}) {
    if (j.contains(key)) {
      const double d = j[key].get<double>();
      if (d != static_cast<double>(static_cast<unsigned>(d))) throw ConfigError(origin + ": " + key + " must be an integer");
      j[key] = static_cast<unsigned>(d);
    }
  }
  if (j.contains("level")) {
    for (auto& lj : j["level"]) {
      if (lj.contains("capacity") && lj["capacity"].is_number()) {
        const double d = lj["capacity"].get<double>();
        if (d < 0 || d != static_cast<double>(static_cast<std::uint64_t>(d))) {
          throw ConfigError(origin + ": capacity must be a nonnegative integer");
        }
        lj["capacity"] = static_cast<std::uint64_t>(d);
      }
    }
  }
  return profile_from_json(j);
}

/// Loads a `.json` or TOML profile.
inline HardwareProfile load_profile(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open profile " + path.string());
  if (path.extension() == ".json") {
    nlohmann::json j;
    try {
      is >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ": " + e.what());
    }
    return profile_from_json(j);
  }
  return profile_from_toml(is, path.string());
}

}  // namespace eap
