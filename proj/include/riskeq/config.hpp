#pragma once

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "riskeq/market.hpp"
#include "riskeq/risk.hpp"

// Experiment configuration: one flat JSON document per run.  Numbers may be
// written either as JSON numbers or as "num/den" strings so that rational
// model parameters like "23/2" land on their nearest binary64 value exactly.

namespace riskeq {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GridSpec {
  double x_min = 0.0, x_max = 0.0;
  double y_min = 0.0, y_max = 0.0;
  int nx = 1, ny = 1;

  bool operator==(const GridSpec&) const = default;
};

struct ExperimentConfig {
  MarketInstance instance;
  RiskSet risk;
  std::string mode;  // rnsp | rasp | raeq-census | raad | tatonnement | vector-field
  std::optional<ProbabilityVector> measure;  // rnsp mode
  std::optional<PriceVector> start;          // tatonnement / newton start prices
  double tau = 0.1;
  int max_iter = 100;
  std::optional<GridSpec> grid;
  std::optional<std::string> sweep_method;  // newton | tatonnement (raeq-census)
  double tol = 1e-6;
  std::string out_dir = ".";
};

inline bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  auto opt_eq = [](const auto& x, const auto& y, auto field) {
    if (x.has_value() != y.has_value()) return false;
    return !x.has_value() || field(*x) == field(*y);
  };
  if (a.instance.c != b.instance.c || a.instance.c_r != b.instance.c_r ||
      a.instance.V != b.instance.V || a.instance.r != b.instance.r)
    return false;
  if (a.risk.size() != b.risk.size()) return false;
  for (std::size_t k = 0; k < a.risk.size(); ++k)
    if (a.risk.extremes[k].p != b.risk.extremes[k].p) return false;
  return a.mode == b.mode && a.tau == b.tau && a.max_iter == b.max_iter &&
         a.tol == b.tol && a.out_dir == b.out_dir &&
         opt_eq(a.measure, b.measure, [](const ProbabilityVector& v) { return v.p; }) &&
         opt_eq(a.start, b.start, [](const PriceVector& v) { return v.pi; }) &&
         opt_eq(a.grid, b.grid, [](const GridSpec& g) { return g; }) &&
         opt_eq(a.sweep_method, b.sweep_method, [](const std::string& s) { return s; });
}

namespace detail {

inline const std::vector<std::string>& known_modes() {
  static const std::vector<std::string> modes{"rnsp",  "rasp",        "raeq-census",
                                              "raad",  "tatonnement", "vector-field"};
  return modes;
}

inline double parse_number(const nlohmann::json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) {
    const std::string s = v.get<std::string>();
    const auto slash = s.find('/');
    if (slash == std::string::npos || slash == 0 || slash + 1 == s.size())
      throw ConfigError("key '" + key + "': expected a number or \"num/den\", got \"" + s +
                        "\"");
    auto to_double = [&](const std::string& part) {
      char* end = nullptr;
      const double x = std::strtod(part.c_str(), &end);
      if (end != part.c_str() + part.size())
        throw ConfigError("key '" + key + "': malformed rational \"" + s + "\"");
      return x;
    };
    const double num = to_double(s.substr(0, slash));
    const double den = to_double(s.substr(slash + 1));
    if (den == 0.0) throw ConfigError("key '" + key + "': zero denominator in \"" + s + "\"");
    return num / den;
  }
  throw ConfigError("key '" + key + "': expected a number");
}

inline std::vector<double> parse_array(const nlohmann::json& v, const std::string& key) {
  if (!v.is_array()) throw ConfigError("key '" + key + "': expected an array");
  std::vector<double> out;
  out.reserve(v.size());
  for (const auto& e : v) out.push_back(parse_number(e, key));
  return out;
}

inline std::size_t line_of_offset(const std::string& text, std::size_t byte) {
  std::size_t line = 1;
  for (std::size_t i = 0; i < byte && i < text.size(); ++i)
    if (text[i] == '\n') ++line;
  return line;
}

}  // namespace detail

inline ExperimentConfig parse_config(const std::string& text,
                                     const std::string& origin = "<string>") {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(origin + ":" + std::to_string(detail::line_of_offset(text, e.byte)) +
                      ": " + e.what());
  }
  if (!doc.is_object()) throw ConfigError(origin + ": top level must be an object");

  ExperimentConfig cfg;
  std::size_t n = 0;
  bool have_n = false;
  for (const auto& [key, value] : doc.items()) {
    if (key == "n") {
      if (!value.is_number_integer() || value.get<long long>() < 1)
        throw ConfigError("key 'n': expected an integer >= 1");
      n = value.get<std::size_t>();
      have_n = true;
    } else if (key == "c") {
      cfg.instance.c = detail::parse_number(value, key);
    } else if (key == "c_r") {
      cfg.instance.c_r = detail::parse_array(value, key);
    } else if (key == "V") {
      cfg.instance.V = detail::parse_array(value, key);
    } else if (key == "r") {
      cfg.instance.r = detail::parse_array(value, key);
    } else if (key == "risk_extremes") {
      if (!value.is_array() || value.empty())
        throw ConfigError("key 'risk_extremes': expected a non-empty array of arrays");
      for (const auto& row : value)
        cfg.risk.extremes.push_back(ProbabilityVector{detail::parse_array(row, key)});
    } else if (key == "mode") {
      if (!value.is_string()) throw ConfigError("key 'mode': expected a string");
      cfg.mode = value.get<std::string>();
    } else if (key == "measure") {
      cfg.measure = ProbabilityVector{detail::parse_array(value, key)};
    } else if (key == "start") {
      cfg.start = PriceVector{detail::parse_array(value, key)};
    } else if (key == "tau") {
      cfg.tau = detail::parse_number(value, key);
    } else if (key == "max_iter") {
      if (!value.is_number_integer()) throw ConfigError("key 'max_iter': expected an integer");
      cfg.max_iter = value.get<int>();
    } else if (key == "grid") {
      const std::vector<double> g = detail::parse_array(value, key);
      if (g.size() != 6)
        throw ConfigError("key 'grid': expected [x_min, x_max, y_min, y_max, nx, ny]");
      if (g[4] != std::floor(g[4]) || g[5] != std::floor(g[5]))
        throw ConfigError("key 'grid': nx and ny must be integers");
      cfg.grid = GridSpec{g[0], g[1], g[2], g[3], static_cast<int>(g[4]),
                          static_cast<int>(g[5])};
    } else if (key == "sweep_method") {
      if (!value.is_string()) throw ConfigError("key 'sweep_method': expected a string");
      cfg.sweep_method = value.get<std::string>();
    } else if (key == "tol") {
      cfg.tol = detail::parse_number(value, key);
    } else if (key == "out_dir") {
      if (!value.is_string()) throw ConfigError("key 'out_dir': expected a string");
      cfg.out_dir = value.get<std::string>();
    } else {
      throw ConfigError(origin + ": unknown key '" + key + "'");
    }
  }

  // Cross-field invariants.
  try {
    cfg.instance.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(origin + ": " + e.what());
  }
  if (have_n && n != cfg.instance.scenarios())
    throw ConfigError("key 'n': does not match the scenario arrays");
  if (cfg.risk.extremes.empty())
    throw ConfigError(origin + ": missing required key 'risk_extremes'");
  try {
    cfg.risk.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("key 'risk_extremes': ") + e.what());
  }
  if (cfg.risk.scenarios() != cfg.instance.scenarios())
    throw ConfigError("key 'risk_extremes': scenario count mismatch");
  if (!cfg.mode.empty()) {
    const auto& modes = detail::known_modes();
    if (std::find(modes.begin(), modes.end(), cfg.mode) == modes.end())
      throw ConfigError("key 'mode': unknown mode '" + cfg.mode + "'");
  }
  if (cfg.measure) {
    try {
      cfg.measure->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("key 'measure': ") + e.what());
    }
    if (cfg.measure->size() != cfg.instance.scenarios())
      throw ConfigError("key 'measure': scenario count mismatch");
  }
  if (cfg.start) {
    try {
      cfg.start->validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("key 'start': ") + e.what());
    }
    if (cfg.start->size() != cfg.instance.scenarios())
      throw ConfigError("key 'start': scenario count mismatch");
  }
  if (!(cfg.tau > 0.0)) throw ConfigError("key 'tau': must be > 0");
  if (cfg.max_iter < 1) throw ConfigError("key 'max_iter': must be >= 1");
  if (!(cfg.tol > 0.0)) throw ConfigError("key 'tol': must be > 0");
  if (cfg.grid) {
    if (cfg.grid->nx < 1 || cfg.grid->ny < 1)
      throw ConfigError("key 'grid': resolution must be >= 1");
    if (!(cfg.grid->x_min <= cfg.grid->x_max) || !(cfg.grid->y_min <= cfg.grid->y_max))
      throw ConfigError("key 'grid': box bounds out of order");
  }
  if (cfg.sweep_method && *cfg.sweep_method != "newton" && *cfg.sweep_method != "tatonnement")
    throw ConfigError("key 'sweep_method': expected 'newton' or 'tatonnement'");
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
  nlohmann::json doc;
  doc["n"] = cfg.instance.scenarios();
  doc["c"] = cfg.instance.c;
  doc["c_r"] = cfg.instance.c_r;
  doc["V"] = cfg.instance.V;
  doc["r"] = cfg.instance.r;
  auto& ext = doc["risk_extremes"];
  ext = nlohmann::json::array();
  for (const auto& q : cfg.risk.extremes) ext.push_back(q.p);
  if (!cfg.mode.empty()) doc["mode"] = cfg.mode;
  if (cfg.measure) doc["measure"] = cfg.measure->p;
  if (cfg.start) doc["start"] = cfg.start->pi;
  doc["tau"] = cfg.tau;
  doc["max_iter"] = cfg.max_iter;
  if (cfg.grid)
    doc["grid"] = {cfg.grid->x_min, cfg.grid->x_max, cfg.grid->y_min,
                   cfg.grid->y_max, cfg.grid->nx,    cfg.grid->ny};
  if (cfg.sweep_method) doc["sweep_method"] = *cfg.sweep_method;
  doc["tol"] = cfg.tol;
  doc["out_dir"] = cfg.out_dir;
  return doc.dump(2) + "\n";
}

}  // namespace riskeq
