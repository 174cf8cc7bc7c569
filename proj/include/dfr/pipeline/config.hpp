#pragma once

// Registration configuration as `key = value` text. Sections [stage1], [stage2],
// [filter] and [optimizer] prefix their keys ("stage1.lambda_cd"); keys before
// the first section are top-level. The same dotted names are used by CLI flags.

#include <charconv>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "dfr/common/error.hpp"
#include "dfr/geometry/io.hpp"
#include "dfr/registration/register.hpp"

namespace dfr {

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RegistrationConfig&, std::string_view)> set;
  std::function<std::string(const RegistrationConfig&)> get;
};

namespace config_detail {

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double to_double(std::string_view v) {
  const std::string low = io_detail::lower(std::string(v));
  if (low == "inf" || low == "+inf" || low == "infinity") return std::numeric_limits<double>::infinity();
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out))
    throw InputError("expected a number, got '" + std::string(v) + "'");
  return out;
}

inline int to_int(std::string_view v) {
  int out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw InputError("expected an integer, got '" + std::string(v) + "'");
  return out;
}

inline bool to_bool(std::string_view v) {
  const std::string low = io_detail::lower(std::string(v));
  if (low == "true" || low == "1" || low == "yes" || low == "on") return true;
  if (low == "false" || low == "0" || low == "no" || low == "off") return false;
  throw InputError("expected a boolean, got '" + std::string(v) + "'");
}

inline std::string to_string_value(std::string_view v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') v = v.substr(1, v.size() - 2);
  return std::string(v);
}

inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::string s;
  io_detail::append_number(s, v);
  return s;
}

template <typename Field>
ConfigKey real(std::string name, std::string help, Field field) {
  return {std::move(name), std::move(help),
          [field](RegistrationConfig& c, std::string_view v) { field(c) = to_double(v); },
          [field](const RegistrationConfig& c) { return fmt(field(const_cast<RegistrationConfig&>(c))); }};
}

template <typename Field>
ConfigKey integer(std::string name, std::string help, Field field) {
  return {std::move(name), std::move(help),
          [field](RegistrationConfig& c, std::string_view v) { field(c) = to_int(v); },
          [field](const RegistrationConfig& c) {
            return std::to_string(field(const_cast<RegistrationConfig&>(c)));
          }};
}

template <typename Field>
ConfigKey boolean(std::string name, std::string help, Field field) {
  return {std::move(name), std::move(help),
          [field](RegistrationConfig& c, std::string_view v) { field(c) = to_bool(v); },
          [field](const RegistrationConfig& c) {
            return std::string(field(const_cast<RegistrationConfig&>(c)) ? "true" : "false");
          }};
}

inline void add_stage_keys(std::vector<ConfigKey>& keys, const std::string& prefix,
                           StageConfig RegistrationConfig::*stage) {
  auto st = [stage](RegistrationConfig& c) -> StageConfig& { return c.*stage; };
  keys.push_back(boolean(prefix + ".enabled", "run this stage", [st](RegistrationConfig& c) -> bool& {
    return st(c).enabled;
  }));
  keys.push_back(real(prefix + ".lambda_cd", "Chamfer weight",
                      [st](RegistrationConfig& c) -> double& { return st(c).weights.cd; }));
  keys.push_back(real(prefix + ".lambda_corr", "correspondence weight",
                      [st](RegistrationConfig& c) -> double& { return st(c).weights.corr; }));
  keys.push_back(real(prefix + ".lambda_arap", "rigidity weight",
                      [st](RegistrationConfig& c) -> double& { return st(c).weights.arap; }));
  keys.push_back(real(prefix + ".alpha_smooth", "rotation smoothness weight inside the rigidity term",
                      [st](RegistrationConfig& c) -> double& { return st(c).weights.alpha_smooth; }));
  keys.push_back(real(prefix + ".eps", "convergence threshold on the energy decrease",
                      [st](RegistrationConfig& c) -> double& { return st(c).eps; }));
}

}  // namespace config_detail

// Every accepted key, in file order.
inline const std::vector<ConfigKey>& config_keys() {
  using namespace config_detail;
  using C = RegistrationConfig;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    k.push_back(integer("update_interval", "iterations between correspondence refreshes",
                        [](C& c) -> int& { return c.update_interval; }));
    k.push_back(integer("patience", "tolerated consecutive iterations without sufficient decrease",
                        [](C& c) -> int& { return c.patience; }));
    k.push_back(integer("max_iterations", "iteration cap per stage", [](C& c) -> int& { return c.max_iterations; }));
    k.push_back(real("node_ratio", "deformation nodes as a fraction of source vertices",
                     [](C& c) -> double& { return c.node_ratio; }));
    k.push_back(integer("skin_neighbors", "nodes bound to each vertex", [](C& c) -> int& { return c.skin_neighbors; }));
    k.push_back(integer("cd_stride", "Chamfer subsampling stride over source vertices",
                        [](C& c) -> int& { return c.cd_stride; }));
    k.push_back(integer("dense_geodesic_limit", "largest source size with a precomputed geodesic matrix",
                        [](C& c) -> int& { return c.dense_geodesic_limit; }));
    k.push_back({"feature_command", "command producing features for the deformed source ({mesh}, {out})",
                 [](C& c, std::string_view v) { c.feature_command = to_string_value(v); },
                 [](const C& c) { return "\"" + c.feature_command + "\""; }});
    add_stage_keys(k, "stage1", &C::stage1);
    add_stage_keys(k, "stage2", &C::stage2);
    k.push_back(real("filter.tau", "filter threshold as a fraction of sqrt(source area); inf disables",
                     [](C& c) -> double& { return c.tau; }));
    k.push_back(real("optimizer.learning_rate", "step size", [](C& c) -> double& { return c.optimizer.learning_rate; }));
    k.push_back(real("optimizer.beta1", "first moment decay", [](C& c) -> double& { return c.optimizer.beta1; }));
    k.push_back(real("optimizer.beta2", "second moment decay", [](C& c) -> double& { return c.optimizer.beta2; }));
    k.push_back(real("optimizer.epsilon", "denominator guard", [](C& c) -> double& { return c.optimizer.epsilon; }));
    k.push_back(boolean("optimizer.line_search", "monotone backtracking",
                        [](C& c) -> bool& { return c.optimizer.line_search; }));
    k.push_back(integer("optimizer.max_backtracks", "halvings per step under line search",
                        [](C& c) -> int& { return c.optimizer.max_backtracks; }));
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys())
    if (k.name == name) return &k;
  return nullptr;
}

// Throws InputError for unknown keys or malformed values.
inline void set_config_value(RegistrationConfig& cfg, std::string_view key, std::string_view value) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw InputError("unknown config key '" + std::string(key) + "'");
  try {
    k->set(cfg, config_detail::trim(value));
  } catch (const InputError& e) {
    throw InputError("config key '" + std::string(key) + "': " + e.what());
  }
}

inline std::string get_config_value(const RegistrationConfig& cfg, std::string_view key) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw InputError("unknown config key '" + std::string(key) + "'");
  return k->get(cfg);
}

// Applies `text` on top of `base`. `path` only labels error messages.
inline RegistrationConfig parse_config(std::string_view text, const std::string& path = "<config>",
                                       RegistrationConfig base = {}) {
  static const char* const sections[] = {"stage1", "stage2", "filter", "optimizer"};
  std::string section;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const std::string where = "line " + std::to_string(line_no);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(path, where, "unterminated section header");
      section = std::string(config_detail::trim(line.substr(1, line.size() - 2)));
      bool known = false;
      for (const char* s : sections) known |= section == s;
      if (!known) throw ParseError(path, where, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(path, where, "expected 'key = value'");
    const std::string_view key = config_detail::trim(line.substr(0, eq));
    const std::string_view value = config_detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(path, where, "empty key");
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    try {
      set_config_value(base, full, value);
    } catch (const InputError& e) {
      throw ParseError(path, where, e.what());
    }
  }
  return base;
}

inline RegistrationConfig load_config(const std::string& path, RegistrationConfig base = {}) {
  return parse_config(io_detail::read_file(path), path, std::move(base));
}

// Round-trippable text form of every key.
inline std::string dump_config(const RegistrationConfig& cfg) {
  std::string out;
  std::string section;
  for (const auto& k : config_keys()) {
    const auto dot = k.name.find('.');
    const std::string sec = dot == std::string::npos ? "" : k.name.substr(0, dot);
    const std::string key = dot == std::string::npos ? k.name : k.name.substr(dot + 1);
    if (sec != section) {
      out += "\n[" + sec + "]\n";
      section = sec;
    }
    out += key + " = " + k.get(cfg) + "  # " + k.help + "\n";
  }
  return out;
}

}  // namespace dfr
