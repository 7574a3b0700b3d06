#pragma once

#include <fstream>
#include <istream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "so3cast/error.hpp"

namespace so3cast::cli {

/// Minimal TOML subset for experiment configs: [table] / [a.b] headers,
/// `key = value` pairs, # comments. Values use JSON syntax (numbers,
/// booleans, double-quoted strings, flat arrays), which covers the TOML
/// scalars these configs need.
inline nlohmann::json parse_toml_lite(std::istream& in) {
  nlohmann::json root = nlohmann::json::object();
  nlohmann::json* table = &root;
  std::string line;
  long line_no = 0;

  auto strip = [](std::string s) {
    bool in_str = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"' && (i == 0 || s[i - 1] != '\\')) in_str = !in_str;
      if (s[i] == '#' && !in_str) {
        s.erase(i);
        break;
      }
    }
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return std::string();
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
  };

  while (std::getline(in, line)) {
    ++line_no;
    const std::string t = strip(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("toml: unterminated table header, line " +
                                             std::to_string(line_no));
      std::string path = t.substr(1, t.size() - 2);
      table = &root;
      std::stringstream ss(path);
      std::string part;
      while (std::getline(ss, part, '.')) {
        if (part.empty()) throw ConfigError("toml: empty table name, line " +
                                            std::to_string(line_no));
        table = &(*table)[part];
      }
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("toml: expected key = value, line " + std::to_string(line_no));
    }
    std::string key = t.substr(0, eq);
    const auto ka = key.find_last_not_of(" \t");
    key = key.substr(0, ka + 1);
    std::string value = t.substr(eq + 1);
    const auto va = value.find_first_not_of(" \t");
    if (va == std::string::npos) throw ConfigError("toml: missing value, line " +
                                                   std::to_string(line_no));
    value = value.substr(va);
    try {
      (*table)[key] = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
      throw ConfigError("toml: cannot parse value '" + value + "', line " +
                        std::to_string(line_no));
    }
  }
  return root;
}

inline nlohmann::json parse_toml_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  return parse_toml_lite(in);
}

/// Recursively merges patch into base (objects merged, scalars overwritten).
inline void deep_merge(nlohmann::json& base, const nlohmann::json& patch) {
  if (!patch.is_object()) {
    base = patch;
    return;
  }
  if (!base.is_object()) base = nlohmann::json::object();
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    deep_merge(base[it.key()], it.value());
  }
}

/// Sets obj at a dotted path ("train.steps") to a JSON-parsed value, falling
/// back to a raw string when the value is not valid JSON.
inline void set_dotted(nlohmann::json& obj, const std::string& dotted,
                       const std::string& value) {
  nlohmann::json* at = &obj;
  std::stringstream ss(dotted);
  std::string part, prev;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  if (parts.empty()) throw ConfigError("override: empty key");
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) at = &(*at)[parts[i]];
  nlohmann::json parsed;
  try {
    parsed = nlohmann::json::parse(value);
  } catch (const nlohmann::json::exception&) {
    parsed = value;
  }
  (*at)[parts.back()] = parsed;
}

}  // namespace so3cast::cli
