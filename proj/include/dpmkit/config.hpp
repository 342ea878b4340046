#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "dpmkit/common.hpp"

namespace dpmkit {

// Flat `key = value` configuration with dotted section prefixes, e.g.
//   spt.oiou_threshold = 0.3
// Lines starting with '#' and blank lines are ignored.
class Config {
 public:
  Config() = default;

  static Config parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto first = line.find_first_not_of(" \t\r");
      if (first == std::string::npos || line[first] == '#') continue;
      const auto eq = line.find('=');
      require(eq != std::string::npos, ErrorKind::config,
              "config: missing '=' on line " + std::to_string(lineno));
      cfg.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorKind::io, "config: cannot open: " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(text);
  }

  bool has(const std::string& key) const { return values_.count(key) > 0; }

  std::string get_str(const std::string& key, const std::string& dflt = "") const {
    auto it = values_.find(key);
    return it == values_.end() ? dflt : it->second;
  }

  std::string require_str(const std::string& key) const {
    auto it = values_.find(key);
    require(it != values_.end(), ErrorKind::config, "config: missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      return std::stod(it->second);
    } catch (...) {
      fail(ErrorKind::config, "config: key '" + key + "' is not a number: " + it->second);
    }
  }

  int get_int(const std::string& key, int dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    try {
      return std::stoi(it->second);
    } catch (...) {
      fail(ErrorKind::config, "config: key '" + key + "' is not an integer: " + it->second);
    }
  }

  bool get_bool(const std::string& key, bool dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    const std::string& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    fail(ErrorKind::config, "config: key '" + key + "' is not a boolean: " + v);
  }

  // Comma-separated ints, e.g. "2,4".
  std::vector<int> get_int_list(const std::string& key, std::vector<int> dflt) const {
    auto it = values_.find(key);
    if (it == values_.end()) return dflt;
    std::vector<int> out;
    std::istringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      tok = trim(tok);
      if (tok.empty()) continue;
      out.push_back(std::stoi(tok));
    }
    return out;
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  // Master seed; DPMKIT_SEED in the environment overrides the config value.
  uint64_t seed() const {
    if (const char* env = std::getenv("DPMKIT_SEED")) return std::strtoull(env, nullptr, 10);
    return uint64_t(get_int("seed", 7));
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace dpmkit
