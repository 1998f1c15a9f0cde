// Copyright 2026 The Shrink Authors
// Licensed under the Apache License, Version 2.0

#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "shrink/error.hpp"
#include "shrink/serialize.hpp"

namespace shrink {

/// Flat `key=value` settings. Lines starting with '#' are comments; blank
/// lines are ignored; surrounding whitespace is trimmed.
class ConfigMap {
public:
  static ConfigMap parse(const std::string &text, const std::string &origin = "config") {
    ConfigMap c;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty() || line[0] == '#')
        continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value, got \"" + line + "\"");
      const std::string key = trim(line.substr(0, eq));
      if (key.empty())
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
      c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
  }

  static ConfigMap load(const std::filesystem::path &path) {
    std::string text;
    try {
      text = io::read_file(path);
    } catch (const IoError &e) {
      throw ConfigError(std::string("cannot read config file: ") + e.what());
    }
    return parse(text, path.string());
  }

  /// Parses one `key=value` override.
  void set_assignment(const std::string &assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("override \"" + assignment + "\" is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void set(const std::string &key, const std::string &value) { values_[key] = value; }
  void erase(const std::string &key) { values_.erase(key); }

  /// Values of `over` win.
  void merge(const ConfigMap &over) {
    for (const auto &[k, v] : over.values_)
      values_[k] = v;
  }

  bool has(const std::string &key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string> &values() const { return values_; }

  std::string get(const std::string &key, const std::string &fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  double get_double(const std::string &key, double fallback) const {
    if (!has(key))
      return fallback;
    const std::string &s = values_.at(key);
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == s.size())
        return v;
    } catch (const std::exception &) {
    }
    throw ConfigError("config key " + key + ": \"" + s + "\" is not a number");
  }

  std::uint64_t get_uint(const std::string &key, std::uint64_t fallback) const {
    if (!has(key))
      return fallback;
    const std::string &s = values_.at(key);
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
      throw ConfigError("config key " + key + ": \"" + s + "\" is not a non-negative integer");
    return v;
  }

  bool get_bool(const std::string &key, bool fallback) const {
    if (!has(key))
      return fallback;
    const std::string &s = values_.at(key);
    if (s == "1" || s == "true" || s == "yes" || s == "on")
      return true;
    if (s == "0" || s == "false" || s == "no" || s == "off")
      return false;
    throw ConfigError("config key " + key + ": \"" + s + "\" is not a boolean");
  }

  /// Throws on the first key not in `known`.
  void require_known(const std::vector<std::string> &known) const {
    for (const auto &[k, v] : values_) {
      bool ok = false;
      for (const auto &n : known)
        ok = ok || n == k;
      if (!ok)
        throw ConfigError("unknown config key \"" + k + "\"");
    }
  }

  std::string serialize() const {
    std::string out;
    for (const auto &[k, v] : values_)
      out += k + "=" + v + "\n";
    return out;
  }

private:
  static std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos)
      return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  std::map<std::string, std::string> values_;
};

} // namespace shrink
