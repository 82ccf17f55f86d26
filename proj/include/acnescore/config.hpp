#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>

#include "acnescore/io.hpp"

namespace acnescore {

/// Flat `key = value` settings. Blank lines and lines starting with '#' are skipped.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text, const std::set<std::string>& allowed,
                              std::string_view origin = "<config>") {
    KeyValueConfig cfg;
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto nl = text.find('\n', start);
      const auto raw = text.substr(start, nl == std::string_view::npos ? text.size() - start : nl - start);
      ++line_no;
      const auto line = io::trim(raw);
      if (!line.empty() && line.front() != '#') {
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
          throw Error(ErrorCode::ConfigError, std::string(origin) + ":" + std::to_string(line_no) +
                                                  ": expected key=value");
        }
        std::string key(io::trim(line.substr(0, eq)));
        if (!allowed.empty() && !allowed.contains(key)) {
          throw Error(ErrorCode::ConfigError, "unknown config key '" + key + "'");
        }
        cfg.values_[key] = std::string(io::trim(line.substr(eq + 1)));
      }
      if (nl == std::string_view::npos) break;
      start = nl + 1;
    }
    return cfg;
  }

  static KeyValueConfig load(const std::filesystem::path& path, const std::set<std::string>& allowed) {
    const auto bytes = io::read_bytes(path);
    return parse(std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()), allowed,
                 path.string());
  }

  bool contains(const std::string& key) const { return values_.contains(key); }
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, std::string fallback = {}) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  template <typename T>
  T get_number(const std::string& key, T fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto parsed = io::parse_number<T>(it->second);
    if (!parsed) throw Error(ErrorCode::ConfigError, "config key '" + key + "' is not a number: " + it->second);
    return *parsed;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const auto& v = it->second;
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw Error(ErrorCode::ConfigError, "config key '" + key + "' is not a boolean: " + v);
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace acnescore
