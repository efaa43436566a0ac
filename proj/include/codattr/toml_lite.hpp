#pragma once

// Minimal TOML subset reader for experiment configs: [sections], scalar
// key = value pairs (strings, integers, floats, booleans), and # comments.
// Deliberately small; configs that need more structure belong in JSON files
// referenced from here.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>

#include "codattr/util.hpp"

namespace codattr {

class TomlLite {
 public:
  using Value = std::variant<std::string, std::int64_t, double, bool>;

  static TomlLite parse(std::string text) {
    TomlLite t;
    t.raw_ = std::move(text);
    std::string section;
    std::size_t line_no = 0;
    for (auto raw_line : split_lines(t.raw_)) {
      ++line_no;
      std::string_view line = strip_comment(raw_line);
      line = trim(line);
      if (line.empty()) continue;

      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
        section = std::string(trim(line.substr(1, line.size() - 2)));
        if (section.empty())
          throw ConfigError("config line " + std::to_string(line_no) + ": empty section name");
        continue;
      }

      const std::size_t eq = line.find('=');
      if (eq == std::string_view::npos)
        throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
      const std::string key = std::string(trim(line.substr(0, eq)));
      const std::string_view value = trim(line.substr(eq + 1));
      if (key.empty() || value.empty())
        throw ConfigError("config line " + std::to_string(line_no) + ": empty key or value");
      t.values_[section + "." + key] = parse_value(value, line_no);
    }
    return t;
  }

  static TomlLite parse_file(const std::filesystem::path& path) {
    std::string text;
    try {
      text = read_file(path);
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
    return parse(std::move(text));
  }

  const std::string& raw() const { return raw_; }

  bool has(const std::string& section, const std::string& key) const {
    return values_.count(section + "." + key) != 0;
  }

  std::string get_string(const std::string& section, const std::string& key) const {
    const Value& v = lookup(section, key);
    if (const auto* s = std::get_if<std::string>(&v)) return *s;
    throw ConfigError("config key " + section + "." + key + " must be a string");
  }

  std::int64_t get_int(const std::string& section, const std::string& key) const {
    const Value& v = lookup(section, key);
    if (const auto* i = std::get_if<std::int64_t>(&v)) return *i;
    throw ConfigError("config key " + section + "." + key + " must be an integer");
  }

  double get_double(const std::string& section, const std::string& key) const {
    const Value& v = lookup(section, key);
    if (const auto* d = std::get_if<double>(&v)) return *d;
    if (const auto* i = std::get_if<std::int64_t>(&v)) return static_cast<double>(*i);
    throw ConfigError("config key " + section + "." + key + " must be a number");
  }

  bool get_bool(const std::string& section, const std::string& key) const {
    const Value& v = lookup(section, key);
    if (const auto* b = std::get_if<bool>(&v)) return *b;
    throw ConfigError("config key " + section + "." + key + " must be a boolean");
  }

  std::string get_string_or(const std::string& section, const std::string& key,
                            std::string fallback) const {
    return has(section, key) ? get_string(section, key) : std::move(fallback);
  }
  std::int64_t get_int_or(const std::string& section, const std::string& key,
                          std::int64_t fallback) const {
    return has(section, key) ? get_int(section, key) : fallback;
  }
  double get_double_or(const std::string& section, const std::string& key, double fallback) const {
    return has(section, key) ? get_double(section, key) : fallback;
  }
  bool get_bool_or(const std::string& section, const std::string& key, bool fallback) const {
    return has(section, key) ? get_bool(section, key) : fallback;
  }

 private:
  static std::string_view strip_comment(std::string_view line) {
    bool in_string = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (c == '"' && (i == 0 || line[i - 1] != '\\')) in_string = !in_string;
      if (c == '#' && !in_string) return line.substr(0, i);
    }
    return line;
  }

  static Value parse_value(std::string_view v, std::size_t line_no) {
    if (v.front() == '"') {
      if (v.size() < 2 || v.back() != '"')
        throw ConfigError("config line " + std::to_string(line_no) + ": unterminated string");
      std::string out;
      for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] == '\\' && i + 2 < v.size()) {
          ++i;
          switch (v[i]) {
            case 'n': out += '\n'; break;
            case 't': out += '\t'; break;
            case '"': out += '"'; break;
            case '\\': out += '\\'; break;
            default:
              throw ConfigError("config line " + std::to_string(line_no) +
                                ": unsupported escape \\" + std::string(1, v[i]));
          }
        } else {
          out += v[i];
        }
      }
      return out;
    }
    if (v == "true") return true;
    if (v == "false") return false;

    const std::string s(v);
    try {
      if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
          s.find('E') == std::string::npos) {
        std::size_t used = 0;
        const std::int64_t i = std::stoll(s, &used);
        if (used == s.size()) return i;
      } else {
        std::size_t used = 0;
        const double d = std::stod(s, &used);
        if (used == s.size()) return d;
      }
    } catch (...) {
    }
    throw ConfigError("config line " + std::to_string(line_no) + ": cannot parse value \"" + s +
                      "\"");
  }

  const Value& lookup(const std::string& section, const std::string& key) const {
    auto it = values_.find(section + "." + key);
    if (it == values_.end())
      throw ConfigError("config is missing required key " + section + "." + key);
    return it->second;
  }

  std::string raw_;
  std::map<std::string, Value> values_;
};

}  // namespace codattr
