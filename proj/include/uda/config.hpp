// Structured text files: sections, key = value entries, '#' comments.
// Shared by the experiment harness configs and the micro-world fixtures so
// nothing depends on a serialization library. Grammar in docs/formats.md.
#pragma once

#include <algorithm>
#include <cctype>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uda/common.hpp"

namespace uda::cfg {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

struct Section {
  std::string name;
  std::vector<std::pair<std::string, std::string>> entries;  // insertion order kept

  std::optional<std::string> find(const std::string& key) const {
    for (const auto& [k, v] : entries)
      if (k == key) return v;
    return std::nullopt;
  }

  std::string get(const std::string& key) const {
    auto v = find(key);
    require(v.has_value(), "missing key " + name + "." + key);
    return *v;
  }
  std::string get_or(const std::string& key, const std::string& fallback) const {
    return find(key).value_or(fallback);
  }

  double get_double(const std::string& key) const { return parse_double(key, get(key)); }
  double get_double_or(const std::string& key, double fallback) const {
    auto v = find(key);
    return v ? parse_double(key, *v) : fallback;
  }
  long get_int(const std::string& key) const { return parse_int(key, get(key)); }
  long get_int_or(const std::string& key, long fallback) const {
    auto v = find(key);
    return v ? parse_int(key, *v) : fallback;
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : split_list(get(key))) out.push_back(parse_double(key, tok));
    return out;
  }
  std::vector<std::uint64_t> get_u64s(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (const auto& tok : split_list(get(key))) {
      const long v = parse_int(key, tok);
      require(v >= 0, "key " + name + "." + key + ": negative value " + tok);
      out.push_back(static_cast<std::uint64_t>(v));
    }
    return out;
  }
  std::vector<std::string> get_strings(const std::string& key) const {
    return split_list(get(key));
  }

  // Unknown keys are configuration mistakes; reject them with the key path.
  void check_keys(const std::vector<std::string>& allowed) const {
    for (const auto& [k, v] : entries)
      require(std::find(allowed.begin(), allowed.end(), k) != allowed.end(),
              "unknown key " + name + "." + k);
  }

  static std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> out;
    std::string tok;
    std::istringstream in(value);
    while (std::getline(in, tok, ',')) {
      tok = trim(tok);
      if (!tok.empty()) out.push_back(tok);
    }
    return out;
  }

 private:
  double parse_double(const std::string& key, const std::string& text) const {
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      require(used == text.size(), "trailing characters");
      return v;
    } catch (const std::exception&) {
      throw error("key " + name + "." + key + ": cannot parse '" + text + "' as a number");
    }
  }
  long parse_int(const std::string& key, const std::string& text) const {
    try {
      std::size_t used = 0;
      const long v = std::stol(text, &used);
      require(used == text.size(), "trailing characters");
      return v;
    } catch (const std::exception&) {
      throw error("key " + name + "." + key + ": cannot parse '" + text + "' as an integer");
    }
  }
};

struct Config {
  std::vector<Section> sections;

  const Section* find(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return &s;
    return nullptr;
  }
  const Section& get(const std::string& name) const {
    const Section* s = find(name);
    require(s != nullptr, "missing section [" + name + "]");
    return *s;
  }
  std::vector<const Section*> find_all(const std::string& name) const {
    std::vector<const Section*> out;
    for (const auto& s : sections)
      if (s.name == name) out.push_back(&s);
    return out;
  }

  static Config parse(const std::string& text) {
    Config out;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        require(line.back() == ']', "line " + std::to_string(lineno) + ": unterminated section header");
        Section s;
        s.name = trim(line.substr(1, line.size() - 2));
        require(!s.name.empty(), "line " + std::to_string(lineno) + ": empty section name");
        out.sections.push_back(std::move(s));
        continue;
      }
      const auto eq = line.find('=');
      require(eq != std::string::npos,
              "line " + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
      require(!out.sections.empty(),
              "line " + std::to_string(lineno) + ": entry before any [section]");
      std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
      require(!key.empty(), "line " + std::to_string(lineno) + ": empty key");
      require(!out.sections.back().find(key).has_value(),
              "line " + std::to_string(lineno) + ": duplicate key " + out.sections.back().name +
                  "." + key);
      out.sections.back().entries.emplace_back(std::move(key), std::move(value));
    }
    return out;
  }

  static Config parse_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), "cannot open config file " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    try {
      return parse(buf.str());
    } catch (const error& e) {
      throw error(path + ": " + e.what());
    }
  }

  std::string to_text() const {
    std::ostringstream out;
    for (const auto& s : sections) {
      out << "[" << s.name << "]\n";
      for (const auto& [k, v] : s.entries) out << k << " = " << v << "\n";
      out << "\n";
    }
    return out.str();
  }
};

}  // namespace uda::cfg
