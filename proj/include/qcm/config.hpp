#pragma once

#include <cctype>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace qcm {

// 64-bit FNV-1a hash, used to fingerprint configuration documents.
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // 14695981039346656037
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string fnv1a_hex(std::string_view s) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(s)));
  return buf;
}

// Render a double so that parsing the text recovers the exact same value.
inline std::string round_trip_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Plain-text configuration document: one `key = value` pair per line,
// full- or trailing-line comments introduced by '#', dotted keys for
// grouping, comma-separated values for lists.  Keys are unique; the
// canonical serialization (sorted keys) round-trips through parse().
class KvConfig {
 public:
  KvConfig() = default;

  static KvConfig parse(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const std::string trimmed = trim(line);
      if (trimmed.empty()) continue;
      const auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": expected `key = value`, got '" + trimmed + "'");
      const std::string key = trim(trimmed.substr(0, eq));
      const std::string value = trim(trimmed.substr(eq + 1));
      if (key.empty())
        throw std::invalid_argument("config line " + std::to_string(line_no) + ": empty key");
      for (char c : key)
        if (!valid_key_char(c))
          throw std::invalid_argument("config line " + std::to_string(line_no) +
                                      ": invalid character in key '" + key + "'");
      if (cfg.entries_.count(key))
        throw std::invalid_argument("config line " + std::to_string(line_no) +
                                    ": duplicate key '" + key + "'");
      cfg.entries_[key] = value;
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
  }

  // Canonical form: keys sorted lexicographically, one pair per line.
  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : entries_) {
      out += k;
      out += " = ";
      out += v;
      out += '\n';
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write config file: " + path);
    out << serialize();
    if (!out) throw std::runtime_error("failed writing config file: " + path);
  }

  std::string hash() const { return fnv1a_hex(serialize()); }

  bool has(const std::string& key) const { return entries_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) { entries_[key] = trim(value); }
  void set(const std::string& key, const char* value) { set(key, std::string(value)); }
  void set(const std::string& key, double value) { entries_[key] = round_trip_double(value); }
  void set(const std::string& key, long long value) { entries_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { entries_[key] = value ? "true" : "false"; }

  const std::string& get_string(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw std::invalid_argument("missing config key: " + key);
    return it->second;
  }
  std::string get_string(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
  }

  double get_double(const std::string& key) const { return parse_double(key, get_string(key)); }
  double get_double(const std::string& key, double fallback) const {
    return has(key) ? get_double(key) : fallback;
  }

  long long get_int(const std::string& key) const { return parse_int(key, get_string(key)); }
  long long get_int(const std::string& key, long long fallback) const {
    return has(key) ? get_int(key) : fallback;
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get_string(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config key " + key + ": expected boolean, got '" + v + "'");
  }
  bool get_bool(const std::string& key, bool fallback) const {
    return has(key) ? get_bool(key) : fallback;
  }

  std::vector<std::string> get_string_list(const std::string& key) const {
    std::vector<std::string> out;
    for (const std::string& item : split(get_string(key))) {
      if (item.empty())
        throw std::invalid_argument("config key " + key + ": empty list element");
      out.push_back(item);
    }
    if (out.empty()) throw std::invalid_argument("config key " + key + ": empty list");
    return out;
  }

  std::vector<double> get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const std::string& item : get_string_list(key)) out.push_back(parse_double(key, item));
    return out;
  }

  std::vector<std::uint64_t> get_u64_list(const std::string& key) const {
    std::vector<std::uint64_t> out;
    for (const std::string& item : get_string_list(key)) {
      const long long v = parse_int(key, item);
      if (v < 0) throw std::invalid_argument("config key " + key + ": negative value");
      out.push_back(static_cast<std::uint64_t>(v));
    }
    return out;
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }

  friend bool operator==(const KvConfig& a, const KvConfig& b) {
    return a.entries_ == b.entries_;
  }

 private:
  static bool valid_key_char(char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
  }

  static std::string trim(const std::string& s) {
    auto b = s.begin(), e = s.end();
    while (b != e && std::isspace(static_cast<unsigned char>(*b))) ++b;
    while (e != b && std::isspace(static_cast<unsigned char>(*(e - 1)))) --e;
    return std::string(b, e);
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
      if (c == ',') {
        out.push_back(trim(cur));
        cur.clear();
      } else {
        cur += c;
      }
    }
    out.push_back(trim(cur));
    return out;
  }

  static double parse_double(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size())
      throw std::invalid_argument("config key " + key + ": expected number, got '" + v + "'");
    return x;
  }

  static long long parse_int(const std::string& key, const std::string& v) {
    char* end = nullptr;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || end != v.c_str() + v.size())
      throw std::invalid_argument("config key " + key + ": expected integer, got '" + v + "'");
    return x;
  }

  std::map<std::string, std::string> entries_;
};

}  // namespace qcm
