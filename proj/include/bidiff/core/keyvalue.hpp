#pragma once

// Plain-text `key = value` records. Used for scene files, run configs and
// manifests. Blank lines and lines starting with '#' are ignored; keys are
// dotted paths such as `sched3d.steps`.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bidiff/core/error.hpp"

namespace bidiff {

namespace detail {

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

}  // namespace detail

class KeyValues {
 public:
  KeyValues() = default;

  static KeyValues parse(std::string_view text, const std::string& origin = "<text>") {
    KeyValues kv;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      const std::string_view line =
          text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      ++line_no;
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos) {
        throw Error(Errc::parse, origin + ":" + std::to_string(line_no) + ": expected key = value");
      }
      std::string key = detail::trim(std::string_view(t).substr(0, eq));
      if (key.empty()) {
        throw Error(Errc::parse, origin + ":" + std::to_string(line_no) + ": empty key");
      }
      kv.values_[key] = detail::trim(std::string_view(t).substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::io, "cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw Error(Errc::io, "cannot write " + path);
    out << to_string();
    if (!out) throw Error(Errc::io, "write failed for " + path);
  }

  std::string to_string() const {
    std::string s;
    for (const auto& [k, v] : values_) s += k + " = " + v + "\n";
    return s;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  bool empty() const { return values_.empty(); }
  const std::map<std::string, std::string>& entries() const { return values_; }

  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }
  void set(const std::string& key, const char* value) { values_[key] = value; }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }
  template <typename T>
    requires std::is_arithmetic_v<T>
  void set(const std::string& key, T value) {
    if constexpr (std::is_floating_point_v<T>) {
      std::ostringstream os;
      os << std::setprecision(17) << static_cast<double>(value);
      values_[key] = os.str();
    } else {
      values_[key] = std::to_string(value);
    }
  }

  /// Copies every entry of `other`, overwriting duplicates.
  void merge(const KeyValues& other) {
    for (const auto& [k, v] : other.values_) values_[k] = v;
  }

  /// Entries whose key starts with `prefix`, with the prefix removed.
  KeyValues section(const std::string& prefix) const {
    KeyValues out;
    for (const auto& [k, v] : values_) {
      if (k.rfind(prefix, 0) == 0) out.values_[k.substr(prefix.size())] = v;
    }
    return out;
  }

  std::optional<std::string> find(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return std::nullopt;
    return it->second;
  }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    return find(key).value_or(fallback);
  }

  std::string get_string(const std::string& key) const {
    auto v = find(key);
    if (!v) throw Error(Errc::parse, "missing key '" + key + "'");
    return *v;
  }

  double get_double(const std::string& key, double fallback) const {
    const auto v = find(key);
    return v ? to_double(key, *v) : fallback;
  }
  double get_double(const std::string& key) const { return to_double(key, get_string(key)); }

  std::int64_t get_int(const std::string& key, std::int64_t fallback) const {
    const auto v = find(key);
    return v ? to_int(key, *v) : fallback;
  }
  std::int64_t get_int(const std::string& key) const { return to_int(key, get_string(key)); }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto v = find(key);
    if (!v) return fallback;
    std::uint64_t out = 0;
    const auto [p, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
    if (ec != std::errc() || p != v->data() + v->size()) {
      throw Error(Errc::parse, "key '" + key + "': not an unsigned integer: " + *v);
    }
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    const auto v = find(key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "on" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "off" || *v == "no") return false;
    throw Error(Errc::parse, "key '" + key + "': not a boolean: " + *v);
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : detail::split_ws(get_string(key))) out.push_back(to_double(key, tok));
    return out;
  }

 private:
  static double to_double(const std::string& key, const std::string& s) {
    try {
      std::size_t used = 0;
      const double d = std::stod(s, &used);
      if (used != s.size()) throw std::invalid_argument(s);
      return d;
    } catch (const std::exception&) {
      throw Error(Errc::parse, "key '" + key + "': not a number: " + s);
    }
  }

  static std::int64_t to_int(const std::string& key, const std::string& s) {
    std::int64_t out = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || p != s.data() + s.size()) {
      throw Error(Errc::parse, "key '" + key + "': not an integer: " + s);
    }
    return out;
  }

  std::map<std::string, std::string> values_;
};

}  // namespace bidiff
