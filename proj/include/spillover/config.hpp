#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace spillover {

/// Minimal TOML-style run configuration: `key = value` lines, dotted
/// `[section.sub]` headers, `#` comments, scalar values (integer, float,
/// bool, double-quoted string) and flat arrays of scalars. Keys are stored
/// fully qualified ("section.key"). Parse errors carry line numbers.
class RunConfig {
 public:
  static RunConfig parse(const std::string& text);
  static RunConfig from_file(const std::string& path);

  bool has(const std::string& key) const;
  std::string get_string(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_array(const std::string& key) const;
  std::vector<double> get_double_array(const std::string& key) const;

  std::string get_string_or(const std::string& key, const std::string& fallback) const;
  double get_double_or(const std::string& key, double fallback) const;
  std::int64_t get_int_or(const std::string& key, std::int64_t fallback) const;
  bool get_bool_or(const std::string& key, bool fallback) const;

  /// All keys in insertion order; used to reject unknown keys and to
  /// round-trip the configuration through the run manifest.
  const std::vector<std::string>& keys() const { return order_; }
  std::string serialize() const;
  /// FNV-1a over the canonical serialization.
  std::string hash() const;

  void set(const std::string& key, const std::string& raw_value);

 private:
  struct Entry {
    std::string raw;             // canonical scalar text
    std::vector<std::string> array;
    bool is_array = false;
  };
  std::map<std::string, Entry> values_;
  std::vector<std::string> order_;
  const Entry& entry(const std::string& key) const;
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace spillover
