#include "spillover/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <sstream>

#include "spillover/csv.hpp"

namespace spillover {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

[[noreturn]] void fail(int line_no, const std::string& msg) {
  throw ConfigError("config parse error at line " + std::to_string(line_no) + ": " + msg);
}

std::string canonical_scalar(const std::string& raw, int line_no) {
  const std::string v = trim(raw);
  if (v.empty()) fail(line_no, "empty value");
  if (v.front() == '"') {
    if (v.size() < 2 || v.back() != '"') fail(line_no, "unterminated string");
    return v;
  }
  if (v == "true" || v == "false") return v;
  // Numeric check: must parse fully as a double.
  char* end = nullptr;
  std::strtod(v.c_str(), &end);
  if (end != v.c_str() + v.size()) fail(line_no, "value '" + v + "' is not a number, bool or string");
  return v;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream iss(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(iss, line)) {
    ++line_no;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail(line_no, "empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail(line_no, "expected key = value");
    const std::string key_local = trim(line.substr(0, eq));
    if (key_local.empty()) fail(line_no, "empty key");
    const std::string key = section.empty() ? key_local : section + "." + key_local;
    std::string value = trim(line.substr(eq + 1));
    if (value.empty()) fail(line_no, "missing value for key '" + key + "'");

    Entry entry;
    if (value.front() == '[') {
      if (value.back() != ']') fail(line_no, "unterminated array");
      entry.is_array = true;
      std::string body = value.substr(1, value.size() - 2);
      std::string item;
      std::istringstream items(body);
      while (std::getline(items, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        entry.array.push_back(canonical_scalar(item, line_no));
      }
    } else {
      entry.raw = canonical_scalar(value, line_no);
    }
    if (!cfg.values_.count(key)) cfg.order_.push_back(key);
    cfg.values_[key] = std::move(entry);
  }
  return cfg;
}

RunConfig RunConfig::from_file(const std::string& path) { return parse(read_text_file(path)); }

const RunConfig::Entry& RunConfig::entry(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  return it->second;
}

bool RunConfig::has(const std::string& key) const { return values_.count(key) > 0; }

std::string RunConfig::get_string(const std::string& key) const {
  const Entry& e = entry(key);
  if (e.is_array) throw ConfigError("key '" + key + "' is an array");
  if (!e.raw.empty() && e.raw.front() == '"') return e.raw.substr(1, e.raw.size() - 2);
  return e.raw;
}

double RunConfig::get_double(const std::string& key) const {
  const std::string v = get_string(key);
  try {
    return std::stod(v);
  } catch (...) {
    throw ConfigError("key '" + key + "' is not numeric: '" + v + "'");
  }
}

std::int64_t RunConfig::get_int(const std::string& key) const {
  const double v = get_double(key);
  const auto i = static_cast<std::int64_t>(v);
  if (static_cast<double>(i) != v) throw ConfigError("key '" + key + "' is not an integer");
  return i;
}

bool RunConfig::get_bool(const std::string& key) const {
  const std::string v = get_string(key);
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("key '" + key + "' is not a bool: '" + v + "'");
}

std::vector<std::string> RunConfig::get_array(const std::string& key) const {
  const Entry& e = entry(key);
  if (!e.is_array) throw ConfigError("key '" + key + "' is not an array");
  std::vector<std::string> out;
  out.reserve(e.array.size());
  for (const auto& v : e.array) {
    if (!v.empty() && v.front() == '"')
      out.push_back(v.substr(1, v.size() - 2));
    else
      out.push_back(v);
  }
  return out;
}

std::vector<double> RunConfig::get_double_array(const std::string& key) const {
  std::vector<double> out;
  for (const auto& v : get_array(key)) out.push_back(std::stod(v));
  return out;
}

std::string RunConfig::get_string_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get_string(key) : fallback;
}
double RunConfig::get_double_or(const std::string& key, double fallback) const {
  return has(key) ? get_double(key) : fallback;
}
std::int64_t RunConfig::get_int_or(const std::string& key, std::int64_t fallback) const {
  return has(key) ? get_int(key) : fallback;
}
bool RunConfig::get_bool_or(const std::string& key, bool fallback) const {
  return has(key) ? get_bool(key) : fallback;
}

void RunConfig::set(const std::string& key, const std::string& raw_value) {
  if (!values_.count(key)) order_.push_back(key);
  Entry e;
  e.raw = canonical_scalar(raw_value, 0);
  values_[key] = std::move(e);
}

std::string RunConfig::serialize() const {
  // Canonical flat form: fully-qualified keys, sorted, one per line.
  std::vector<std::string> keys(order_);
  std::sort(keys.begin(), keys.end());
  std::ostringstream oss;
  for (const auto& k : keys) {
    const Entry& e = values_.at(k);
    oss << k << " = ";
    if (e.is_array) {
      oss << '[';
      for (std::size_t i = 0; i < e.array.size(); ++i) {
        if (i) oss << ", ";
        oss << e.array[i];
      }
      oss << ']';
    } else {
      oss << e.raw;
    }
    oss << '\n';
  }
  return oss.str();
}

std::string RunConfig::hash() const {
  const std::string s = serialize();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace spillover
