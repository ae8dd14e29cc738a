#include "crowdflow/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <fmt/format.h>

namespace crowdflow {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool valid_key(std::string_view k) {
  if (k.empty() || k.front() == '.' || k.back() == '.') return false;
  return std::all_of(k.begin(), k.end(), [](unsigned char c) { return std::isalnum(c) || c == '.' || c == '_' || c == '-'; });
}

}  // namespace

double parse_number(std::string_view text) {
  const std::string_view t = trim(text);
  const std::string l = lower(t);
  if (l == "inf" || l == "infinity" || l == "+inf") return std::numeric_limits<double>::infinity();
  if (l == "-inf" || l == "-infinity") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const char* begin = t.data();
  const char* end = t.data() + t.size();
  if (!t.empty() && *begin == '+') ++begin;
  const auto res = std::from_chars(begin, end, v);
  if (t.empty() || res.ec != std::errc() || res.ptr != end || std::isnan(v))
    throw ConfigError(fmt::format("not a number: '{}'", t));
  return v;
}

Config Config::parse(std::string_view text) {
  Config cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(fmt::format("line {}: expected key = value", line_no));
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    if (!valid_key(key)) throw ConfigError(fmt::format("line {}: invalid key '{}'", line_no, key));
    if (value.empty()) throw ConfigError(fmt::format("line {}: empty value for '{}'", line_no, key));
    if (!cfg.values_.emplace(std::string(key), std::string(value)).second)
      throw ConfigError(fmt::format("line {}: duplicate key '{}'", line_no, key));
  }
  return cfg;
}

Config Config::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(fmt::format("cannot read config file '{}'", path.string()));
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool Config::has(const std::string& key) const { return values_.count(key) != 0; }

void Config::set(const std::string& key, std::string value) {
  if (!valid_key(key)) throw ConfigError(fmt::format("invalid key '{}'", key));
  values_[key] = std::move(value);
}

std::string Config::text(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(fmt::format("missing required key '{}'", key));
  used_.insert(key);
  return it->second;
}

std::string Config::text_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? text(key) : fallback;
}

double Config::number(const std::string& key) const {
  try {
    return parse_number(text(key));
  } catch (const ConfigError& e) {
    throw ConfigError(fmt::format("key '{}': {}", key, e.what()));
  }
}

double Config::number_or(const std::string& key, double fallback) const { return has(key) ? number(key) : fallback; }

std::size_t Config::count_or(const std::string& key, std::size_t fallback) const {
  if (!has(key)) return fallback;
  const double v = number(key);
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e12)
    throw ConfigError(fmt::format("key '{}': expected a nonnegative integer", key));
  return static_cast<std::size_t>(v);
}

std::vector<double> Config::numbers(const std::string& key) const {
  const std::string raw = text(key);
  std::vector<double> out;
  std::string_view rest = raw;
  while (true) {
    const auto comma = rest.find(',');
    try {
      out.push_back(parse_number(rest.substr(0, comma)));
    } catch (const ConfigError& e) {
      throw ConfigError(fmt::format("key '{}': {}", key, e.what()));
    }
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

std::vector<double> Config::numbers_or(const std::string& key, std::vector<double> fallback) const {
  return has(key) ? numbers(key) : fallback;
}

bool Config::flag_or(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string v = lower(text(key));
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(fmt::format("key '{}': expected a boolean", key));
}

std::vector<std::string> Config::unused() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) out.push_back(k);
  return out;
}

void Config::require_all_used() const {
  const auto left = unused();
  if (!left.empty()) throw ConfigError(fmt::format("unknown key '{}'", left.front()));
}

std::string Config::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string Config::hash() const { return fmt::format("{:016x}", fnv1a(canonical())); }

}  // namespace crowdflow
