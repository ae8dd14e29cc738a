#pragma once

// Flat key = value configuration with dotted keys. '#' starts a comment.
//
//   experiment = converge-m
//   potential.kind = quadratic
//   potential.q = 1.0
//   m.list = 4, 8, 16, 32, 64
//
// Every key must be consumed by the experiment that reads the file; leftovers
// are reported as errors so typos do not silently fall back to defaults.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace crowdflow {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Parses a real number; accepts inf / infinity (any case).
double parse_number(std::string_view text);

class Config {
 public:
  static Config parse(std::string_view text);
  static Config load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  void set(const std::string& key, std::string value);

  std::string text(const std::string& key) const;
  std::string text_or(const std::string& key, const std::string& fallback) const;
  double number(const std::string& key) const;
  double number_or(const std::string& key, double fallback) const;
  std::size_t count_or(const std::string& key, std::size_t fallback) const;
  std::vector<double> numbers(const std::string& key) const;
  std::vector<double> numbers_or(const std::string& key, std::vector<double> fallback) const;
  bool flag_or(const std::string& key, bool fallback) const;

  /// Keys that were never read.
  std::vector<std::string> unused() const;
  /// Throws ConfigError if any key was never read.
  void require_all_used() const;

  /// Sorted "key=value" lines; the basis of the config hash.
  std::string canonical() const;
  /// FNV-1a of the canonical text, as 16 hex digits.
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

std::uint64_t fnv1a(std::string_view bytes);

}  // namespace crowdflow
