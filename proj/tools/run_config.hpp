#pragma once

// Layered run configuration: built-in defaults, then a JSON config file, then
// command-line flags. The resolved object is what a run records in its
// manifest, and a manifest can be fed back as a config file.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

namespace dualkb::cli {

using Json = nlohmann::ordered_json;

struct Setting {
  std::string key;
  Json default_value;
  std::string help;
};

/// Registers one CLI option per setting and resolves the layers after parsing.
class RunConfig {
 public:
  RunConfig(CLI::App& sub, std::vector<Setting> settings);

  /// Applies the config file named by --config (a plain object or a manifest
  /// with a "config" member) and then the flags given on the command line.
  /// Throws CLI::ValidationError for unknown keys and ill-typed values.
  void resolve();

  const Json& values() const { return values_; }
  const Json& at(const std::string& key) const { return values_.at(key); }
  std::string str(const std::string& key) const { return at(key).get<std::string>(); }
  double num(const std::string& key) const { return at(key).get<double>(); }
  std::int64_t integer(const std::string& key) const { return at(key).get<std::int64_t>(); }
  std::uint64_t seed(const std::string& key) const { return at(key).get<std::uint64_t>(); }
  bool flag(const std::string& key) const { return at(key).get<bool>(); }
  std::vector<std::string> strings(const std::string& key) const { return at(key).get<std::vector<std::string>>(); }
  std::vector<int> ints(const std::string& key) const { return at(key).get<std::vector<int>>(); }

 private:
  CLI::App* sub_;
  std::vector<Setting> settings_;
  std::map<std::string, std::vector<std::string>> raw_;
  std::string config_path_;
  Json values_;
};

/// Converts text to the JSON type of `like`. Integer arrays accept "a-b"
/// ranges.
Json convert(const std::string& key, const std::vector<std::string>& raw, const Json& like);

}  // namespace dualkb::cli
