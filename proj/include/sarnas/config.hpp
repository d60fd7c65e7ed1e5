#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace sarnas {

enum class ValueKind { Size, Real, Text, Flag, Choice };

struct KeySpec {
  std::string name;
  ValueKind kind;
  std::string default_value;
  std::string help;
  std::vector<std::string> choices;  // ValueKind::Choice only
};

/// Every key a command accepts, with its default.
class ConfigSchema {
 public:
  ConfigSchema& size(std::string name, std::size_t def, std::string help);
  ConfigSchema& real(std::string name, double def, std::string help);
  ConfigSchema& text(std::string name, std::string def, std::string help);
  ConfigSchema& flag(std::string name, bool def, std::string help);
  ConfigSchema& choice(std::string name, std::vector<std::string> choices, std::string help);

  const KeySpec* find(std::string_view name) const;
  const std::vector<KeySpec>& keys() const { return keys_; }

 private:
  std::vector<KeySpec> keys_;
};

/// A fully resolved key=value configuration. Typed getters throw ConfigError
/// on malformed values.
class Config {
 public:
  std::size_t size(std::string_view key) const;
  std::uint64_t seed(std::string_view key) const;
  double real(std::string_view key) const;
  const std::string& text(std::string_view key) const;
  bool flag(std::string_view key) const;

  /// "key=value" lines in schema order.
  std::string echo() const;

  const std::map<std::string, std::string, std::less<>>& values() const { return values_; }

 private:
  friend Config resolve_config(const ConfigSchema&, std::string_view, const std::vector<std::string>&,
                               const char*);
  std::vector<std::string> order_;
  std::map<std::string, std::string, std::less<>> values_;
};

/// Parses "key=value" lines; '#' starts a comment, blank lines are skipped.
/// Throws ParseError naming the line.
std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text);

/// Defaults, then `file_text` entries, then `overrides` ("key=value", later
/// wins), then the SARNAS_SEED environment variable (when `seed_env` is set
/// and the schema has a "seed" key). Unknown keys and malformed values throw
/// ConfigError before anything else happens.
Config resolve_config(const ConfigSchema& schema, std::string_view file_text, const std::vector<std::string>& overrides,
                      const char* seed_env = nullptr);

}  // namespace sarnas
