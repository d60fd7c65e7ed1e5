#include "sarnas/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <sstream>

#include "sarnas/error.hpp"

namespace sarnas {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

bool parse_size(std::string_view v, std::uint64_t& out) {
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  return !v.empty() && res.ec == std::errc() && res.ptr == v.data() + v.size();
}

bool parse_real(std::string_view v, double& out) {
  auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  return !v.empty() && res.ec == std::errc() && res.ptr == v.data() + v.size();
}

bool parse_flag(std::string_view v, bool& out) {
  if (v == "true" || v == "1" || v == "yes") {
    out = true;
    return true;
  }
  if (v == "false" || v == "0" || v == "no") {
    out = false;
    return true;
  }
  return false;
}

void check_value(const KeySpec& spec, const std::string& value) {
  std::uint64_t n = 0;
  double d = 0;
  bool b = false;
  bool ok = true;
  switch (spec.kind) {
    case ValueKind::Size:
      ok = parse_size(value, n);
      break;
    case ValueKind::Real:
      ok = parse_real(value, d);
      break;
    case ValueKind::Flag:
      ok = parse_flag(value, b);
      break;
    case ValueKind::Choice:
      ok = std::find(spec.choices.begin(), spec.choices.end(), value) != spec.choices.end();
      break;
    case ValueKind::Text:
      break;
  }
  if (!ok) throw ConfigError("invalid value \"" + value + "\" for key " + spec.name);
}

std::string format_real(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace

ConfigSchema& ConfigSchema::size(std::string name, std::size_t def, std::string help) {
  keys_.push_back({std::move(name), ValueKind::Size, std::to_string(def), std::move(help), {}});
  return *this;
}

ConfigSchema& ConfigSchema::real(std::string name, double def, std::string help) {
  keys_.push_back({std::move(name), ValueKind::Real, format_real(def), std::move(help), {}});
  return *this;
}

ConfigSchema& ConfigSchema::text(std::string name, std::string def, std::string help) {
  keys_.push_back({std::move(name), ValueKind::Text, std::move(def), std::move(help), {}});
  return *this;
}

ConfigSchema& ConfigSchema::flag(std::string name, bool def, std::string help) {
  keys_.push_back({std::move(name), ValueKind::Flag, def ? "true" : "false", std::move(help), {}});
  return *this;
}

ConfigSchema& ConfigSchema::choice(std::string name, std::vector<std::string> choices, std::string help) {
  std::string def = choices.front();
  keys_.push_back({std::move(name), ValueKind::Choice, std::move(def), std::move(help), std::move(choices)});
  return *this;
}

const KeySpec* ConfigSchema::find(std::string_view name) const {
  for (const auto& k : keys_) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

std::size_t Config::size(std::string_view key) const {
  std::uint64_t v = 0;
  if (!parse_size(text(key), v)) throw ConfigError(std::string(key) + " is not a non-negative integer");
  return static_cast<std::size_t>(v);
}

std::uint64_t Config::seed(std::string_view key) const {
  std::uint64_t v = 0;
  if (!parse_size(text(key), v)) throw ConfigError(std::string(key) + " is not a non-negative integer");
  return v;
}

double Config::real(std::string_view key) const {
  double v = 0;
  if (!parse_real(text(key), v)) throw ConfigError(std::string(key) + " is not a number");
  return v;
}

const std::string& Config::text(std::string_view key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown key " + std::string(key));
  return it->second;
}

bool Config::flag(std::string_view key) const {
  bool v = false;
  if (!parse_flag(text(key), v)) throw ConfigError(std::string(key) + " is not a boolean");
  return v;
}

std::string Config::echo() const {
  std::string out;
  for (const auto& key : order_) out += key + '=' + values_.at(key) + '\n';
  return out;
}

std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ParseError("config line " + std::to_string(number) + ": expected key=value");
    }
    out.emplace_back(trim(std::string_view(body).substr(0, eq)), trim(std::string_view(body).substr(eq + 1)));
  }
  return out;
}

Config resolve_config(const ConfigSchema& schema, std::string_view file_text, const std::vector<std::string>& overrides,
                      const char* seed_env) {
  Config config;
  for (const auto& k : schema.keys()) {
    config.order_.push_back(k.name);
    config.values_[k.name] = k.default_value;
  }
  auto assign = [&](const std::string& key, const std::string& value, const std::string& origin) {
    const KeySpec* spec = schema.find(key);
    if (spec == nullptr) throw ConfigError("unknown key \"" + key + "\" (" + origin + ")");
    check_value(*spec, value);
    config.values_[key] = value;
  };
  for (const auto& [k, v] : parse_config_text(file_text)) assign(k, v, "config file");
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override \"" + item + "\" is not key=value");
    assign(trim(std::string_view(item).substr(0, eq)), trim(std::string_view(item).substr(eq + 1)), "command line");
  }
  if (seed_env != nullptr && schema.find("seed") != nullptr) {
    if (const char* env = std::getenv(seed_env); env != nullptr && *env != '\0') assign("seed", env, seed_env);
  }
  return config;
}

}  // namespace sarnas
