// SPDX-License-Identifier: Apache-2.0
#include "log3d/run_config.hpp"

#include <algorithm>
#include <charconv>

#include "log3d/binary_io.hpp"

namespace log3d {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::optional<unsigned long long> as_unsigned(const std::string& v) {
  unsigned long long out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) return std::nullopt;
  return out;
}

}  // namespace

std::string canonical_key(std::string_view key) {
  std::string k(key);
  std::replace(k.begin(), k.end(), '-', '_');
  return k;
}

RunConfig RunConfig::parse(std::string_view text, const std::set<std::string>& known) {
  RunConfig cfg;
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
    if (eq == std::string_view::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = canonical_key(trim(line.substr(0, eq)));
    const std::string value(trim(line.substr(eq + 1)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    if (!known.count(key)) throw ConfigError("line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (cfg.get(key)) throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + key + "'");
    cfg.entries_.emplace_back(key, value);
  }
  const auto n = cfg.get("n"), s = cfg.get("s");
  if (n && s) {
    const auto nv = as_unsigned(*n), sv = as_unsigned(*s);
    if (!nv || !sv) throw ConfigError("n and s must be unsigned integers");
    if (*sv == 0 || *nv % *sv != 0) throw ConfigError("s = " + *s + " does not divide n = " + *n);
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path, const std::set<std::string>& known) {
  try {
    return parse(read_file(path), known);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::optional<std::string> RunConfig::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

void RunConfig::set(const std::string& key, std::string value) {
  const std::string k = canonical_key(key);
  for (auto& [ek, ev] : entries_)
    if (ek == k) {
      ev = std::move(value);
      return;
    }
  entries_.emplace_back(k, std::move(value));
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries_) out += k + " = " + v + "\n";
  return out;
}

}  // namespace log3d
