// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace log3d {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat `key = value` settings with `#` comments. Keys are stored with '-'
/// replaced by '_'; each key appears at most once.
class RunConfig {
 public:
  /// Throws ConfigError on malformed lines, duplicate keys, keys outside
  /// `known`, or an `s` that does not divide `n`.
  static RunConfig parse(std::string_view text, const std::set<std::string>& known);
  static RunConfig load(const std::filesystem::path& path, const std::set<std::string>& known);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::optional<std::string> get(const std::string& key) const;
  void set(const std::string& key, std::string value);
  std::string serialize() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::string canonical_key(std::string_view key);

}  // namespace log3d
