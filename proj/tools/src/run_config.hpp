#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mbch::cli {

/// Flat "key = value" file with '#' comments. Keys outside the known set are
/// rejected up front so typos fail loudly instead of silently using defaults.
class RunConfig {
 public:
  RunConfig() = default;
  explicit RunConfig(std::map<std::string, std::string> entries)
      : entries_(std::move(entries)) {}

  bool has(const std::string& key) const {
    return entries_.find(key) != entries_.end();
  }
  std::optional<std::string> find(const std::string& key) const;

  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::filesystem::path require_path(const std::string& key) const;

  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }

 private:
  std::map<std::string, std::string> entries_;
};

RunConfig load_run_config(const std::filesystem::path& path);

/// "3,4,5" -> {3, 4, 5}; rejects empty items and non-digits.
std::vector<std::size_t> parse_size_list(const std::string& text,
                                         const std::string& what);

/// Comma-split with surrounding whitespace trimmed; empty items dropped.
std::vector<std::string> split_list(const std::string& text);

}  // namespace mbch::cli
