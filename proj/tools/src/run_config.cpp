#include "run_config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>

#include "mbch/errors.hpp"

namespace mbch::cli {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      "dataset",      "dataset_format", "word_vectors", "word_dim",
      "lexicons",     "oov_seed",       "filter_sizes", "feature_maps",
      "bottleneck_dim", "highway_depth", "num_classes",  "learning_rate",
      "beta1",        "beta2",          "adam_eps",     "batch_size",
      "epochs",       "max_norm",       "seed",         "k",
      "parallel",
  };
  return keys;
}

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

[[noreturn]] void bad_value(const std::string& key, const char* expected,
                            const std::string& got) {
  throw ConfigError("config key '" + key + "': expected " + expected +
                    ", got '" + got + "'");
}

}  // namespace

std::optional<std::string> RunConfig::find(const std::string& key) const {
  auto it = entries_.find(key);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::string RunConfig::get_string(const std::string& key,
                                  const std::string& fallback) const {
  return find(key).value_or(fallback);
}

std::size_t RunConfig::get_size(const std::string& key,
                                std::size_t fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  if (v->empty() ||
      !std::all_of(v->begin(), v->end(),
                   [](unsigned char c) { return std::isdigit(c); })) {
    bad_value(key, "an unsigned integer", *v);
  }
  try {
    return static_cast<std::size_t>(std::stoull(*v));
  } catch (const std::exception&) {
    bad_value(key, "an unsigned integer", *v);
  }
}

std::uint64_t RunConfig::get_u64(const std::string& key,
                                 std::uint64_t fallback) const {
  return static_cast<std::uint64_t>(get_size(key, fallback));
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  const auto v = find(key);
  if (!v) return fallback;
  std::size_t consumed = 0;
  double out = 0.0;
  try {
    out = std::stod(*v, &consumed);
  } catch (const std::exception&) {
    bad_value(key, "a number", *v);
  }
  if (consumed != v->size()) bad_value(key, "a number", *v);
  return out;
}

std::filesystem::path RunConfig::require_path(const std::string& key) const {
  const auto v = find(key);
  if (!v || v->empty()) {
    throw ConfigError("config key '" + key + "' is required");
  }
  return *v;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config: " + path.string());

  std::map<std::string, std::string> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;

    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path.string(), lineno, "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ParseError(path.string(), lineno, "empty key");
    }
    if (known_keys().find(key) == known_keys().end()) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) +
                        ": unknown config key '" + key + "'");
    }
    if (!entries.emplace(key, value).second) {
      throw ParseError(path.string(), lineno, "duplicate key '" + key + "'");
    }
  }
  return RunConfig(std::move(entries));
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = trim(
        text.substr(start, comma == std::string::npos ? comma : comma - start));
    start = comma == std::string::npos ? text.size() + 1 : comma + 1;
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::size_t> parse_size_list(const std::string& text,
                                         const std::string& what) {
  std::vector<std::size_t> out;
  for (const std::string& item : split_list(text)) {
    if (!std::all_of(item.begin(), item.end(),
                     [](unsigned char c) { return std::isdigit(c); })) {
      throw ConfigError(what + ": expected a comma-separated list of "
                        "unsigned integers, got '" + text + "'");
    }
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (out.empty()) {
    throw ConfigError(what + ": list must not be empty");
  }
  return out;
}

}  // namespace mbch::cli
