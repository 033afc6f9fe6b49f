#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace mbch::cli {

struct ManifestInput {
  std::string role;
  std::filesystem::path path;
};

/// FNV-1a over the raw bytes of the file.
std::uint64_t file_digest(const std::filesystem::path& path);

/// Plain-text record of what a run actually used: the config as written,
/// the effective settings after defaults and flag overrides, and a digest
/// per input file. Identical runs write identical manifests.
void write_manifest(const std::filesystem::path& path,
                    const std::string& command,
                    const std::map<std::string, std::string>& config_entries,
                    const std::map<std::string, std::string>& resolved,
                    std::span<const ManifestInput> inputs);

}  // namespace mbch::cli
