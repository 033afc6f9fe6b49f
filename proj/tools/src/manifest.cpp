#include "manifest.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "mbch/errors.hpp"
#include "mbch/hashing.hpp"

namespace mbch::cli {

std::uint64_t file_digest(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open for digest: " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return fnv1a64(buf.str());
}

namespace {

std::string hex64(std::uint64_t v) {
  char buf[19];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

void write_manifest(const std::filesystem::path& path,
                    const std::string& command,
                    const std::map<std::string, std::string>& config_entries,
                    const std::map<std::string, std::string>& resolved,
                    std::span<const ManifestInput> inputs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot open for writing: " + path.string());
  out << "command = " << command << "\n";
  out << "[config]\n";
  for (const auto& [key, value] : config_entries) {
    out << key << " = " << value << "\n";
  }
  out << "[resolved]\n";
  for (const auto& [key, value] : resolved) {
    out << key << " = " << value << "\n";
  }
  out << "[inputs]\n";
  for (const ManifestInput& input : inputs) {
    out << input.role << " = " << input.path.string()
        << " fnv1a64=" << hex64(file_digest(input.path)) << "\n";
  }
  out.flush();
  if (!out) throw Error("failed writing: " + path.string());
}

}  // namespace mbch::cli
