#ifndef SOFTREACH_MANIFEST_HPP_
#define SOFTREACH_MANIFEST_HPP_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace softreach {

inline constexpr std::string_view kVersion = "0.1.0";

// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);
// Hex FNV-1a digest of a file's bytes; throws IoError when unreadable.
std::string hash_file(const std::filesystem::path& path);

struct FileDigest {
  std::string path;
  std::string fnv1a64;
};

// Provenance record written next to every artifact set.
struct ArtifactManifest {
  std::string command;
  nlohmann::json config;  // effective configuration
  std::uint64_t seed = 0;
  std::vector<FileDigest> inputs;
  std::vector<FileDigest> outputs;
};

nlohmann::json to_json(const ArtifactManifest& m);
ArtifactManifest artifact_manifest_from_json(const nlohmann::json& j);

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace softreach

#endif  // SOFTREACH_MANIFEST_HPP_
