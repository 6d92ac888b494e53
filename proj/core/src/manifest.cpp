#include "softreach/manifest.hpp"

#include <fstream>
#include <iterator>
#include <sstream>

#include "softreach/errors.hpp"

namespace softreach {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return s;
}

std::string hash_file(const std::filesystem::path& path) {
  return hex64(fnv1a64(read_text_file(path)));
}

nlohmann::json to_json(const ArtifactManifest& m) {
  auto files = [](const std::vector<FileDigest>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& f : v) a.push_back({{"path", f.path}, {"fnv1a64", f.fnv1a64}});
    return a;
  };
  return {{"format", "softreach-manifest"},
          {"version", std::string(kVersion)},
          {"command", m.command},
          {"seed", m.seed},
          {"config", m.config},
          {"inputs", files(m.inputs)},
          {"outputs", files(m.outputs)}};
}

ArtifactManifest artifact_manifest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "softreach-manifest") {
    throw FormatError("not an artifact manifest", 0);
  }
  ArtifactManifest m;
  m.command = j.at("command").get<std::string>();
  m.seed = j.at("seed").get<std::uint64_t>();
  m.config = j.at("config");
  for (const auto& f : j.at("inputs")) {
    m.inputs.push_back({f.at("path").get<std::string>(), f.at("fnv1a64").get<std::string>()});
  }
  for (const auto& f : j.at("outputs")) {
    m.outputs.push_back({f.at("path").get<std::string>(), f.at("fnv1a64").get<std::string>()});
  }
  return m;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void write_json_file(const std::filesystem::path& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
  const std::string text = read_text_file(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what(), 0);
  }
}

}  // namespace softreach
