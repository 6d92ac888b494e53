#ifndef SOFTREACH_CLI_COMMANDS_HPP_
#define SOFTREACH_CLI_COMMANDS_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "softreach/manifest.hpp"

namespace softreach::cli {

struct Context {
  std::uint64_t seed = 0;
  std::filesystem::path out = ".";
  std::size_t jobs = 1;
  std::ostream* log = nullptr;  // progress messages, optional
};

const std::vector<std::string>& command_names();

// Defaults for a command, as the JSON shape its config file section takes.
nlohmann::json default_config(const std::string& command);

// defaults <- file section <- overrides, each applied as a JSON merge patch.
// A file holding a key named after the command contributes that section only.
nlohmann::json effective_config(const std::string& command, const nlohmann::json& file,
                                const nlohmann::json& overrides);

// Runs a pipeline stage into ctx.out and writes ctx.out/manifest.json.
// Throws the core error types on failure.
ArtifactManifest run_command(const std::string& command, const nlohmann::json& config,
                             const Context& ctx);

struct ReproduceReport {
  ArtifactManifest original;
  ArtifactManifest rerun;
  std::vector<std::string> mismatched;  // output paths whose digests differ
  bool identical() const { return mismatched.empty(); }
};

// Checks the recorded input digests, reruns the command into out and compares
// output digests.
ReproduceReport reproduce(const std::filesystem::path& manifest_path,
                          const std::filesystem::path& out, std::size_t jobs = 1,
                          std::ostream* log = nullptr);

// 0 success, 1 runtime or numeric failure, 2 usage or IO error.
int exit_code(const std::exception& e);

}  // namespace softreach::cli

#endif  // SOFTREACH_CLI_COMMANDS_HPP_
