#pragma once

// Command-line front end: run, fit, compare, analyze, probe, tasks.
// Exit codes: 0 ok, 1 runtime failure, 2 configuration / input error.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "relval/llm_client.hpp"

namespace relval {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

enum class Verbosity { quiet, info, debug };

// YAML:
//   endpoints:
//     <name>: {base_url, model, auth_env, requests_per_second, timeout_s, max_attempts}
//   seed: <default master seed>
//   output_dir: <directory for default output paths>
//   tasks: <task catalog path>
//   log_level: quiet | info | debug
// Referenced environment variables are checked when an endpoint is used.
struct RepoConfig {
  std::map<std::string, EndpointConfig> endpoints;
  std::uint64_t default_seed = 0;
  std::filesystem::path output_dir = ".";
  std::optional<std::filesystem::path> tasks;
  Verbosity verbosity = Verbosity::info;
};

RepoConfig parse_repo_config(const std::string& yaml_text);
RepoConfig load_repo_config(const std::filesystem::path& path);

// --config, else $RELVAL_CONFIG, else built-in defaults.
RepoConfig resolve_repo_config(const std::optional<std::filesystem::path>& flag);

// --tasks, else $RELVAL_TASKS, else the config's catalog, else the bundled data/tasks.yaml.
std::filesystem::path resolve_task_catalog(const std::optional<std::filesystem::path>& flag, const RepoConfig& cfg);

// args[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace relval
