#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include "config.hpp"

namespace prefopt::cli {

/// Exit codes shared by every command.
enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,  ///< a diagnostic ran but its pass criterion failed
  kExitUsage = 2,
  kExitNumerical = 3,
};

/// Command names as recorded in manifests, e.g. "train" or
/// "diagnose grad-check".
const std::vector<std::string>& command_names();

/// Full default config of a command; also the schema merge_checked enforces.
Json command_defaults(std::string_view command);

struct CommandResult {
  std::vector<std::string> artifacts;  ///< file names inside the output directory
  int exit_code = kExitOk;
};

/// Runs a command on an effective (already merged) config, writing its
/// artifacts into `out` and a human summary to `log`.
CommandResult run_command(std::string_view command, const Json& config,
                          const std::filesystem::path& out, std::ostream& log);

/// Default `--jobs`: the number of grid points capped at the hardware
/// concurrency.
unsigned default_jobs(std::size_t points);

}  // namespace prefopt::cli
