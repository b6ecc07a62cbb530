#pragma once

#include <string>
#include <vector>

namespace prsr::cli {

// Full command-line entry point: parses argv, dispatches the subcommand, and
// maps errors to categorized exit codes. Kept in the library so tests can
// drive the binary's exact behavior in-process.
int run(const std::vector<std::string>& args);

int run(int argc, char** argv);

struct FlagInfo {
  std::string subcommand;
  std::string name;
  std::string description;
};

// Every flag of every subcommand, for the no-undocumented-flags check.
std::vector<FlagInfo> flag_registry();

// Full help text covering all subcommands.
std::string help_text();

}  // namespace prsr::cli
