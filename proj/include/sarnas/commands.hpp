#pragma once

#include <ostream>
#include <string_view>

#include "sarnas/config.hpp"

namespace sarnas {

/// Command names in help order.
inline constexpr std::string_view kCommands[] = {"synth", "search", "train", "eval", "export-dot", "gradcheck"};

/// Keys and defaults of one command. Throws UsageError for an unknown command.
const ConfigSchema& command_schema(std::string_view command);

/// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;  // runtime fault, failed gradient case
inline constexpr int kExitUsage = 2;    // bad command line or configuration

/// Runs a resolved configuration. Everything the command needs is loaded and
/// checked before the output directory is touched.
int run_command(std::string_view command, const Config& config, std::ostream& out);

/// `sarnas <command> [--config FILE] [key=value ...]`. Errors are reported on
/// `err` as "error: <message>" and mapped to an exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace sarnas
