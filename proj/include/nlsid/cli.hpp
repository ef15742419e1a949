#pragma once

#include <cstdint>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nlsid/io.hpp"

namespace nlsid::cli {

/// Process exit codes; part of the command-line contract.
enum ExitCode : int { ok = 0, config_error = 2, numeric_failure = 3, divergence = 4 };

struct RunOptions {
    std::filesystem::path out = "out";
    std::filesystem::path base_dir = ".";  // relative paths in the config resolve here
    std::optional<std::uint64_t> seed;     // overrides the config's seed
    bool resume = false;                   // pipeline only
};

[[nodiscard]] const std::vector<std::string>& command_names();

/// Runs one command; throws ConfigError / NumericError / DivergenceError on failure.
void run_command(const std::string& command, const io::Json& config, const RunOptions& options);

/// Maps an exception raised by run_command to its exit code.
[[nodiscard]] int exit_code_for(const std::exception& e);

/// Full front end: argument parsing, thread setup, dispatch and error reporting.
int main_entry(int argc, char** argv);

/// FNV-1a 64-bit hash, used for manifest stage hashes.
[[nodiscard]] std::uint64_t fnv1a(const std::string& data);

}  // namespace nlsid::cli
