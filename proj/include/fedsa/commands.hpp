#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>

#include "fedsa/config.hpp"

namespace fedsa::cli {

// Directory prepended to relative output paths when set.
inline constexpr const char* kOutputDirEnv = "FEDSA_OUTPUT_DIR";

std::filesystem::path resolve_output(const std::string& path);

struct RunCommandOptions {
    // JSON-lines log of every exchanged message; sweep suffixes are appended.
    std::optional<std::filesystem::path> replay_path;
    // Polled after every round; returning true aborts with partial metrics.
    std::function<bool()> should_stop;
};

// Runs every sweep point and seed, writing one metrics file per sweep point.
// Returns 0 on success, 2 on divergence, 3 when interrupted, 1 on other errors.
int cmd_run(const ConfigFile& config, const RunCommandOptions& options, std::ostream& log);

int cmd_bench(const std::string& preset, std::size_t seeds, std::optional<std::size_t> rounds,
              const std::string& output_path, std::size_t threads, std::ostream& log);

}  // namespace fedsa::cli
