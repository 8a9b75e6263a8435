#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

namespace tli::cli {

inline constexpr const char* kToolName = "tli";
inline constexpr const char* kVersion = "0.1.0";

/// Exit codes of dispatch().
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

/// Parses the command line, runs the subcommand and writes its run manifest.
int dispatch(int argc, const char* const* argv);
/// Same with the arguments after the program name.
int dispatch(const std::vector<std::string>& args);

/// Runs `command` with a fully resolved config and returns the run manifest
/// (config echo plus SHA-256 of every artifact, relative to the output dir).
nlohmann::json execute(const std::string& command, const nlohmann::json& config,
                       const std::filesystem::path& out);

/// File name of the run manifest written next to a run's artifacts.
std::filesystem::path run_manifest_path(const std::string& command, const std::filesystem::path& out);

}  // namespace tli::cli
