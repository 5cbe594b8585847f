#pragma once

// Command-line front end: synth, split, fit, eval, analyze, run, replay.
//
// Exit codes: 0 success, 1 usage or parameter error, 2 data/validation/I-O
// error, 3 numerical error.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace xalign::cli {

/// Provenance record written next to each run's primary output.
struct RunManifest {
  std::string subcommand;                                   // e.g. "fit", "analyze polysemy"
  std::vector<std::pair<std::string, std::string>> flags;   // resolved, replayable
  std::vector<std::pair<std::string, std::string>> inputs;  // path, SHA-256 hex
  std::string version;
  std::vector<std::uint64_t> seeds;

  friend bool operator==(const RunManifest&, const RunManifest&) = default;
};

nlohmann::ordered_json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::ordered_json& j);
RunManifest read_manifest(const std::filesystem::path& path);

/// `<primary>.manifest.json`
std::filesystem::path manifest_path_for(const std::filesystem::path& primary);

std::string sha256_file(const std::filesystem::path& path);

/// Flat `key = value` lines; blank lines and lines starting with '#' are skipped.
std::vector<std::pair<std::string, std::string>> read_config(const std::filesystem::path& path);

/// Runs one command line (without the program name) and returns its exit code.
int dispatch(const std::vector<std::string>& args);

}  // namespace xalign::cli
