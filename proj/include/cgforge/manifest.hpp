#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace cgforge {

inline constexpr const char* kToolVersion = "0.1.0";

/// Record of one tool invocation. The hash covers what determines the
/// outputs (command, config, seeds, input contents) and not where files live,
/// so a rerun into another directory gets the same hash and the same bytes.
struct RunManifest {
  std::string tool_version = kToolVersion;
  std::string command;
  std::string config_hash;
  std::map<std::string, std::uint64_t> seeds;
  std::map<std::string, std::string> inputs;         // role -> path
  std::map<std::string, std::string> input_digests;  // role -> content digest
  std::vector<std::string> artifacts;

  void add_input(const std::string& role, const std::filesystem::path& path);
  std::string hash() const;
  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

/// 64-bit FNV-1a of the file contents (of every regular file, in path order,
/// for a directory, manifest.json files excepted), as 16 hex digits.
std::string file_digest(const std::filesystem::path& path);

/// Same digest over an in-memory string.
std::string text_digest(std::string_view text);

}  // namespace cgforge
