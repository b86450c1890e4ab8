#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace cgforge {

/// Versioned binary model container: magic, format version, a JSON header and
/// a list of float32 tensors. Byte layout is fixed (little-endian) so equal
/// models produce equal files.
struct Container {
  std::string kind;
  nlohmann::json header;
  std::vector<std::vector<float>> tensors;
};

void write_container(const std::filesystem::path& path, const Container& c);
Container read_container(const std::filesystem::path& path, const std::string& expected_kind);

}  // namespace cgforge
