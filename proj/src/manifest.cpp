#include "cgforge/manifest.hpp"

#include <algorithm>
#include <cstdio>

#include "cgforge/error.hpp"
#include "cgforge/pipeline.hpp"
#include "cgforge/rng.hpp"

namespace cgforge {

namespace {

std::string hex16(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace

std::string file_digest(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw DataError(path.string() + ": no such file or directory");
  if (!fs::is_directory(path)) return hex16(fnv1a(read_text_file(path)));
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(path)) {
    // a run's own manifest names paths; it describes the contents, it is not part of them
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = fnv1a("");
  for (const auto& f : files) {
    h = fnv1a(fs::relative(f, path).generic_string(), h);
    h = fnv1a(read_text_file(f), h);
  }
  return hex16(h);
}

std::string text_digest(std::string_view text) { return hex16(fnv1a(text)); }

void RunManifest::add_input(const std::string& role, const std::filesystem::path& path) {
  inputs[role] = path.string();
  input_digests[role] = file_digest(path);
}

std::string RunManifest::hash() const {
  nlohmann::json j = {{"tool_version", tool_version},
                      {"command", command},
                      {"config_hash", config_hash},
                      {"seeds", seeds},
                      {"input_digests", input_digests}};
  return hex16(fnv1a(j.dump()));
}

nlohmann::json RunManifest::to_json() const {
  return {{"manifest_hash", hash()},   {"tool_version", tool_version}, {"command", command},
          {"config_hash", config_hash}, {"seeds", seeds},               {"inputs", inputs},
          {"input_digests", input_digests}, {"artifacts", artifacts}};
}

RunManifest RunManifest::from_json(const nlohmann::json& j) {
  RunManifest m;
  m.tool_version = j.at("tool_version").get<std::string>();
  m.command = j.at("command").get<std::string>();
  m.config_hash = j.at("config_hash").get<std::string>();
  m.seeds = j.at("seeds").get<std::map<std::string, std::uint64_t>>();
  m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
  m.input_digests = j.at("input_digests").get<std::map<std::string, std::string>>();
  m.artifacts = j.at("artifacts").get<std::vector<std::string>>();
  return m;
}

}  // namespace cgforge
