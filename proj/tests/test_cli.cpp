#include <doctest.h>

#ifdef CGFORGE_CLI_PATH

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cgforge/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "cgforge_cli_test";

int run(const std::string& args) {
  const std::string cmd = std::string(CGFORGE_CLI_PATH) + " " + args + " 2>>" + (kRoot / "stderr.log").string();
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const std::string& rel) { return (kRoot / rel).string(); }

const std::string kSmall =
    "--preset desk --dim 4 --slice-len 16 --epochs 2 --embed-epochs 1 --hidden 16 --classifier-hidden 16";

}  // namespace

TEST_CASE("command line pipeline") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);

  REQUIRE(run("gen-corpus --binaries 10 --seed 7 --out " + p("gen")) == 0);
  REQUIRE(run("ingest --corpus " + p("gen/corpus.jsonl") + " --out " + p("ing")) == 0);
  REQUIRE(run("slice --corpus " + p("gen/corpus.jsonl") + " --out " + p("sl")) == 0);
  REQUIRE(run("symbolize --slices " + p("sl/slices.jsonl") + " --policy strict --out " + p("sy")) == 0);
  REQUIRE(run("pretrain " + kSmall + " --corpus " + p("gen/corpus.jsonl") + " --split " + p("ing/split.json") +
              " --out " + p("pre")) == 0);
  REQUIRE(run("finetune --corpus " + p("gen/corpus.jsonl") + " --split " + p("ing/split.json") + " --model " +
              p("pre/model") + " --positives " + p("gen/icall_truth.jsonl") + " --exclude " +
              p("gen/compatible.jsonl") + " --out " + p("ft")) == 0);
  REQUIRE(run("predict --corpus " + p("gen/corpus.jsonl") + " --model " + p("ft/model") + " --split " +
              p("ing/split.json") + " --binaries test --truth " + p("gen/icall_truth.jsonl") + " --out " +
              p("pr")) == 0);
  REQUIRE(run("eval --scores " + p("pr/scores.jsonl") + " --out " + p("ev")) == 0);
  REQUIRE(run("emit-cg --corpus " + p("gen/corpus.jsonl") + " --scores " + p("pr/scores.jsonl") + " --out " +
              p("cg")) == 0);

  std::ifstream report(p("ev/report.json"));
  auto j = nlohmann::json::parse(report);
  CHECK(j.contains("manifest"));
  CHECK(j["pr_curve"].size() == 101);
  std::ifstream manifest(p("pr/manifest.json"));
  auto m = nlohmann::json::parse(manifest);
  CHECK(m["command"] == "predict");
  CHECK(m["manifest_hash"].get<std::string>().size() == 16);
  CHECK_FALSE(fs::is_empty(p("cg/cg")));

  // rerun with the same inputs gives the same bytes
  REQUIRE(run("eval --scores " + p("pr/scores.jsonl") + " --out " + p("ev2")) == 0);
  CHECK(cgforge::read_text_file(p("ev/report.json")) == cgforge::read_text_file(p("ev2/report.json")));

  SUBCASE("usage errors exit 1") {
    CHECK(run("frobnicate") == 1);
    CHECK(run("") == 1);
    CHECK(run("ingest") == 1);
    CHECK(run("slice --corpus " + p("gen/corpus.jsonl") + " --policy fuzzy --out " + p("x")) == 1);
  }
  SUBCASE("data errors exit 2") {
    CHECK(run("slice --corpus " + p("missing.jsonl") + " --out " + p("x")) == 2);
    std::ofstream(p("bad.jsonl")) << "{not json\n";
    CHECK(run("ingest --corpus " + p("bad.jsonl") + " --out " + p("x")) == 2);
  }
  SUBCASE("a model used against another vocabulary exits 3") {
    CHECK(run("predict --corpus " + p("gen/corpus.jsonl") + " --model " + p("ft/model") + " --vocab " +
              p("sy/vocab.json") + " --out " + p("x")) == 3);
    CHECK(run("predict --policy strict --corpus " + p("gen/corpus.jsonl") + " --model " + p("ft/model") +
              " --out " + p("x")) == 3);
  }
}

#endif
