// cgforge: command line front end for the call graph recovery pipeline.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cgforge/corpus.hpp"
#include "cgforge/error.hpp"
#include "cgforge/manifest.hpp"
#include "cgforge/pipeline.hpp"
#include "cgforge/rng.hpp"
#include "cgforge/slicer.hpp"
#include "cgforge/symbolizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cgforge;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kMismatch = 3 };

struct UsageError : Error {
  using Error::Error;
};

// Flags shared by every subcommand. Unset flags leave the preset alone.
struct Options {
  std::string out;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  std::string preset = "full";
  std::string config_file;
  std::string policy;
  unsigned modulus = 10;
  int dim = 0;
  std::size_t slice_len = 0;
  double threshold = 0.5;
  std::size_t batch = 0;
  int epochs = -1;
  int embed_epochs = -1;
  double lr = 0;
  std::vector<std::size_t> hidden, classifier_hidden;
};

struct Flags {
  CLI::Option *seed, *policy, *modulus, *dim, *slice_len, *batch, *epochs, *embed_epochs, *lr, *hidden,
      *classifier_hidden, *threshold;
};

std::shared_ptr<spdlog::logger> g_log;

void setup_logging() {
  g_log = spdlog::stderr_color_mt("cgforge");
  g_log->set_pattern("%Y-%m-%dT%H:%M:%S.%e %l %v");
  const char* env = std::getenv("CGFORGE_LOG");
  const std::string level = env ? env : "info";
  static const std::set<std::string> known{"trace", "debug", "info", "warn", "warning", "error", "critical", "off"};
  if (!known.contains(level)) throw UsageError("CGFORGE_LOG: unknown level '" + level + "'");
  g_log->set_level(spdlog::level::from_str(level == "warning" ? "warn" : level));
}

PipelineConfig build_config(const Options& o, const Flags& f, const std::optional<PipelineConfig>& base = {}) {
  PipelineConfig c;
  if (base) {
    c = *base;
  } else if (!o.config_file.empty()) {
    auto j = json::parse(read_text_file(o.config_file));
    c = PipelineConfig::from_json(j.contains("config") ? j.at("config") : j);
  } else if (o.preset == "desk") {
    c = PipelineConfig::desk();
  } else if (o.preset != "full") {
    throw UsageError("--preset must be full or desk");
  }
  if (f.policy->count() || f.modulus->count())
    c.policy = parse_policy(f.policy->count() ? o.policy : c.policy.name(), o.modulus);
  if (f.dim->count()) c.embed.dim = o.dim;
  if (f.embed_epochs->count()) c.embed.epochs = o.embed_epochs;
  if (f.slice_len->count()) c.slice_len = o.slice_len;
  if (f.batch->count()) c.train.batch_size = o.batch;
  if (f.epochs->count()) c.train.epochs = o.epochs;
  if (f.lr->count()) c.train.learning_rate = o.lr;
  if (f.threshold->count()) c.train.threshold = o.threshold;
  if (f.hidden->count()) c.arch.extractor_hidden = o.hidden;
  if (f.classifier_hidden->count()) c.arch.classifier_hidden = o.classifier_hidden;
  if (f.seed->count() || !base) c.seed = o.seed;
  c.jobs = o.jobs;
  try {
    c.finalize();
  } catch (const MismatchError&) {
    throw;
  } catch (const DataError&) {
    throw;
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  return c;
}

// One invocation's bookkeeping: inputs and seeds go in first, then the
// manifest hash is fixed and stamped into every artifact written afterwards.
class Run {
 public:
  Run(std::string command, const Options& o) : out_(o.out) {
    if (out_.empty()) throw UsageError("--out is required");
    m_.command = std::move(command);
  }
  void input(const std::string& role, const fs::path& p) {
    if (!fs::exists(p)) throw DataError(p.string() + ": no such file or directory");
    m_.add_input(role, p);
  }
  void seed(const std::string& name, std::uint64_t v) { m_.seeds[name] = v; }
  void config(const PipelineConfig& c) { m_.config_hash = c.hash(); }
  void config_hash(const std::string& h) { m_.config_hash = h; }

  std::string hash() const { return m_.hash(); }

  fs::path artifact(const std::string& name) {
    fs::create_directories((out_ / name).parent_path());
    m_.artifacts.push_back(name);
    return out_ / name;
  }
  void write_json(const std::string& name, json j) {
    j["manifest"] = hash();
    write_text_file(artifact(name), j.dump(2) + "\n");
  }
  template <class Fn>
  void write_stream(const std::string& name, Fn&& fn) {
    std::ostringstream s;
    fn(s);
    write_text_file(artifact(name), s.str());
  }
  // JSONL whose rows get a "manifest" field.
  template <class Fn>
  void write_jsonl(const std::string& name, Fn&& fn) {
    std::stringstream rows;
    fn(rows);
    std::ostringstream out;
    std::string line;
    while (std::getline(rows, line)) {
      auto j = json::parse(line);
      j["manifest"] = hash();
      out << j.dump() << '\n';
    }
    write_text_file(artifact(name), out.str());
  }
  void finish() {
    write_text_file(out_ / "manifest.json", m_.to_json().dump(2) + "\n");
    g_log->info("event=done command={} manifest={} artifacts={} out={}", m_.command, hash(), m_.artifacts.size(),
                out_.string());
  }

 private:
  fs::path out_;
  RunManifest m_;
};

DatasetSplit load_split(const std::string& path) {
  if (path.empty()) throw UsageError("--split is required");
  auto j = json::parse(read_text_file(path));
  return DatasetSplit::from_json(j);
}

std::vector<LabeledPair> load_pairs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_pairs(in);
}

std::vector<ScoredPair> load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  return read_scores(in);
}

std::vector<std::string> select_binaries(const std::string& which, const Corpus& corpus,
                                         const std::string& split_path) {
  if (which == "all") return corpus.binary_ids();
  const auto s = load_split(split_path);
  if (which == "train") return s.train;
  if (which == "validation") return s.validation;
  if (which == "test") return s.test;
  throw UsageError("--binaries must be all, train, validation or test");
}

// The config a learner directory was trained with, when it was saved.
std::optional<PipelineConfig> learner_config(const fs::path& dir) {
  if (!fs::exists(dir / "config.json")) return std::nullopt;
  return PipelineConfig::from_json(json::parse(read_text_file(dir / "config.json")).at("config"));
}

void check_learner(const Learner& l, const PipelineConfig& c) {
  if (!(l.embedder.vocab.policy() == c.policy))
    throw MismatchError("model uses policy " + l.embedder.vocab.policy().name() + ", run asks for " + c.policy.name());
  if (!(l.matcher.arch == c.arch))
    throw MismatchError("model architecture " + l.matcher.arch.to_json().dump() + " differs from configured " +
                        c.arch.to_json().dump());
}

}  // namespace

int main(int argc, char** argv) {
  try {
    setup_logging();
  } catch (const UsageError& e) {
    std::cerr << "cgforge: " << e.what() << "\n";
    return kUsage;
  }

  CLI::App app{"cgforge: indirect call target recovery for x86-64 binaries"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  Flags f{};
  app.add_option("--out", o.out, "Output directory");
  f.seed = app.add_option("--seed", o.seed, "Run seed; every random stream derives from it");
  app.add_option("--jobs", o.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_option("--preset", o.preset, "Hyperparameter preset: full or desk")
      ->check(CLI::IsMember({"full", "desk"}));
  app.add_option("--config", o.config_file, "Pipeline config JSON (overrides --preset)");
  f.policy = app.add_option("--policy", o.policy, "Symbolization policy: strict or loose")
                 ->check(CLI::IsMember({"strict", "loose"}));
  f.modulus = app.add_option("--modulus", o.modulus, "Loose symbolization modulus N");
  f.dim = app.add_option("--dim", o.dim, "Token embedding dimension");
  f.slice_len = app.add_option("--slice-len", o.slice_len, "Tokens per slice after pad/truncate");
  f.threshold = app.add_option("--threshold", o.threshold, "Match threshold on the difference score");
  f.batch = app.add_option("--batch", o.batch, "Mini-batch size");
  f.epochs = app.add_option("--epochs", o.epochs, "Matcher training epochs");
  f.embed_epochs = app.add_option("--embed-epochs", o.embed_epochs, "PV-DBOW epochs");
  f.lr = app.add_option("--lr", o.lr, "Matcher learning rate");
  f.hidden = app.add_option("--hidden", o.hidden, "Extractor hidden widths")->delimiter(',');
  f.classifier_hidden = app.add_option("--classifier-hidden", o.classifier_hidden, "Classifier hidden widths")
                            ->delimiter(',');

  std::string corpus_path, split_path, model_path, pairs_path, slices_path, scores_path, truth_path, exclude_path,
      vocab_path, embedder_path, which = "test";
  std::size_t binaries = 10, cap = 400;
  int max_callsites = 3;
  double neg_ratio = 1.0, target_recall = -1;
  std::vector<double> ratios{0.8, 0.1, 0.1};

  auto* gen = app.add_subcommand("gen-corpus", "Generate a labelled synthetic corpus");
  gen->add_option("--binaries", binaries, "Number of binaries")->check(CLI::PositiveNumber);
  gen->add_option("--max-callsites", max_callsites, "Calls per function, at most");

  auto* ingest = app.add_subcommand("ingest", "Validate disassembly, split binaries, extract direct-call pairs");
  ingest->add_option("--corpus", corpus_path, "Disassembly JSONL")->required();
  ingest->add_option("--ratios", ratios, "Train/validation/test ratios")->expected(3)->delimiter(',');

  auto* slice = app.add_subcommand("slice", "Slice every callsite and address-taken callee");
  slice->add_option("--corpus", corpus_path)->required();

  auto* symbolize = app.add_subcommand("symbolize", "Symbolize slices and build a vocabulary");
  symbolize->add_option("--slices", slices_path, "Slice JSONL")->required();

  auto* embed = app.add_subcommand("train-embed", "Train token embeddings on the train binaries");
  embed->add_option("--corpus", corpus_path)->required();
  embed->add_option("--split", split_path)->required();

  auto* pretrain = app.add_subcommand("pretrain", "Train the direct-call learner");
  pretrain->add_option("--corpus", corpus_path)->required();
  pretrain->add_option("--split", split_path)->required();
  pretrain->add_option("--pairs", pairs_path, "Labelled pairs (default: direct calls of the train binaries)");
  pretrain->add_option("--embedder", embedder_path, "Reuse a train-embed output directory");
  pretrain->add_option("--neg-ratio", neg_ratio, "Negatives per positive");

  auto* finetune = app.add_subcommand("finetune", "Transfer the direct-call learner to indirect calls");
  finetune->add_option("--corpus", corpus_path)->required();
  finetune->add_option("--split", split_path)->required();
  finetune->add_option("--model", model_path, "Pretrained model directory")->required();
  finetune->add_option("--pairs", pairs_path, "Labelled indirect-call pairs");
  finetune->add_option("--positives", truth_path, "Indirect-call positives to assemble pairs from");
  finetune->add_option("--exclude", exclude_path, "Pairs never used as negatives");
  finetune->add_option("--neg-ratio", neg_ratio, "Negatives per positive");
  finetune->add_option("--cap", cap, "At most this many training pairs");

  auto* predict = app.add_subcommand("predict", "Score callsite/callee pairs");
  predict->add_option("--corpus", corpus_path)->required();
  predict->add_option("--model", model_path)->required();
  predict->add_option("--pairs", pairs_path, "Pairs to score (default: all indirect candidates)");
  predict->add_option("--split", split_path);
  predict->add_option("--binaries", which, "Candidate binaries: all, train, validation or test");
  predict->add_option("--truth", truth_path, "Label candidates against these positives");
  predict->add_option("--vocab", vocab_path, "Vocabulary to load the model against");

  auto* eval = app.add_subcommand("eval", "Precision, recall, F1, PR curve and AICT");
  eval->add_option("--scores", scores_path)->required();
  eval->add_option("--target-recall", target_recall, "Pick the threshold reaching this recall");

  auto* emit = app.add_subcommand("emit-cg", "Write recovered call graphs as DOT and JSON");
  emit->add_option("--corpus", corpus_path)->required();
  emit->add_option("--scores", scores_path)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) {
      Run run("gen-corpus", o);
      CorpusConfig cc;
      cc.binaries = binaries;
      cc.max_callsites_per_function = max_callsites;
      cc.seed = o.seed;
      run.seed("seed", o.seed);
      run.seed("corpus", sub_seed(o.seed, "corpus"));
      run.config_hash(text_digest(json{{"binaries", cc.binaries}, {"max_callsites", max_callsites}}.dump()));
      g_log->info("event=generate binaries={} seed={}", cc.binaries, o.seed);
      const auto sc = generate_corpus(cc);
      const auto h = run.hash();
      run.write_jsonl("corpus.jsonl", [&](std::ostream& s) {
        for (const auto& p : sc.programs) write_program(p, s);
      });
      run.write_stream("icall_truth.jsonl", [&](std::ostream& s) { write_pairs(sc.icall_truth, s, h); });
      run.write_stream("compatible.jsonl", [&](std::ostream& s) { write_pairs(sc.compatible, s, h); });
      run.finish();
    } else if (*ingest) {
      Run run("ingest", o);
      run.input("corpus", corpus_path);
      run.seed("seed", o.seed);
      run.seed("split", sub_seed(o.seed, "split"));
      run.config_hash(text_digest(json(ratios).dump()));
      const auto corpus = load_corpus(corpus_path);
      if (corpus.programs().empty()) throw DataError(corpus_path + ": no binaries");
      const auto split = split_by_binary(corpus.binary_ids(), {ratios[0], ratios[1], ratios[2]}, o.seed);
      const auto h = run.hash();
      std::size_t functions = 0, callsites = 0, indirect = 0, taken = 0, skipped = 0;
      for (const auto& p : corpus.programs()) {
        functions += p.functions.size();
        callsites += list_callsites(p).size();
        indirect += list_indirect_callsites(p).size();
        taken += address_taken_functions(p).size();
        skipped += extract_direct_pairs(p).skipped;
      }
      const auto dpairs = direct_call_positives(corpus);
      g_log->info("event=ingest binaries={} functions={} callsites={} indirect={} address_taken={} dcall_pairs={}",
                  corpus.programs().size(), functions, callsites, indirect, taken, dpairs.size());
      if (skipped > 0) g_log->warn("event=ingest skipped_direct_calls={}", skipped);
      run.write_jsonl("programs.jsonl", [&](std::ostream& s) {
        for (const auto& p : corpus.programs()) write_program(p, s);
      });
      run.write_json("split.json", split.to_json());
      run.write_stream("dcall_pairs.jsonl", [&](std::ostream& s) { write_pairs(dpairs, s, h); });
      run.write_json("summary.json", {{"binaries", corpus.programs().size()},
                                      {"functions", functions},
                                      {"callsites", callsites},
                                      {"indirect_callsites", indirect},
                                      {"address_taken", taken},
                                      {"dcall_pairs", dpairs.size()},
                                      {"skipped_direct_calls", skipped}});
      run.finish();
    } else if (*slice) {
      Run run("slice", o);
      run.input("corpus", corpus_path);
      const auto corpus = load_corpus(corpus_path);
      std::size_t n = 0;
      run.write_jsonl("slices.jsonl", [&](std::ostream& s) {
        for (const auto& p : corpus.programs()) {
          for (const auto& cs : list_callsites(p)) {
            write_slice_jsonl(slice_callsite(p, cs), s);
            ++n;
          }
          for (Addr a : address_taken_functions(p)) {
            write_slice_jsonl(slice_callee(p, a), s);
            ++n;
          }
        }
      });
      g_log->info("event=slice slices={}", n);
      run.finish();
    } else if (*symbolize) {
      Run run("symbolize", o);
      const auto c = build_config(o, f);
      run.input("slices", slices_path);
      run.config_hash(text_digest(json{{"policy", c.policy.name()}, {"modulus", c.policy.modulus}}.dump()));
      std::ifstream in(slices_path);
      std::vector<Slice> out;
      std::string line;
      std::size_t lineno = 0;
      while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
          out.push_back(symbolize_slice(parse_slice_json(line), c.policy));
        } catch (const json::exception& e) {
          throw ParseError(lineno, e.what());
        }
      }
      if (out.empty()) throw DataError(slices_path + ": no slices");
      std::vector<std::vector<std::string>> docs;
      for (const auto& s : out) docs.push_back(s.tokens);
      const auto vocab = build_vocabulary(docs, c.policy);
      run.write_jsonl("symbolized.jsonl", [&](std::ostream& s) {
        for (const auto& sl : out) write_slice_jsonl(sl, s);
      });
      run.write_json("vocab.json", json::parse(vocab.to_json()));
      g_log->info("event=symbolize slices={} vocab={} policy={}", out.size(), vocab.size(), c.policy.name());
      run.finish();
    } else if (*embed) {
      Run run("train-embed", o);
      const auto c = build_config(o, f);
      run.input("corpus", corpus_path);
      run.input("split", split_path);
      run.config(c);
      run.seed("seed", c.seed);
      run.seed("pretrain/embed", sub_seed(c.seed, "pretrain/embed"));
      const auto corpus = load_corpus(corpus_path);
      const auto split = load_split(split_path);
      const auto m = train_stage_embedder(corpus, split.train, c, "pretrain");
      const auto h = run.hash();
      run.write_json("vocab.json", json::parse(m.vocab.to_json()));
      save_embedder(m, run.artifact("embedder.bin"), h);
      g_log->info("event=train-embed vocab={} dim={} final_loss={}", m.vocab.size(), m.dim(),
                  m.epoch_losses.empty() ? 0.0 : m.epoch_losses.back());
      run.finish();
    } else if (*pretrain) {
      Run run("pretrain", o);
      const auto c = build_config(o, f);
      run.input("corpus", corpus_path);
      run.input("split", split_path);
      if (!pairs_path.empty()) run.input("pairs", pairs_path);
      if (!embedder_path.empty()) run.input("embedder", embedder_path);
      run.config(c);
      run.seed("seed", c.seed);
      for (const char* s : {"pretrain/embed", "pretrain/matcher", "pretrain/train", "pretrain/pairs"})
        run.seed(s, sub_seed(c.seed, s));
      const auto corpus = load_corpus(corpus_path);
      const auto split = load_split(split_path);
      std::vector<LabeledPair> pairs;
      if (!pairs_path.empty()) {
        pairs = filter_pairs(load_pairs(pairs_path), split.train);
      } else {
        const auto pos = filter_pairs(direct_call_positives(corpus), split.train);
        pairs = assemble_pairs(corpus, pos, neg_ratio, sub_seed(c.seed, "pretrain/pairs"));
      }
      g_log->info("event=pretrain pairs={} train_binaries={}", pairs.size(), split.train.size());
      Learner l;
      if (!embedder_path.empty()) {
        const fs::path dir(embedder_path);
        const auto vocab = Vocabulary::from_json(read_text_file(dir / "vocab.json"));
        l = train_learner_with(load_embedder(dir / "embedder.bin", vocab), corpus, pairs, c, "pretrain");
      } else {
        l = run_pretrain(corpus, split.train, pairs, c);
      }
      const auto h = run.hash();
      run.write_stream("pairs.jsonl", [&](std::ostream& s) { write_pairs(pairs, s, h); });
      for (const auto* name : {"vocab.json", "embedder.bin", "matcher.bin", "history.json", "config.json"})
        run.artifact(std::string("model/") + name);
      save_learner(l, o.out + "/model", h, &c);
      for (std::size_t e = 0; e < l.history.size(); ++e)
        g_log->debug("event=epoch stage=pretrain epoch={} loss={:.6f}", e + 1, l.history[e].mean_loss);
      g_log->info("event=pretrain final_loss={:.6f}", l.history.empty() ? 0.0 : l.history.back().mean_loss);
      run.finish();
    } else if (*finetune) {
      Run run("finetune", o);
      const auto c = build_config(o, f, o.config_file.empty() ? learner_config(model_path) : std::nullopt);
      run.input("corpus", corpus_path);
      run.input("split", split_path);
      run.input("model", model_path);
      if (!pairs_path.empty()) run.input("pairs", pairs_path);
      if (!truth_path.empty()) run.input("positives", truth_path);
      if (!exclude_path.empty()) run.input("exclude", exclude_path);
      run.config(c);
      run.seed("seed", c.seed);
      for (const char* s : {"finetune/embed", "finetune/sigma", "finetune/train", "finetune/pairs", "finetune/cap"})
        run.seed(s, sub_seed(c.seed, s));
      const auto corpus = load_corpus(corpus_path);
      const auto split = load_split(split_path);
      const auto pre = load_learner(model_path);
      check_learner(pre, c);
      std::vector<LabeledPair> pairs;
      if (!pairs_path.empty()) {
        pairs = filter_pairs(load_pairs(pairs_path), split.train);
      } else if (!truth_path.empty()) {
        const auto pos = filter_pairs(load_pairs(truth_path), split.train);
        const auto excl = exclude_path.empty() ? std::vector<LabeledPair>{} : load_pairs(exclude_path);
        pairs = assemble_pairs(corpus, pos, neg_ratio, sub_seed(c.seed, "finetune/pairs"), excl);
      } else {
        throw UsageError("finetune needs --pairs or --positives");
      }
      pairs = cap_pairs(pairs, cap, sub_seed(c.seed, "finetune/cap"));
      g_log->info("event=finetune pairs={} epochs={}", pairs.size(), c.train.epochs);
      const auto l = run_finetune(pre, corpus, split.train, pairs, c);
      const auto h = run.hash();
      run.write_stream("pairs.jsonl", [&](std::ostream& s) { write_pairs(pairs, s, h); });
      for (const auto* name : {"vocab.json", "embedder.bin", "matcher.bin", "history.json", "config.json"})
        run.artifact(std::string("model/") + name);
      save_learner(l, o.out + "/model", h, &c);
      g_log->info("event=finetune final_loss={:.6f}", l.history.empty() ? 0.0 : l.history.back().mean_loss);
      run.finish();
    } else if (*predict) {
      Run run("predict", o);
      auto saved = learner_config(model_path);
      if (!saved) throw DataError(model_path + ": no config.json");
      const auto c = build_config(o, f, saved);
      run.input("corpus", corpus_path);
      run.input("model", model_path);
      if (!pairs_path.empty()) run.input("pairs", pairs_path);
      if (!split_path.empty()) run.input("split", split_path);
      if (!truth_path.empty()) run.input("truth", truth_path);
      if (!vocab_path.empty()) run.input("vocab", vocab_path);
      run.config(c);
      const auto corpus = load_corpus(corpus_path);
      Learner l;
      {
        const fs::path dir(model_path);
        const auto vocab =
            Vocabulary::from_json(read_text_file(vocab_path.empty() ? dir / "vocab.json" : fs::path(vocab_path)));
        l.embedder = load_embedder(dir / "embedder.bin", vocab);
        l.matcher = load_matcher(dir / "matcher.bin", &l.train);
      }
      check_learner(l, c);
      std::vector<ScoredPair> scored;
      if (!pairs_path.empty()) {
        scored = score_pairs(l, corpus, load_pairs(pairs_path), c);
      } else {
        std::set<std::tuple<std::string, Addr, Addr>> truth;
        if (!truth_path.empty())
          for (const auto& p : load_pairs(truth_path)) truth.insert({p.binary_id, p.callsite, p.callee});
        for (const auto& b : select_binaries(which, corpus, split_path)) {
          auto part = score_candidates(l, corpus.at(b), c);
          if (!truth_path.empty())
            for (auto& s : part) s.pair.label = truth.contains({b, s.pair.callsite, s.pair.callee}) ? 1 : 0;
          scored.insert(scored.end(), part.begin(), part.end());
        }
      }
      const auto h = run.hash();
      run.write_stream("scores.jsonl", [&](std::ostream& s) { write_scores(scored, s, h); });
      g_log->info("event=predict pairs={} threshold={}", scored.size(), c.train.threshold);
      run.finish();
    } else if (*eval) {
      Run run("eval", o);
      run.input("scores", scores_path);
      const auto scored = load_scores(scores_path);
      if (scored.empty()) throw DataError(scores_path + ": no scores");
      double tau = o.threshold;
      if (target_recall >= 0) tau = threshold_for_recall(scored, target_recall);
      run.config_hash(text_digest(json{{"threshold", tau}}.dump()));
      auto report = evaluate_scores(scored, tau);
      report.aict = compute_aict(scored, tau);
      run.write_json("report.json", report.to_json());
      g_log->info("event=eval threshold={} precision={} recall={} f1={} aict={}", tau,
                  report.precision.value_or(-1), report.recall.value_or(-1), report.f1.value_or(-1),
                  report.aict.value_or(-1));
      run.finish();
    } else if (*emit) {
      Run run("emit-cg", o);
      run.input("corpus", corpus_path);
      run.input("scores", scores_path);
      run.config_hash(text_digest(json{{"threshold", o.threshold}}.dump()));
      const auto corpus = load_corpus(corpus_path);
      const auto scored = load_scores(scores_path);
      std::map<std::string, std::vector<ScoredPair>> by_bin;
      for (const auto& s : scored) by_bin[s.pair.binary_id].push_back(s);
      for (const auto& [bin, preds] : by_bin) {
        const auto cg = emit_callgraph(corpus.at(bin), preds, o.threshold);
        run.write_json("cg/" + bin + ".json", cg.to_json());
        const auto h = run.hash();
        run.write_stream("cg/" + bin + ".dot", [&](std::ostream& s) { s << "// manifest " << h << "\n" << cg.to_dot(); });
        g_log->info("event=emit-cg bin={} direct={} indirect={}", bin, cg.direct_edges.size(),
                    cg.indirect_edges.size());
      }
      run.finish();
    }
  } catch (const UsageError& e) {
    g_log->error("event=usage_error msg=\"{}\"", e.what());
    return kUsage;
  } catch (const MismatchError& e) {
    g_log->error("event=mismatch msg=\"{}\"", e.what());
    return kMismatch;
  } catch (const ParseError& e) {
    g_log->error("event=parse_error msg=\"{}\"", e.what());
    return kData;
  } catch (const DataError& e) {
    g_log->error("event=data_error msg=\"{}\"", e.what());
    return kData;
  } catch (const json::exception& e) {
    g_log->error("event=data_error msg=\"{}\"", e.what());
    return kData;
  } catch (const Error& e) {
    // Remaining library errors are invalid settings.
    g_log->error("event=usage_error msg=\"{}\"", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    g_log->error("event=data_error msg=\"{}\"", e.what());
    return kData;
  }
  return kOk;
}
