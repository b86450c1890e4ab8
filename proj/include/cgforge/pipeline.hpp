#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgforge/corpus.hpp"
#include "cgforge/embedder.hpp"
#include "cgforge/ingest.hpp"
#include "cgforge/matcher.hpp"
#include "cgforge/symbolizer.hpp"

namespace cgforge {

/// Programs indexed by binary id.
class Corpus {
 public:
  Corpus() = default;
  explicit Corpus(std::vector<ProgramModel> programs);

  const ProgramModel& at(const std::string& binary_id) const;
  bool contains(const std::string& binary_id) const { return index_.contains(binary_id); }
  const std::vector<ProgramModel>& programs() const { return programs_; }
  std::vector<std::string> binary_ids() const;

 private:
  std::vector<ProgramModel> programs_;
  std::map<std::string, std::size_t> index_;
};

Corpus load_corpus(const std::filesystem::path& path);

struct DatasetSplit {
  std::vector<std::string> train, validation, test;

  /// Throws if any binary appears in more than one bucket.
  void check_disjoint() const;
  nlohmann::json to_json() const;
  static DatasetSplit from_json(const nlohmann::json& j);
};

DatasetSplit split_by_binary(std::vector<std::string> binary_ids,
                             std::array<double, 3> ratios = {0.8, 0.1, 0.1}, std::uint64_t seed = 1);

/// Keeps the pairs whose binary is in `binaries`.
std::vector<LabeledPair> filter_pairs(std::span<const LabeledPair> pairs,
                                      std::span<const std::string> binaries);

/// Positives from statically resolved direct calls.
std::vector<LabeledPair> direct_call_positives(const Corpus& corpus);

/// Positives followed by round(ratio * |positives|) negatives drawn uniformly
/// from (callsite x address-taken function) pairs of the same binary that are
/// neither positive nor listed in `exclude`.
std::vector<LabeledPair> assemble_pairs(const Corpus& corpus, std::span<const LabeledPair> positives,
                                        double ratio, std::uint64_t seed,
                                        std::span<const LabeledPair> exclude = {});

/// Deterministic subsample of at most `limit` pairs, keeping the positive to
/// negative proportion.
std::vector<LabeledPair> cap_pairs(std::span<const LabeledPair> pairs, std::size_t limit, std::uint64_t seed);

struct PipelineConfig {
  SymbolizationPolicy policy;
  EmbedderConfig embed;
  std::size_t slice_len = 128;
  MatcherArch arch;  // input_dim is kept equal to slice_len * embed.dim
  TrainConfig train;
  int finetune_embed_epochs = 1;
  unsigned jobs = 1;
  std::uint64_t seed = 1;

  /// Small slices, 8-dimensional tokens and narrow layers: trains on a laptop
  /// in seconds and does not overfit a few thousand synthetic pairs.
  static PipelineConfig desk();

  /// Derives arch.input_dim and validates.
  void finalize();
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  std::string hash() const;
};

/// Embedder plus matcher, the unit that is pretrained, fine-tuned and saved.
struct Learner {
  EmbedderModel embedder;
  SiameseModel matcher;
  TrainConfig train;
  std::vector<EpochStats> history;
};

/// Symbolized whole-function token sequences of the given binaries.
std::vector<std::vector<std::string>> embedding_corpus(const Corpus& corpus,
                                                       std::span<const std::string> binaries,
                                                       const SymbolizationPolicy& policy);

std::vector<PairRecord> featurize(const Corpus& corpus, std::span<const LabeledPair> pairs,
                                  const EmbedderModel& embedder, std::size_t slice_len, unsigned jobs);

/// Trains a learner from scratch. The embedder corpus comes from
/// `embed_binaries` and the matcher trains on `pairs`.
Learner train_learner(const Corpus& corpus, std::span<const std::string> embed_binaries,
                      std::span<const LabeledPair> pairs, const PipelineConfig& cfg, std::string_view stage);

/// The embedder half of train_learner, seeded by `stage`.
EmbedderModel train_stage_embedder(const Corpus& corpus, std::span<const std::string> binaries,
                                   const PipelineConfig& cfg, std::string_view stage);

/// The matcher half of train_learner on top of a given embedder. Throws
/// MismatchError when the embedder disagrees with the config.
Learner train_learner_with(EmbedderModel embedder, const Corpus& corpus, std::span<const LabeledPair> pairs,
                           const PipelineConfig& cfg, std::string_view stage);

Learner run_pretrain(const Corpus& corpus, std::span<const std::string> train_binaries,
                     std::span<const LabeledPair> dcall_pairs, const PipelineConfig& cfg);

/// Transfer from a pretrained learner: extractors and token vectors copied,
/// classifier drawn fresh. With zero matcher epochs the pretrained learner is
/// returned unchanged (zero-shot mode).
Learner run_finetune(const Learner& pretrained, const Corpus& corpus, std::span<const std::string> train_binaries,
                     std::span<const LabeledPair> icall_pairs, const PipelineConfig& cfg);

struct ScoredPair {
  LabeledPair pair;
  double d = 0;
  bool match = false;
};

std::vector<ScoredPair> score_pairs(Learner& learner, const Corpus& corpus, std::span<const LabeledPair> pairs,
                                    const PipelineConfig& cfg);

/// Every indirect callsite of the program paired with every address-taken
/// function, scored.
std::vector<ScoredPair> score_candidates(Learner& learner, const ProgramModel& program, const PipelineConfig& cfg);

struct PrPoint {
  double threshold = 0;
  std::optional<double> precision;
  std::optional<double> recall;
};

struct MetricsReport {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  std::optional<double> precision, recall, f1;
  double threshold = 0.5;
  std::vector<PrPoint> pr_curve;
  std::optional<double> aict;

  double f1_or_zero() const { return f1.value_or(0.0); }
  nlohmann::json to_json() const;
};

/// The 101 evenly spaced thresholds 0, 0.01, ..., 1.
std::vector<double> threshold_grid();

/// Confusion counts at `threshold` and the PR curve; aict left empty.
MetricsReport evaluate_scores(std::span<const ScoredPair> scored, double threshold);

/// Mean number of candidates with d < threshold per callsite. Absent when
/// there are no callsites.
std::optional<double> compute_aict(std::span<const ScoredPair> candidates, double threshold);

/// Smallest grid threshold whose recall reaches `target`, or 1.0.
double threshold_for_recall(std::span<const ScoredPair> scored, double target);

struct DirectEdge {
  Addr callsite = 0;
  Addr caller = 0;
  Addr callee = 0;
};

struct IndirectEdge {
  Addr callsite = 0;
  Addr caller = 0;
  Addr callee = 0;
  double d = 0;
};

struct RecoveredCallGraph {
  std::string binary_id;
  double threshold = 0.5;
  std::vector<Addr> nodes;
  std::vector<DirectEdge> direct_edges;
  std::vector<IndirectEdge> indirect_edges;

  nlohmann::json to_json() const;
  std::string to_dot() const;
};

RecoveredCallGraph emit_callgraph(const ProgramModel& program, std::span<const ScoredPair> predictions,
                                  double threshold);

/// A non-empty `manifest` is added to every row as "manifest".
void write_pairs(std::span<const LabeledPair> pairs, std::ostream& out, const std::string& manifest = {});
std::vector<LabeledPair> read_pairs(std::istream& in);
void write_scores(std::span<const ScoredPair> scored, std::ostream& out, const std::string& manifest = {});
std::vector<ScoredPair> read_scores(std::istream& in);

/// Writes vocab.json, embedder.bin, matcher.bin, history.json and, when
/// given, the pipeline config as config.json.
void save_learner(const Learner& l, const std::filesystem::path& dir, const std::string& manifest = {},
                  const PipelineConfig* cfg = nullptr);
Learner load_learner(const std::filesystem::path& dir);

/// Writes text through a temporary file so readers never see partial output.
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace cgforge
