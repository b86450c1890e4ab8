#include "cgforge/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "cgforge/error.hpp"
#include "cgforge/parallel.hpp"
#include "cgforge/rng.hpp"
#include "cgforge/slicer.hpp"

namespace cgforge {

using nlohmann::json;

Corpus::Corpus(std::vector<ProgramModel> programs) : programs_(std::move(programs)) {
  for (std::size_t i = 0; i < programs_.size(); ++i) {
    if (!index_.emplace(programs_[i].binary_id, i).second)
      throw DataError("binary '" + programs_[i].binary_id + "' appears twice in the corpus");
  }
}

const ProgramModel& Corpus::at(const std::string& binary_id) const {
  auto it = index_.find(binary_id);
  if (it == index_.end()) throw DataError("unknown binary '" + binary_id + "'");
  return programs_[it->second];
}

std::vector<std::string> Corpus::binary_ids() const {
  std::vector<std::string> out;
  for (const auto& p : programs_) out.push_back(p.binary_id);
  return out;
}

Corpus load_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return Corpus(parse_programs(in));
}

// Dataset split

void DatasetSplit::check_disjoint() const {
  std::set<std::string> seen;
  for (const auto* bucket : {&train, &validation, &test}) {
    for (const auto& b : *bucket) {
      if (!seen.insert(b).second) throw DataError("binary '" + b + "' is in more than one split bucket");
    }
  }
}

json DatasetSplit::to_json() const { return {{"train", train}, {"validation", validation}, {"test", test}}; }

DatasetSplit DatasetSplit::from_json(const json& j) {
  DatasetSplit s;
  s.train = j.at("train").get<std::vector<std::string>>();
  s.validation = j.at("validation").get<std::vector<std::string>>();
  s.test = j.at("test").get<std::vector<std::string>>();
  s.check_disjoint();
  return s;
}

DatasetSplit split_by_binary(std::vector<std::string> ids, std::array<double, 3> ratios, std::uint64_t seed) {
  double total = 0;
  for (double r : ratios) {
    if (!(r >= 0)) throw Error("split ratios must be >= 0");
    total += r;
  }
  if (total <= 0) throw Error("split ratios sum to zero");
  if (ratios[0] <= 0) throw Error("the train ratio must be positive");
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DataError("duplicate binary ids");
  const std::size_t n = ids.size();
  const auto buckets = static_cast<std::size_t>(std::count_if(ratios.begin(), ratios.end(), [](double r) { return r > 0; }));
  if (n < buckets)
    throw DataError("cannot split " + std::to_string(n) + " binaries into " + std::to_string(buckets) + " buckets");

  std::array<std::size_t, 3> size{};
  for (int b = 1; b < 3; ++b) {
    if (ratios[b] <= 0) continue;
    size[b] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(ratios[b] / total * static_cast<double>(n))));
  }
  while (size[1] + size[2] >= n) {
    // Give binaries back to train from the larger holdout bucket.
    auto& big = size[1] >= size[2] ? size[1] : size[2];
    --big;
  }
  size[0] = n - size[1] - size[2];

  Rng rng(sub_seed(seed, "split"));
  rng.shuffle(ids);
  DatasetSplit s;
  auto it = ids.begin();
  auto take = [&it](std::vector<std::string>& dst, std::size_t k) {
    dst.assign(it, it + static_cast<std::ptrdiff_t>(k));
    std::sort(dst.begin(), dst.end());
    it += static_cast<std::ptrdiff_t>(k);
  };
  take(s.train, size[0]);
  take(s.validation, size[1]);
  take(s.test, size[2]);
  s.check_disjoint();
  return s;
}

std::vector<LabeledPair> filter_pairs(std::span<const LabeledPair> pairs, std::span<const std::string> binaries) {
  const std::set<std::string> keep(binaries.begin(), binaries.end());
  std::vector<LabeledPair> out;
  for (const auto& p : pairs) {
    if (keep.contains(p.binary_id)) out.push_back(p);
  }
  return out;
}

// Pairs

std::vector<LabeledPair> direct_call_positives(const Corpus& corpus) {
  std::vector<LabeledPair> out;
  for (const auto& p : corpus.programs()) {
    for (const auto& d : extract_direct_pairs(p).pairs) out.push_back({p.binary_id, d.callsite.addr, d.callee, 1});
  }
  return out;
}

namespace {

using PairKey = std::tuple<std::string, Addr, Addr>;
PairKey key_of(const LabeledPair& p) { return {p.binary_id, p.callsite, p.callee}; }

}  // namespace

std::vector<LabeledPair> assemble_pairs(const Corpus& corpus, std::span<const LabeledPair> positives, double ratio,
                                        std::uint64_t seed, std::span<const LabeledPair> exclude) {
  if (positives.empty()) throw DataError("no positive pairs to assemble from");
  if (!(ratio >= 0)) throw Error("negative ratio must be >= 0");
  std::set<PairKey> blocked;
  for (const auto& p : positives) blocked.insert(key_of(p));
  for (const auto& p : exclude) blocked.insert(key_of(p));

  std::vector<std::pair<std::string, Addr>> callsites;
  std::set<std::pair<std::string, Addr>> seen;
  for (const auto& p : positives) {
    if (seen.insert({p.binary_id, p.callsite}).second) callsites.emplace_back(p.binary_id, p.callsite);
  }
  std::map<std::string, std::vector<Addr>> taken;
  std::vector<LabeledPair> pool;
  for (const auto& [bin, cs] : callsites) {
    auto it = taken.find(bin);
    if (it == taken.end()) it = taken.emplace(bin, address_taken_functions(corpus.at(bin))).first;
    for (Addr callee : it->second) {
      LabeledPair n{bin, cs, callee, 0};
      if (!blocked.contains(key_of(n))) pool.push_back(std::move(n));
    }
  }

  const auto want = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(positives.size())));
  if (want > pool.size())
    throw DataError("negative pool has " + std::to_string(pool.size()) + " candidates, " + std::to_string(want) +
                    " requested");
  Rng rng(sub_seed(seed, "negatives"));
  for (std::size_t i = 0; i < want; ++i) std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);

  std::vector<LabeledPair> out(positives.begin(), positives.end());
  for (auto& p : out) p.label = 1;
  out.insert(out.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(want));
  return out;
}

std::vector<LabeledPair> cap_pairs(std::span<const LabeledPair> pairs, std::size_t limit, std::uint64_t seed) {
  if (pairs.size() <= limit) return {pairs.begin(), pairs.end()};
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < pairs.size(); ++i) (pairs[i].label == 1 ? pos : neg).push_back(i);
  const auto npos = std::min<std::size_t>(
      pos.size(), static_cast<std::size_t>(std::llround(static_cast<double>(limit) * static_cast<double>(pos.size()) /
                                                        static_cast<double>(pairs.size()))));
  const std::size_t nneg = std::min(neg.size(), limit - npos);
  Rng rng(sub_seed(seed, "cap"));
  rng.shuffle(pos);
  rng.shuffle(neg);
  std::vector<std::size_t> keep(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(npos));
  keep.insert(keep.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(nneg));
  std::sort(keep.begin(), keep.end());
  std::vector<LabeledPair> out;
  for (auto i : keep) out.push_back(pairs[i]);
  return out;
}

// Configuration

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.embed.dim = 8;
  c.embed.epochs = 5;
  c.slice_len = 40;
  c.arch.extractor_hidden = {128, 128, 64};
  c.arch.classifier_hidden = {64, 64};
  c.arch.dropout = 0.0;
  c.train.batch_size = 64;
  c.train.learning_rate = 0.002;
  c.train.epochs = 20;
  c.finetune_embed_epochs = 0;
  c.finalize();
  return c;
}

void PipelineConfig::finalize() {
  policy.validate();
  embed.validate();
  if (slice_len < 1) throw Error("slice length must be >= 1");
  arch.input_dim = slice_len * static_cast<std::size_t>(embed.dim);
  arch.validate();
  train.validate();
  if (finetune_embed_epochs < 0) throw Error("fine-tune embedder epochs must be >= 0");
}

json PipelineConfig::to_json() const {
  return {{"policy", policy.name()},
          {"modulus", policy.modulus},
          {"embed", embed.to_json()},
          {"slice_len", slice_len},
          {"arch", arch.to_json()},
          {"train", train.to_json()},
          {"finetune_embed_epochs", finetune_embed_epochs},
          {"seed", seed}};
}

PipelineConfig PipelineConfig::from_json(const json& j) {
  PipelineConfig c;
  c.policy = parse_policy(j.at("policy").get<std::string>(), j.at("modulus").get<unsigned>());
  c.embed = EmbedderConfig::from_json(j.at("embed"));
  c.slice_len = j.at("slice_len").get<std::size_t>();
  c.arch = MatcherArch::from_json(j.at("arch"));
  c.train = TrainConfig::from_json(j.at("train"));
  c.finetune_embed_epochs = j.at("finetune_embed_epochs").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.finalize();
  return c;
}

std::string PipelineConfig::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(to_json().dump())));
  return buf;
}

// Featurization and training

std::vector<std::vector<std::string>> embedding_corpus(const Corpus& corpus, std::span<const std::string> binaries,
                                                       const SymbolizationPolicy& policy) {
  std::vector<std::vector<std::string>> docs;
  for (const auto& bin : binaries) {
    const auto& p = corpus.at(bin);
    for (const auto& f : p.functions) {
      if (f.instructions.empty()) continue;
      docs.push_back(symbolize_slice(full_function(p, f.start_addr), policy).tokens);
    }
  }
  return docs;
}

std::vector<PairRecord> featurize(const Corpus& corpus, std::span<const LabeledPair> pairs,
                                  const EmbedderModel& embedder, std::size_t slice_len, unsigned jobs) {
  using Key = std::pair<std::string, Addr>;
  std::map<Key, std::size_t> cs_index, callee_index;
  std::vector<Key> cs_keys, callee_keys;
  for (const auto& p : pairs) {
    if (cs_index.emplace(Key{p.binary_id, p.callsite}, cs_keys.size()).second) cs_keys.emplace_back(p.binary_id, p.callsite);
    if (callee_index.emplace(Key{p.binary_id, p.callee}, callee_keys.size()).second)
      callee_keys.emplace_back(p.binary_id, p.callee);
  }
  const auto& policy = embedder.vocab.policy();
  std::vector<EmbeddedSlice> cs_emb(cs_keys.size()), callee_emb(callee_keys.size());
  parallel_for(cs_keys.size(), jobs, [&](std::size_t i) {
    const auto& p = corpus.at(cs_keys[i].first);
    CallsiteRef ref{p.binary_id, cs_keys[i].second, CallKind::kDirect, 0};
    cs_emb[i] = embed_slice(embedder, symbolize_slice(slice_callsite(p, ref), policy), slice_len);
  });
  parallel_for(callee_keys.size(), jobs, [&](std::size_t i) {
    const auto& p = corpus.at(callee_keys[i].first);
    callee_emb[i] = embed_slice(embedder, symbolize_slice(slice_callee(p, callee_keys[i].second), policy), slice_len);
  });

  std::vector<PairRecord> out(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& p = pairs[i];
    out[i].callsite = cs_emb[cs_index.at({p.binary_id, p.callsite})];
    out[i].callee = callee_emb[callee_index.at({p.binary_id, p.callee})];
    out[i].label = p.label;
    out[i].binary_id = p.binary_id;
    out[i].callsite_addr = p.callsite;
    out[i].callee_addr = p.callee;
  }
  return out;
}

EmbedderModel train_stage_embedder(const Corpus& corpus, std::span<const std::string> binaries,
                                   const PipelineConfig& cfg, std::string_view stage) {
  if (binaries.empty()) throw DataError("no binaries to train the embedder on");
  const auto docs = embedding_corpus(corpus, binaries, cfg.policy);
  auto ecfg = cfg.embed;
  ecfg.rng_seed = sub_seed(cfg.seed, std::string(stage) + "/embed");
  return train_embedder(docs, build_vocabulary(docs, cfg.policy), ecfg);
}

Learner train_learner(const Corpus& corpus, std::span<const std::string> embed_binaries,
                      std::span<const LabeledPair> pairs, const PipelineConfig& cfg, std::string_view stage) {
  if (pairs.empty()) throw DataError("training set is empty");
  return train_learner_with(train_stage_embedder(corpus, embed_binaries, cfg, stage), corpus, pairs, cfg, stage);
}

Learner train_learner_with(EmbedderModel embedder, const Corpus& corpus, std::span<const LabeledPair> pairs,
                           const PipelineConfig& cfg, std::string_view stage) {
  if (pairs.empty()) throw DataError("training set is empty");
  if (!(embedder.vocab.policy() == cfg.policy))
    throw MismatchError("embedder was trained with policy " + embedder.vocab.policy().name() + ", config says " +
                        cfg.policy.name());
  if (embedder.config.dim != cfg.embed.dim)
    throw MismatchError("embedder has dimension " + std::to_string(embedder.config.dim) + ", config says " +
                        std::to_string(cfg.embed.dim));
  const std::string s(stage);
  Learner l;
  l.embedder = std::move(embedder);
  const auto records = featurize(corpus, pairs, l.embedder, cfg.slice_len, cfg.jobs);
  l.matcher = SiameseModel::create(cfg.arch, sub_seed(cfg.seed, s + "/matcher"));
  auto tcfg = cfg.train;
  tcfg.seed = sub_seed(cfg.seed, s + "/train");
  l.history = train_matcher(l.matcher, records, tcfg);
  l.train = tcfg;
  return l;
}

Learner run_pretrain(const Corpus& corpus, std::span<const std::string> train_binaries,
                     std::span<const LabeledPair> dcall_pairs, const PipelineConfig& cfg) {
  return train_learner(corpus, train_binaries, dcall_pairs, cfg, "pretrain");
}

Learner run_finetune(const Learner& pretrained, const Corpus& corpus, std::span<const std::string> train_binaries,
                     std::span<const LabeledPair> icall_pairs, const PipelineConfig& cfg) {
  if (cfg.train.epochs == 0) return pretrained;
  if (icall_pairs.empty()) throw DataError("training set is empty");
  const auto docs = embedding_corpus(corpus, train_binaries, cfg.policy);
  Learner l;
  l.embedder = transfer_init_embedder(pretrained.embedder, build_vocabulary(docs, cfg.policy));
  if (cfg.finetune_embed_epochs > 0)
    continue_training(l.embedder, docs, cfg.finetune_embed_epochs, sub_seed(cfg.seed, "finetune/embed"));
  l.matcher = transfer_init_matcher(pretrained.matcher, cfg.arch, sub_seed(cfg.seed, "finetune/sigma"));
  const auto records = featurize(corpus, icall_pairs, l.embedder, cfg.slice_len, cfg.jobs);
  auto tcfg = cfg.train;
  tcfg.seed = sub_seed(cfg.seed, "finetune/train");
  l.history = train_matcher(l.matcher, records, tcfg);
  l.train = tcfg;
  return l;
}

// Scoring

std::vector<ScoredPair> score_pairs(Learner& learner, const Corpus& corpus, std::span<const LabeledPair> pairs,
                                    const PipelineConfig& cfg) {
  const auto records = featurize(corpus, pairs, learner.embedder, cfg.slice_len, cfg.jobs);
  std::vector<const EmbeddedSlice*> q(records.size()), a(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    q[i] = &records[i].callsite;
    a[i] = &records[i].callee;
  }
  // Whole batches per worker; each batch is scored independently.
  const std::size_t batch = cfg.train.batch_size;
  const std::size_t batches = (records.size() + batch - 1) / batch;
  std::vector<std::vector<Score>> chunks(batches);
  parallel_for(batches, cfg.jobs, [&](std::size_t b) {
    SiameseModel local = learner.matcher;
    const std::size_t begin = b * batch;
    const std::size_t end = std::min(records.size(), begin + batch);
    chunks[b] = predict_batch(local, std::span(q).subspan(begin, end - begin),
                              std::span(a).subspan(begin, end - begin), cfg.train.threshold, batch);
  });
  std::vector<ScoredPair> out;
  out.reserve(pairs.size());
  std::size_t i = 0;
  for (const auto& chunk : chunks) {
    for (const auto& s : chunk) {
      out.push_back({pairs[i], s.d, s.match});
      ++i;
    }
  }
  return out;
}

std::vector<ScoredPair> score_candidates(Learner& learner, const ProgramModel& program, const PipelineConfig& cfg) {
  std::vector<LabeledPair> pairs;
  const auto taken = address_taken_functions(program);
  for (const auto& cs : list_indirect_callsites(program)) {
    for (Addr callee : taken) pairs.push_back({program.binary_id, cs.addr, callee, -1});
  }
  if (pairs.empty()) return {};
  Corpus single(std::vector<ProgramModel>{program});
  return score_pairs(learner, single, pairs, cfg);
}

// Metrics

std::vector<double> threshold_grid() {
  std::vector<double> g(101);
  for (int i = 0; i <= 100; ++i) g[static_cast<std::size_t>(i)] = i / 100.0;
  return g;
}

namespace {

struct Counts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

Counts count_at(std::span<const ScoredPair> scored, double threshold) {
  Counts c;
  for (const auto& s : scored) {
    const bool match = decide(s.d, threshold);
    if (s.pair.label == 1) {
      ++(match ? c.tp : c.fn);
    } else {
      ++(match ? c.fp : c.tn);
    }
  }
  return c;
}

std::optional<double> ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

MetricsReport evaluate_scores(std::span<const ScoredPair> scored, double threshold) {
  for (const auto& s : scored) {
    if (s.pair.label != 0 && s.pair.label != 1)
      throw DataError("pair " + s.pair.binary_id + ":" + hex(s.pair.callsite) + "->" + hex(s.pair.callee) +
                      " has no label");
  }
  MetricsReport r;
  r.threshold = threshold;
  const auto c = count_at(scored, threshold);
  r.tp = c.tp;
  r.fp = c.fp;
  r.fn = c.fn;
  r.tn = c.tn;
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  if (r.precision && r.recall) {
    const double sum = *r.precision + *r.recall;
    r.f1 = sum > 0 ? 2 * *r.precision * *r.recall / sum : 0.0;
  }
  for (double t : threshold_grid()) {
    const auto ct = count_at(scored, t);
    r.pr_curve.push_back({t, ratio(ct.tp, ct.tp + ct.fp), ratio(ct.tp, ct.tp + ct.fn)});
  }
  return r;
}

std::optional<double> compute_aict(std::span<const ScoredPair> candidates, double threshold) {
  std::map<std::pair<std::string, Addr>, std::size_t> per_callsite;
  for (const auto& s : candidates) {
    auto& n = per_callsite[{s.pair.binary_id, s.pair.callsite}];
    if (decide(s.d, threshold)) ++n;
  }
  if (per_callsite.empty()) return std::nullopt;
  double total = 0;
  for (const auto& [k, n] : per_callsite) total += static_cast<double>(n);
  return total / static_cast<double>(per_callsite.size());
}

double threshold_for_recall(std::span<const ScoredPair> scored, double target) {
  for (double t : threshold_grid()) {
    const auto c = count_at(scored, t);
    const auto r = ratio(c.tp, c.tp + c.fn);
    if (r && *r >= target) return t;
  }
  return 1.0;
}

json MetricsReport::to_json() const {
  json curve = json::array();
  for (const auto& p : pr_curve)
    curve.push_back({{"threshold", p.threshold}, {"precision", opt(p.precision)}, {"recall", opt(p.recall)}});
  return {{"tp", tp},
          {"fp", fp},
          {"fn", fn},
          {"tn", tn},
          {"precision", opt(precision)},
          {"recall", opt(recall)},
          {"f1", opt(f1)},
          {"threshold", threshold},
          {"pr_curve", curve},
          {"aict", opt(aict)}};
}

// Call graph

RecoveredCallGraph emit_callgraph(const ProgramModel& program, std::span<const ScoredPair> predictions,
                                  double threshold) {
  RecoveredCallGraph g;
  g.binary_id = program.binary_id;
  g.threshold = threshold;
  for (const auto& f : program.functions) g.nodes.push_back(f.start_addr);
  for (const auto& d : extract_direct_pairs(program).pairs)
    g.direct_edges.push_back({d.callsite.addr, d.callsite.enclosing_function, d.callee});
  for (const auto& s : predictions) {
    if (s.pair.binary_id != program.binary_id || !decide(s.d, threshold)) continue;
    const auto* callee = program.function_at(s.pair.callee);
    if (callee == nullptr || !callee->address_taken)
      throw DataError("predicted callee " + hex(s.pair.callee) + " is not an address-taken function");
    const auto* caller = program.function_containing(s.pair.callsite);
    if (caller == nullptr) throw DataError("callsite " + hex(s.pair.callsite) + " is outside all code");
    g.indirect_edges.push_back({s.pair.callsite, caller->start_addr, s.pair.callee, s.d});
  }
  std::sort(g.indirect_edges.begin(), g.indirect_edges.end(), [](const IndirectEdge& a, const IndirectEdge& b) {
    return std::tie(a.callsite, a.callee) < std::tie(b.callsite, b.callee);
  });
  return g;
}

json RecoveredCallGraph::to_json() const {
  json nodes_j = json::array(), direct = json::array(), indirect = json::array();
  for (Addr n : nodes) nodes_j.push_back(hex(n));
  for (const auto& e : direct_edges)
    direct.push_back({{"callsite", hex(e.callsite)}, {"caller", hex(e.caller)}, {"callee", hex(e.callee)}});
  for (const auto& e : indirect_edges)
    indirect.push_back(
        {{"callsite", hex(e.callsite)}, {"caller", hex(e.caller)}, {"callee", hex(e.callee)}, {"d", e.d}});
  return {{"bin", binary_id},
          {"threshold", threshold},
          {"nodes", nodes_j},
          {"direct_edges", direct},
          {"indirect_edges", indirect}};
}

std::string RecoveredCallGraph::to_dot() const {
  std::ostringstream out;
  out << "digraph \"" << binary_id << "\" {\n";
  for (Addr n : nodes) out << "  \"" << hex(n) << "\";\n";
  for (const auto& e : direct_edges) out << "  \"" << hex(e.caller) << "\" -> \"" << hex(e.callee) << "\";\n";
  char label[32];
  for (const auto& e : indirect_edges) {
    std::snprintf(label, sizeof label, "%.6f", e.d);
    out << "  \"" << hex(e.caller) << "\" -> \"" << hex(e.callee) << "\" [style=dashed, label=\"" << label
        << "\"];\n";
  }
  out << "}\n";
  return out.str();
}

// I/O

namespace {

template <class Fn>
void for_each_json_line(std::istream& in, Fn&& fn) {
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError(line, std::string("invalid JSON: ") + e.what());
    }
    try {
      fn(j);
    } catch (const json::exception& e) {
      throw ParseError(line, e.what());
    } catch (const DataError& e) {
      throw ParseError(line, e.what());
    }
  }
}

LabeledPair pair_from_json(const json& j) {
  LabeledPair p;
  p.binary_id = j.at("bin").get<std::string>();
  p.callsite = parse_hex(j.at("cs_addr").get<std::string>());
  p.callee = parse_hex(j.at("callee_addr").get<std::string>());
  p.label = j.contains("y") ? j.at("y").get<int>() : -1;
  return p;
}

json pair_to_json(const LabeledPair& p) {
  json j = {{"bin", p.binary_id}, {"cs_addr", hex(p.callsite)}, {"callee_addr", hex(p.callee)}};
  if (p.label >= 0) j["y"] = p.label;
  return j;
}

}  // namespace

void write_pairs(std::span<const LabeledPair> pairs, std::ostream& out, const std::string& manifest) {
  for (const auto& p : pairs) {
    json j = pair_to_json(p);
    if (!manifest.empty()) j["manifest"] = manifest;
    out << j.dump() << '\n';
  }
}

std::vector<LabeledPair> read_pairs(std::istream& in) {
  std::vector<LabeledPair> out;
  for_each_json_line(in, [&out](const json& j) { out.push_back(pair_from_json(j)); });
  return out;
}

void write_scores(std::span<const ScoredPair> scored, std::ostream& out, const std::string& manifest) {
  for (const auto& s : scored) {
    json j = pair_to_json(s.pair);
    j["d"] = s.d;
    j["match"] = s.match;
    if (!manifest.empty()) j["manifest"] = manifest;
    out << j.dump() << '\n';
  }
}

std::vector<ScoredPair> read_scores(std::istream& in) {
  std::vector<ScoredPair> out;
  for_each_json_line(in, [&out](const json& j) {
    out.push_back({pair_from_json(j), j.at("d").get<double>(), j.at("match").get<bool>()});
  });
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write " + path.string());
    out << text;
    if (!out) throw DataError("write failed for " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void save_learner(const Learner& l, const std::filesystem::path& dir, const std::string& manifest,
                  const PipelineConfig* cfg) {
  std::filesystem::create_directories(dir);
  auto stamp = [&manifest](json j) {
    if (!manifest.empty()) j["manifest"] = manifest;
    return j.dump(2) + "\n";
  };
  write_text_file(dir / "vocab.json", stamp(json::parse(l.embedder.vocab.to_json())));
  save_embedder(l.embedder, dir / "embedder.bin", manifest);
  save_matcher(l.matcher, l.train, dir / "matcher.bin", manifest);
  json hist = json::array();
  for (const auto& e : l.history) hist.push_back({{"mean_loss", e.mean_loss}, {"batches", e.batches}});
  write_text_file(dir / "history.json", stamp({{"epochs", hist}}));
  if (cfg != nullptr) write_text_file(dir / "config.json", stamp({{"config", cfg->to_json()}, {"hash", cfg->hash()}}));
}

Learner load_learner(const std::filesystem::path& dir) {
  Learner l;
  const auto vocab = Vocabulary::from_json(read_text_file(dir / "vocab.json"));
  l.embedder = load_embedder(dir / "embedder.bin", vocab);
  l.matcher = load_matcher(dir / "matcher.bin", &l.train);
  if (std::filesystem::exists(dir / "history.json")) {
    for (const auto& e : json::parse(read_text_file(dir / "history.json")).at("epochs"))
      l.history.push_back({e.at("mean_loss").get<double>(), e.at("batches").get<std::size_t>()});
  }
  return l;
}

}  // namespace cgforge
