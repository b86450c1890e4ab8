#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>

#include "cgforge/error.hpp"
#include "cgforge/pipeline.hpp"
#include "support/experiment.hpp"
#include "support/fixtures.hpp"

using namespace cgforge;

namespace {

std::vector<std::string> ids(int n) {
  std::vector<std::string> v;
  for (int i = 0; i < n; ++i) v.push_back("bin" + std::to_string(i));
  return v;
}

ScoredPair scored(std::string bin, Addr cs, Addr callee, int label, double d) {
  return {{std::move(bin), cs, callee, label}, d, d < 0.5};
}

SyntheticCorpus small_corpus(std::size_t bins, std::uint64_t seed) {
  CorpusConfig cc;
  cc.binaries = bins;
  cc.seed = seed;
  return generate_corpus(cc);
}

PipelineConfig tiny_config() {
  auto cfg = PipelineConfig::desk();
  cfg.embed.dim = 4;
  cfg.embed.epochs = 1;
  cfg.slice_len = 12;
  cfg.arch.extractor_hidden = {8};
  cfg.arch.classifier_hidden = {8};
  cfg.train.epochs = 1;
  cfg.train.batch_size = 32;
  cfg.finalize();
  return cfg;
}

}  // namespace

TEST_CASE("split by binary") {
  auto s = split_by_binary(ids(10), {0.8, 0.1, 0.1}, 1);
  CHECK(s.train.size() == 8);
  CHECK(s.validation.size() == 1);
  CHECK(s.test.size() == 1);
  s.check_disjoint();

  auto t = split_by_binary(ids(3), {0.8, 0.1, 0.1}, 1);
  CHECK(t.train.size() == 1);
  CHECK(t.validation.size() == 1);
  CHECK(t.test.size() == 1);

  CHECK_THROWS_AS(split_by_binary(ids(2), {0.8, 0.1, 0.1}, 1), DataError);
  CHECK(split_by_binary(ids(10), {0.8, 0.1, 0.1}, 5).train == split_by_binary(ids(10), {0.8, 0.1, 0.1}, 5).train);

  DatasetSplit bad{{"a", "b"}, {"b"}, {}};
  CHECK_THROWS_AS(bad.check_disjoint(), DataError);
}

TEST_CASE("negative sampling") {
  auto sc = small_corpus(6, 11);
  Corpus corpus(sc.programs);
  auto pos = direct_call_positives(corpus);
  REQUIRE(pos.size() >= 100);
  pos.resize(100);
  auto pairs = assemble_pairs(corpus, pos, 1.0, 3, sc.compatible);
  CHECK(pairs.size() == 200);
  CHECK(experiment::positives(pairs) == 100);
  std::set<LabeledPair> positives;
  for (const auto& p : pos) positives.insert(p);
  std::set<std::tuple<std::string, Addr, Addr>> compatible;
  for (const auto& c : sc.compatible) compatible.insert({c.binary_id, c.callsite, c.callee});
  std::set<std::tuple<std::string, Addr, Addr>> negatives;
  for (const auto& p : pairs) {
    if (p.label != 0) continue;
    negatives.insert({p.binary_id, p.callsite, p.callee});
    CHECK_FALSE(compatible.contains({p.binary_id, p.callsite, p.callee}));
    const auto* f = corpus.at(p.binary_id).function_at(p.callee);
    REQUIRE(f != nullptr);
    CHECK(f->address_taken);
  }
  CHECK(negatives.size() == 100);  // no duplicates
  for (const auto& [b, cs, callee] : negatives) CHECK_FALSE(positives.contains({b, cs, callee, 1}));

  CHECK(assemble_pairs(corpus, pos, 1.0, 3, sc.compatible) == pairs);
  CHECK(assemble_pairs(corpus, pos, 0.0, 3, sc.compatible) == pos);
  CHECK_THROWS_AS(assemble_pairs(corpus, pos, 1e6, 3, sc.compatible), DataError);
}

TEST_CASE("capping keeps the label mix") {
  std::vector<LabeledPair> pairs;
  for (int i = 0; i < 600; ++i) pairs.push_back({"b", Addr(i), Addr(i + 1), i < 300 ? 1 : 0});
  auto capped = cap_pairs(pairs, 400, 2);
  CHECK(capped.size() == 400);
  CHECK(experiment::positives(capped) == 200);
  CHECK(cap_pairs(pairs, 1000, 2).size() == 600);
}

TEST_CASE("split keeps test pairs out of training") {
  auto d = experiment::build(3, 20, 3, 400);
  std::set<std::string> train(d.split.train.begin(), d.split.train.end());
  for (const auto& p : d.icall_test) CHECK_FALSE(train.contains(p.binary_id));
  for (const auto& p : d.dcall_validation) CHECK_FALSE(train.contains(p.binary_id));
  for (const auto& p : d.dcall_train) CHECK(train.contains(p.binary_id));
}

TEST_CASE("metric formulas") {
  std::vector<ScoredPair> s;
  for (int i = 0; i < 9; ++i) s.push_back(scored("b", i, 1, 1, 0.1));  // TP
  s.push_back(scored("b", 100, 1, 0, 0.2));                            // FP
  s.push_back(scored("b", 101, 1, 1, 0.9));                            // FN
  for (int i = 0; i < 9; ++i) s.push_back(scored("b", 200 + i, 1, 0, 0.8));  // TN
  auto r = evaluate_scores(s, 0.5);
  CHECK(r.tp == 9);
  CHECK(r.fp == 1);
  CHECK(r.fn == 1);
  CHECK(r.tn == 9);
  CHECK(*r.precision == doctest::Approx(0.9));
  CHECK(*r.recall == doctest::Approx(0.9));
  CHECK(*r.f1 == doctest::Approx(0.9));
  CHECK(r.pr_curve.size() == 101);

  for (auto& x : s) x.d = 0.0;
  CHECK(*evaluate_scores(s, 0.5).recall == 1.0);

  std::vector<ScoredPair> negatives_only = {scored("b", 1, 1, 0, 0.9)};
  auto n = evaluate_scores(negatives_only, 0.5);
  CHECK_FALSE(n.recall.has_value());
  CHECK_FALSE(n.f1.has_value());
  CHECK(n.to_json()["recall"].is_null());

  std::vector<ScoredPair> unlabeled = {scored("b", 1, 1, -1, 0.1)};
  CHECK_THROWS_AS(evaluate_scores(unlabeled, 0.5), DataError);
}

TEST_CASE("average indirect call targets") {
  std::vector<ScoredPair> c;
  for (int i = 0; i < 3; ++i) c.push_back(scored("b", 0x10, 0x100 + i, -1, 0.1));
  for (int i = 0; i < 5; ++i) c.push_back(scored("b", 0x20, 0x100 + i, -1, 0.2));
  c.push_back(scored("b", 0x20, 0x200, -1, 0.7));
  CHECK(*compute_aict(c, 0.5) == doctest::Approx(4.0));
  CHECK(*compute_aict(c, 0.0) == 0.0);
  CHECK_FALSE(compute_aict({}, 0.5).has_value());

  std::vector<ScoredPair> labelled = {scored("b", 1, 1, 1, 0.3), scored("b", 2, 1, 1, 0.6)};
  CHECK(threshold_for_recall(labelled, 0.5) == doctest::Approx(0.31));
  CHECK(threshold_for_recall(labelled, 1.0) == doctest::Approx(0.61));
}

TEST_CASE("call graph emission") {
  auto p = mark_address_taken(fixture::program(
      "b", {{0x100, 0x120, {{0x100, "lea rax, sub_200", {}}, {0x107, "call rax"}, {0x109, "call sub_300"}, {0x10e, "ret"}}},
            {0x200, 0x210, {{0x200, "ret"}}},
            {0x300, 0x320, {{0x300, "lea rcx, sub_400"}, {0x307, "call rcx"}, {0x309, "ret"}}},
            {0x400, 0x410, {{0x400, "ret"}}}}));
  REQUIRE(address_taken_functions(p) == std::vector<Addr>{0x200, 0x400});

  auto none = emit_callgraph(p, {}, 0.5);
  CHECK(none.indirect_edges.empty());
  REQUIRE(none.direct_edges.size() == 1);
  CHECK(none.direct_edges[0].caller == 0x100);
  CHECK(none.direct_edges[0].callee == 0x300);
  CHECK(none.nodes == std::vector<Addr>{0x100, 0x200, 0x300, 0x400});

  std::vector<ScoredPair> preds = {scored("b", 0x107, 0x200, -1, 0.1), scored("b", 0x107, 0x400, -1, 0.7),
                                   scored("b", 0x307, 0x400, -1, 0.3), scored("b", 0x307, 0x200, -1, 0.5)};
  auto g = emit_callgraph(p, preds, 0.5);
  REQUIRE(g.indirect_edges.size() == 2);
  CHECK(g.indirect_edges[0].callsite == 0x107);
  CHECK(g.indirect_edges[0].caller == 0x100);
  CHECK(g.indirect_edges[0].callee == 0x200);
  CHECK(g.indirect_edges[1].caller == 0x300);
  CHECK(g.indirect_edges[1].callee == 0x400);
  const auto dot = g.to_dot();
  CHECK(dot.find("\"0x100\" -> \"0x300\";") != std::string::npos);
  CHECK(dot.find("\"0x300\" -> \"0x400\" [style=dashed") != std::string::npos);
  CHECK(g.to_json()["indirect_edges"].size() == 2);

  std::vector<ScoredPair> bad = {scored("b", 0x107, 0x300, -1, 0.1)};  // not address-taken
  CHECK_THROWS_AS(emit_callgraph(p, bad, 0.5), DataError);

  std::vector<ScoredPair> one = {scored("b", 0x107, 0x200, -1, 0.2)};
  CHECK(emit_callgraph(p, one, 0.5).indirect_edges.size() == 1);
}

TEST_CASE("pair and score files round trip") {
  std::vector<LabeledPair> pairs = {{"a", 0x10, 0x20, 1}, {"b", 0x30, 0x40, 0}};
  std::stringstream io;
  write_pairs(pairs, io, "abc");
  CHECK(io.str().find("\"manifest\":\"abc\"") != std::string::npos);
  CHECK(read_pairs(io) == pairs);

  std::vector<ScoredPair> s = {scored("a", 0x10, 0x20, 1, 0.25)};
  std::stringstream so;
  write_scores(s, so);
  auto back = read_scores(so);
  REQUIRE(back.size() == 1);
  CHECK(back[0].pair == s[0].pair);
  CHECK(back[0].d == 0.25);

  std::stringstream broken("{\"bin\":\"a\"}\nnot json\n");
  CHECK_THROWS_AS(read_pairs(broken), ParseError);
}

TEST_CASE("config hashing") {
  auto a = PipelineConfig::desk();
  auto b = PipelineConfig::desk();
  CHECK(a.hash() == b.hash());
  b.jobs = 8;
  CHECK(a.hash() == b.hash());
  b.train.learning_rate = 0.1;
  CHECK(a.hash() != b.hash());
  CHECK(PipelineConfig::from_json(a.to_json()).hash() == a.hash());
  CHECK(a.arch.input_dim == a.slice_len * static_cast<std::size_t>(a.embed.dim));
}

TEST_CASE("training stages") {
  auto sc = small_corpus(5, 21);
  Corpus corpus(sc.programs);
  auto split = split_by_binary(corpus.binary_ids(), {0.6, 0.2, 0.2}, 1);
  auto pos = filter_pairs(direct_call_positives(corpus), split.train);
  auto pairs = assemble_pairs(corpus, pos, 1.0, 1, sc.compatible);
  auto icalls = assemble_pairs(corpus, filter_pairs(sc.icall_truth, split.train), 1.0, 2, sc.compatible);

  SUBCASE("zero epochs returns the initialization") {
    auto cfg = tiny_config();
    cfg.train.epochs = 0;
    auto l = run_pretrain(corpus, split.train, pairs, cfg);
    CHECK(l.history.empty());
    auto init = SiameseModel::create(cfg.arch, sub_seed(cfg.seed, "pretrain/matcher"));
    CHECK(parameter_hash(l.matcher) == parameter_hash(init));
  }

  SUBCASE("finetune") {
    auto cfg = tiny_config();
    auto pre = run_pretrain(corpus, split.train, pairs, cfg);
    auto zero = cfg;
    zero.train.epochs = 0;
    auto same = run_finetune(pre, corpus, split.train, icalls, zero);
    CHECK(parameter_hash(same.matcher) == parameter_hash(pre.matcher));

    auto ft = run_finetune(pre, corpus, split.train, icalls, cfg);
    CHECK(ft.history.size() == 1);
    CHECK(ft.embedder.token_vectors == pre.embedder.token_vectors);
    CHECK(ft.matcher.classifier.layers[0].weight != pre.matcher.classifier.layers[0].weight);

    auto other = cfg;
    other.arch.extractor_hidden = {6};
    other.finalize();
    CHECK_THROWS_AS(run_finetune(pre, corpus, split.train, icalls, other), MismatchError);
    std::vector<LabeledPair> none;
    CHECK_THROWS_AS(run_finetune(pre, corpus, split.train, none, cfg), DataError);
  }

  SUBCASE("learner files round trip and score identically") {
    auto cfg = tiny_config();
    auto l = run_pretrain(corpus, split.train, pairs, cfg);
    const auto dir = std::filesystem::temp_directory_path() / "cgforge_learner_test";
    std::filesystem::remove_all(dir);
    save_learner(l, dir, "m1", &cfg);
    auto back = load_learner(dir);
    auto a = score_pairs(l, corpus, icalls, cfg);
    auto b = score_pairs(back, corpus, icalls, cfg);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].d == b[i].d);

    auto jobs = cfg;
    jobs.jobs = 3;
    auto c = score_pairs(l, corpus, icalls, jobs);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].d == c[i].d);
  }

  SUBCASE("candidates are every indirect callsite against every address-taken function") {
    auto cfg = tiny_config();
    auto l = run_pretrain(corpus, split.train, pairs, cfg);
    const auto& prog = corpus.at(split.test[0]);
    auto cands = score_candidates(l, prog, cfg);
    CHECK(cands.size() == list_indirect_callsites(prog).size() * address_taken_functions(prog).size());
  }
}

TEST_CASE("direct-call learner validation F1 on the synthetic corpus" * doctest::skip(true)) {
  // registered with ctest separately; see CMakeLists.txt
  auto d = experiment::build();
  auto cfg = PipelineConfig::desk();
  auto pre = run_pretrain(d.corpus, d.split.train, d.dcall_train, cfg);
  const double f1 = experiment::f1(pre, d, d.dcall_validation, cfg);
  MESSAGE("validation F1 " << f1);
  CHECK(f1 >= 0.9);
}
