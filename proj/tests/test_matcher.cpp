#include <doctest.h>

#include <filesystem>

#include "cgforge/error.hpp"
#include "cgforge/matcher.hpp"
#include "support/gradcheck.hpp"

using namespace cgforge;

namespace {

MatcherArch toy_arch(std::size_t width) {
  MatcherArch a;
  a.input_dim = width;
  a.extractor_hidden = {16, 16};
  a.classifier_hidden = {16};
  a.dropout = 0.0;
  a.batchnorm = true;
  return a;
}

// Callsites and callees from four clusters; a pair matches when the clusters agree.
std::vector<PairRecord> separable_pairs(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const std::size_t t = 4, k = 4;
  std::vector<std::vector<float>> centres;
  for (int c = 0; c < 4; ++c) {
    std::vector<float> v(t * k);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
    centres.push_back(v);
  }
  auto sample = [&](std::size_t c) {
    EmbeddedSlice e{t, k, centres[c]};
    for (auto& x : e.flat) x += static_cast<float>(rng.uniform(-0.1, 0.1));
    return e;
  };
  std::vector<PairRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = rng.below(4);
    const bool match = i % 2 == 0;
    const std::size_t c2 = match ? c : (c + 1 + rng.below(3)) % 4;
    PairRecord p;
    p.callsite = sample(c);
    p.callee = sample(c2);
    p.label = match ? 1 : 0;
    out.push_back(std::move(p));
  }
  return out;
}

double train_f1(SiameseModel& m, const std::vector<PairRecord>& pairs, double tau) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (const auto& p : pairs) {
    const bool hit = forward(m, p.callsite, p.callee, tau).match;
    tp += hit && p.label == 1;
    fp += hit && p.label == 0;
    fn += !hit && p.label == 1;
  }
  return tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
}

std::vector<std::vector<float>> snapshot(SiameseModel& m) {
  std::vector<std::vector<float>> out;
  for (auto s : m.parameters()) out.emplace_back(s.begin(), s.end());
  return out;
}

}  // namespace

TEST_CASE("contrastive loss closed forms") {
  auto L = [](std::vector<double> d, std::vector<int> y) { return contrastive_loss(d, y); };
  CHECK(std::abs(L({0.0}, {1}) - 0.0) < 1e-12);
  CHECK(std::abs(L({1.0}, {0}) - 0.0) < 1e-12);
  CHECK(std::abs(L({0.5}, {1}) - 0.125) < 1e-12);
  CHECK(std::abs(L({0.2, 0.3}, {1, 0}) - 0.1325) < 1e-12);
  CHECK_THROWS_AS(L({}, {}), Error);
  CHECK_THROWS_AS(L({0.1}, {1, 0}), Error);

  // gradient of the closed form: y d / N - (1 - y) max(1 - d, 0) / N
  std::vector<double> d = {0.2, 0.3};
  std::vector<int> y = {1, 0};
  auto g = contrastive_loss_grad(d, y);
  CHECK(g[0] == doctest::Approx(0.2 / 2));
  CHECK(g[1] == doctest::Approx(-0.7 / 2));
}

TEST_CASE("decision rule is strict") {
  CHECK(decide(0.3, 0.5));
  CHECK_FALSE(decide(0.5, 0.5));
}

TEST_CASE("scores lie in the open unit interval and are repeatable") {
  auto m = SiameseModel::create(toy_arch(16), 9);
  Rng rng(1);
  for (int i = 0; i < 20; ++i) {
    auto q = gradcheck::random_slice(4, 4, rng);
    auto a = gradcheck::random_slice(4, 4, rng);
    auto s1 = forward(m, q, a);
    auto s2 = forward(m, q, a);
    CHECK(s1.d > 0.0);
    CHECK(s1.d < 1.0);
    CHECK(s1.d == s2.d);
  }
  auto wrong = gradcheck::random_slice(3, 4, rng);
  CHECK_THROWS_AS(forward(m, wrong, wrong), MismatchError);
}

TEST_CASE("separable toy pairs are learned") {
  auto pairs = separable_pairs(64, 4);
  auto m = SiameseModel::create(toy_arch(16), 2);
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs = 30;
  cfg.learning_rate = 0.005;
  cfg.seed = 2;
  auto hist = train_matcher(m, pairs, cfg);
  REQUIRE(hist.size() == 30);
  CHECK(hist.back().mean_loss < hist.front().mean_loss);
  CHECK(hist.front().batches == 4);
  CHECK(train_f1(m, pairs, 0.5) >= 0.95);

  auto m2 = SiameseModel::create(toy_arch(16), 2);
  train_matcher(m2, pairs, cfg);
  CHECK(parameter_hash(m2) == parameter_hash(m));
}

TEST_CASE("zero learning rate leaves parameters alone") {
  auto pairs = separable_pairs(32, 5);
  auto m = SiameseModel::create(toy_arch(16), 3);
  const auto before = snapshot(m);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 3;
  cfg.learning_rate = 0.0;
  train_matcher(m, pairs, cfg);
  CHECK(snapshot(m) == before);

  std::vector<PairRecord> none;
  CHECK_THROWS_AS(train_matcher(m, none, cfg), DataError);
}

TEST_CASE("transfer copies the extractors and redraws the classifier") {
  auto pairs = separable_pairs(32, 6);
  auto pre = SiameseModel::create(toy_arch(16), 4);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 2;
  cfg.learning_rate = 0.01;
  train_matcher(pre, pairs, cfg);

  auto m = transfer_init_matcher(pre, pre.arch, 99);
  CHECK(m.callsite_extractor.layers[0].weight == pre.callsite_extractor.layers[0].weight);
  CHECK(m.callee_extractor.layers.back().weight == pre.callee_extractor.layers.back().weight);
  CHECK(m.callsite_extractor.layers[0].running_mean == pre.callsite_extractor.layers[0].running_mean);
  CHECK(m.classifier.layers[0].weight != pre.classifier.layers[0].weight);

  auto other = pre.arch;
  other.extractor_hidden = {16, 12};
  CHECK_THROWS_AS(transfer_init_matcher(pre, other, 99), MismatchError);

  // fine-tuning moves the extractors too
  const auto phi = m.callsite_extractor.layers[0].weight;
  cfg.epochs = 1;
  train_matcher(m, pairs, cfg);
  CHECK(m.callsite_extractor.layers[0].weight != phi);
}

TEST_CASE("batched prediction equals the per-pair loop") {
  auto m = SiameseModel::create(toy_arch(16), 5);
  Rng rng(8);
  std::vector<EmbeddedSlice> qs, as;
  for (int i = 0; i < 1000; ++i) {
    qs.push_back(gradcheck::random_slice(4, 4, rng));
    as.push_back(gradcheck::random_slice(4, 4, rng));
  }
  std::vector<const EmbeddedSlice*> qp, ap;
  for (int i = 0; i < 1000; ++i) {
    qp.push_back(&qs[i]);
    ap.push_back(&as[i]);
  }
  std::vector<Score> loop;
  for (int i = 0; i < 1000; ++i) loop.push_back(forward(m, qs[i], as[i], 0.5));
  for (std::size_t b : {1, 7, 512}) {
    auto got = predict_batch(m, qp, ap, 0.5, b);
    REQUIRE(got.size() == loop.size());
    bool same = true;
    for (std::size_t i = 0; i < got.size(); ++i) same = same && got[i].d == loop[i].d && got[i].match == loop[i].match;
    CHECK(same);
  }
  qp.pop_back();
  CHECK_THROWS_AS(predict_batch(m, qp, ap, 0.5, 7), Error);
}

TEST_CASE("saliency") {
  auto m = SiameseModel::create(toy_arch(16), 6);
  Rng rng(3);
  auto q = gradcheck::random_slice(4, 4, rng);
  auto a = gradcheck::random_slice(4, 4, rng);
  for (auto which : {SaliencyInput::kCallsite, SaliencyInput::kCallee}) {
    auto s = saliency(m, q, a, which);
    CHECK(s.size() == 4);
    for (double x : s) CHECK(x >= 0.0);
  }
  EmbeddedSlice pad{4, 4, std::vector<float>(16, 0.0f)};
  for (double x : saliency(m, pad, a, SaliencyInput::kCallsite)) CHECK(x >= 0.0);

  auto md = SiameseNet<double>::create(gradcheck::tiny_arch(), 12);
  auto tq = gradcheck::random_slice(6, 4, rng);
  auto ta = gradcheck::random_slice(6, 4, rng);
  CHECK(gradcheck::saliency_error(md, tq, ta, SaliencyInput::kCallsite) < 1e-3);
  CHECK(gradcheck::saliency_error(md, tq, ta, SaliencyInput::kCallee) < 1e-3);
}

TEST_CASE("backprop matches central differences") {
  auto m = SiameseNet<double>::create(gradcheck::tiny_arch(), 21);
  auto batch = gradcheck::random_batch(6, 24, 4);
  CHECK(gradcheck::loss_gradient_error(m, batch) < 1e-4);
}

TEST_CASE("matcher files round trip") {
  auto m = SiameseModel::create(toy_arch(16), 7);
  TrainConfig cfg;
  cfg.epochs = 4;
  const auto dir = std::filesystem::temp_directory_path() / "cgforge_matcher_test";
  std::filesystem::create_directories(dir);
  save_matcher(m, cfg, dir / "m.bin");
  TrainConfig back_cfg;
  auto back = load_matcher(dir / "m.bin", &back_cfg);
  CHECK(back.arch == m.arch);
  CHECK(parameter_hash(back) == parameter_hash(m));
  CHECK(back_cfg.epochs == 4);
}
