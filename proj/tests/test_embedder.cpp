#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "cgforge/embedder.hpp"
#include "cgforge/error.hpp"
#include "cgforge/rng.hpp"

using namespace cgforge;
namespace fs = std::filesystem;

namespace {

const SymbolizationPolicy kLoose{SymbolizationMode::kLoose, 10};
using Toks = std::vector<std::string>;

std::vector<Toks> toy_corpus() {
  return {{"push", "rbp", "mov", "rbp", ",", "rsp", "call", "fun3", "leave", "ret"},
          {"mov", "rdi", ",", "rax", "call", "rdx", "ret", "oddball"}};
}

EmbedderConfig small(int epochs, std::uint64_t seed = 3) {
  EmbedderConfig c;
  c.dim = 8;
  c.epochs = epochs;
  c.rng_seed = seed;
  return c;
}

Slice slice_of(Toks tokens, SliceOrigin origin, std::size_t anchor = 0) {
  Slice s;
  s.origin = origin;
  s.tokens = std::move(tokens);
  s.addr = 0x100;
  // one token per pseudo-instruction so the anchor lands on token `anchor`
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    s.kept_addrs.push_back(0x100 + i - anchor);
    s.token_offsets.push_back(i);
  }
  return s;
}

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "cgforge_embedder_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("training lowers the loss and is reproducible") {
  auto corpus = toy_corpus();
  auto vocab = build_vocabulary(corpus, kLoose);
  auto m = train_embedder(corpus, vocab, small(50));
  REQUIRE(m.epoch_losses.size() == 50);
  CHECK(m.epoch_losses.back() < m.epoch_losses.front());
  CHECK(m.token_vectors.size() == vocab.size() * 8);
  CHECK(m.paragraph_vectors.size() == corpus.size() * 8);

  auto again = train_embedder(corpus, vocab, small(50));
  CHECK(again.token_vectors == m.token_vectors);
  CHECK(train_embedder(corpus, vocab, small(50, 4)).token_vectors != m.token_vectors);

  // PAD is zero; a token seen once still gets a vector
  for (float x : m.token_vector(Vocabulary::kPad)) CHECK(x == 0.0f);
  bool trained = false;
  for (float x : m.token_vector(vocab.index_of("oddball"))) trained = trained || x != 0.0f;
  CHECK(trained);
}

TEST_CASE("empty corpus is rejected") {
  std::vector<Toks> none;
  auto vocab = build_vocabulary(toy_corpus(), kLoose);
  CHECK_THROWS_AS(train_embedder(none, vocab, small(1)), DataError);
}

TEST_CASE("slice embedding pads and windows") {
  auto corpus = toy_corpus();
  auto vocab = build_vocabulary(corpus, kLoose);
  auto m = train_embedder(corpus, vocab, small(2));

  auto e = embed_slice(m, slice_of({"mov", "rdi", "ret"}, SliceOrigin::kCallsite), 5);
  CHECK(e.length == 5);
  CHECK(e.dim == 8);
  for (std::size_t r = 0; r < 3; ++r) {
    auto want = m.token_vector(vocab.index_of(std::vector<std::string>{"mov", "rdi", "ret"}[r]));
    CHECK(std::equal(want.begin(), want.end(), e.row(r).begin()));
  }
  for (std::size_t r = 3; r < 5; ++r)
    for (float x : e.row(r)) CHECK(x == 0.0f);

  // 9 tokens, T=5, call token at index 6: rows are tokens 4..8 (tail clamp)
  Toks long_tokens = {"push", "rbp", "mov", "rbp", ",", "rsp", "call", "fun3", "leave"};
  auto w = embed_slice(m, slice_of(long_tokens, SliceOrigin::kCallsite, 6), 5);
  for (std::size_t r = 0; r < 5; ++r) {
    auto want = m.token_vector(vocab.index_of(long_tokens[4 + r]));
    CHECK(std::equal(want.begin(), want.end(), w.row(r).begin()));
  }
  // call at index 4: centred window 2..6
  auto c = embed_slice(m, slice_of(long_tokens, SliceOrigin::kCallsite, 4), 5);
  for (std::size_t r = 0; r < 5; ++r) {
    auto want = m.token_vector(vocab.index_of(long_tokens[2 + r]));
    CHECK(std::equal(want.begin(), want.end(), c.row(r).begin()));
  }
  // callee slices keep the head
  auto h = embed_slice(m, slice_of(long_tokens, SliceOrigin::kCallee), 5);
  for (std::size_t r = 0; r < 5; ++r) {
    auto want = m.token_vector(vocab.index_of(long_tokens[r]));
    CHECK(std::equal(want.begin(), want.end(), h.row(r).begin()));
  }

  CHECK_THROWS_AS(embed_slice(m, slice_of({}, SliceOrigin::kCallsite), 5), DataError);
  CHECK_THROWS_AS(embed_slice(m, slice_of({"ret"}, SliceOrigin::kCallsite), 0), Error);
}

TEST_CASE("transfer keeps token vectors until trained further") {
  auto corpus = toy_corpus();
  auto vocab = build_vocabulary(corpus, kLoose);
  auto pre = train_embedder(corpus, vocab, small(5));

  auto copy = transfer_init_embedder(pre, vocab);
  CHECK(copy.token_vectors == pre.token_vectors);

  std::vector<Toks> other = {{"mov", "rax", ",", "rdi", "ret"}, {"push", "rbp", "leave", "ret"}};
  continue_training(copy, other, 5, 11);
  CHECK(copy.token_vectors != pre.token_vectors);
  for (float x : copy.token_vector(Vocabulary::kPad)) CHECK(x == 0.0f);

  auto strict = build_vocabulary(corpus, {SymbolizationMode::kStrict, 10});
  CHECK_THROWS_AS(transfer_init_embedder(pre, strict), MismatchError);
  auto n7 = build_vocabulary(corpus, {SymbolizationMode::kLoose, 7});
  CHECK_THROWS_AS(transfer_init_embedder(pre, n7), MismatchError);
  auto bigger = build_vocabulary(std::vector<Toks>{{"mov", "nop"}}, kLoose);
  CHECK_THROWS_AS(transfer_init_embedder(pre, bigger), MismatchError);
}

TEST_CASE("save and load") {
  auto corpus = toy_corpus();
  auto vocab = build_vocabulary(corpus, kLoose);
  auto m = train_embedder(corpus, vocab, small(3));
  const auto path = temp_file("e.bin");
  save_embedder(m, path);
  auto back = load_embedder(path, vocab);
  CHECK(back.token_vectors == m.token_vectors);
  CHECK(back.config.dim == 8);
  auto other = build_vocabulary(std::vector<Toks>{{"nop"}}, kLoose);
  CHECK_THROWS_AS(load_embedder(path, other), MismatchError);
}

TEST_CASE("negative sampling gradient matches central differences") {
  // one paragraph vector against five token vectors: the observed token and four noise draws
  const std::size_t k = 6, m = 5;
  Rng rng(17);
  std::vector<double> p(k), u(m * k);
  for (auto& x : p) x = rng.uniform(-0.8, 0.8);
  for (auto& x : u) x = rng.uniform(-0.8, 0.8);

  auto loss_at = [&](const std::vector<double>& pv, const std::vector<double>& uv) {
    std::vector<const double*> rows;
    for (std::size_t j = 0; j < m; ++j) rows.push_back(uv.data() + j * k);
    std::vector<double> gp(k), gu(m * k);
    return negative_sampling_loss<double>(pv, rows, gp, gu);
  };
  // independent closed form of the objective
  auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double direct = 0;
  for (std::size_t j = 0; j < m; ++j) {
    double dot = 0;
    for (std::size_t i = 0; i < k; ++i) dot += p[i] * u[j * k + i];
    direct -= std::log(sigmoid(j == 0 ? dot : -dot));
  }
  CHECK(loss_at(p, u) == doctest::Approx(direct).epsilon(1e-12));

  std::vector<const double*> rows;
  for (std::size_t j = 0; j < m; ++j) rows.push_back(u.data() + j * k);
  std::vector<double> gp(k), gu(m * k);
  negative_sampling_loss<double>(p, rows, gp, gu);

  const double h = 1e-6;
  double worst = 0;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1e-8, std::abs(a) + std::abs(b)); };
  for (std::size_t i = 0; i < k; ++i) {
    auto hi = p, lo = p;
    hi[i] += h;
    lo[i] -= h;
    worst = std::max(worst, rel(gp[i], (loss_at(hi, u) - loss_at(lo, u)) / (2 * h)));
  }
  for (std::size_t i = 0; i < m * k; ++i) {
    auto hi = u, lo = u;
    hi[i] += h;
    lo[i] -= h;
    worst = std::max(worst, rel(gu[i], (loss_at(p, hi) - loss_at(p, lo)) / (2 * h)));
  }
  CHECK(worst < 1e-4);
}
