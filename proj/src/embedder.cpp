#include "cgforge/embedder.hpp"

#include <algorithm>
#include <numeric>

#include "cgforge/container.hpp"
#include "cgforge/error.hpp"
#include "cgforge/rng.hpp"

namespace cgforge {

void EmbedderConfig::validate() const {
  if (dim < 1) throw Error("embedding dimension must be >= 1");
  if (min_count < 0) throw Error("min_count must be >= 0");
  if (negative_samples < 0) throw Error("negative sample count must be >= 0");
  if (epochs < 0) throw Error("epoch count must be >= 0");
  if (learning_rate < 0 || min_learning_rate < 0) throw Error("learning rates must be >= 0");
}

nlohmann::json EmbedderConfig::to_json() const {
  return {{"dim", dim},
          {"downsample_high_freq", downsample_high_freq},
          {"sample", sample},
          {"min_count", min_count},
          {"negative_samples", negative_samples},
          {"epochs", epochs},
          {"learning_rate", learning_rate},
          {"min_learning_rate", min_learning_rate},
          {"rng_seed", rng_seed}};
}

EmbedderConfig EmbedderConfig::from_json(const nlohmann::json& j) {
  EmbedderConfig c;
  c.dim = j.at("dim").get<int>();
  c.downsample_high_freq = j.at("downsample_high_freq").get<bool>();
  c.sample = j.at("sample").get<double>();
  c.min_count = j.at("min_count").get<int>();
  c.negative_samples = j.at("negative_samples").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.min_learning_rate = j.at("min_learning_rate").get<double>();
  c.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  c.validate();
  return c;
}

namespace {

std::vector<std::vector<std::int32_t>> index_corpus(std::span<const std::vector<std::string>> corpus,
                                                    const Vocabulary& vocab) {
  std::vector<std::vector<std::int32_t>> out;
  out.reserve(corpus.size());
  for (const auto& seq : corpus) {
    std::vector<std::int32_t> ids;
    ids.reserve(seq.size());
    for (const auto& t : seq) ids.push_back(vocab.index_of(t));
    out.push_back(std::move(ids));
  }
  return out;
}

// Unigram^0.75 noise distribution, sampled by inverse CDF.
class NoiseTable {
 public:
  explicit NoiseTable(const std::vector<std::uint64_t>& counts) {
    cdf_.reserve(counts.size());
    double total = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0 || i == static_cast<std::size_t>(Vocabulary::kPad)) continue;
      total += std::pow(static_cast<double>(counts[i]), 0.75);
      cdf_.push_back(total);
      ids_.push_back(static_cast<std::int32_t>(i));
    }
    for (double& c : cdf_) c /= total;
  }
  bool empty() const { return ids_.empty(); }
  std::int32_t draw(Rng& rng) const {
    const double u = rng.uniform();
    auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    if (it == cdf_.end()) --it;
    return ids_[static_cast<std::size_t>(it - cdf_.begin())];
  }

 private:
  std::vector<double> cdf_;
  std::vector<std::int32_t> ids_;
};

void init_rows(std::vector<float>& rows, std::size_t count, std::size_t dim, Rng& rng) {
  rows.assign(count * dim, 0.0f);
  const double bound = 0.5 / static_cast<double>(dim);
  for (float& v : rows) v = static_cast<float>(rng.uniform(-bound, bound));
}

// Shared epoch loop for from-scratch training and continued training.
void run_epochs(EmbedderModel& m, const std::vector<std::vector<std::int32_t>>& docs, int epochs,
                Rng& rng) {
  const std::size_t k = m.dim();
  const auto& cfg = m.config;
  std::vector<std::uint64_t> counts(m.vocab.size(), 0);
  std::uint64_t total = 0;
  for (const auto& d : docs) {
    for (auto id : d) {
      ++counts[static_cast<std::size_t>(id)];
      ++total;
    }
  }
  counts[Vocabulary::kPad] = 0;
  NoiseTable noise(counts);

  std::vector<double> keep_prob(counts.size(), 1.0);
  if (cfg.downsample_high_freq && cfg.sample > 0) {
    const double threshold = cfg.sample * static_cast<double>(total);
    for (std::size_t i = 0; i < counts.size(); ++i) {
      if (counts[i] == 0) continue;
      const double f = static_cast<double>(counts[i]);
      keep_prob[i] = std::min(1.0, (std::sqrt(f / threshold) + 1.0) * threshold / f);
    }
  }

  init_rows(m.paragraph_vectors, docs.size(), k, rng);

  const double steps = std::max<double>(1.0, static_cast<double>(epochs) * static_cast<double>(total));
  double step = 0;
  std::vector<std::size_t> order(docs.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<const float*> outputs;
  std::vector<std::int32_t> output_ids;
  std::vector<float> grad_p(k), grad_out;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0;
    std::uint64_t loss_terms = 0;
    for (std::size_t d : order) {
      float* p = m.paragraph_vectors.data() + d * k;
      for (auto target : docs[d]) {
        const double lr = std::max(cfg.min_learning_rate,
                                   cfg.learning_rate - (cfg.learning_rate - cfg.min_learning_rate) * step / steps);
        step += 1;
        const auto t = static_cast<std::size_t>(target);
        if (target == Vocabulary::kPad) continue;
        if (counts[t] < static_cast<std::uint64_t>(cfg.min_count)) continue;
        if (keep_prob[t] < 1.0 && rng.uniform() > keep_prob[t]) continue;

        output_ids.assign(1, target);
        for (int n = 0; n < cfg.negative_samples && !noise.empty(); ++n) {
          const auto neg = noise.draw(rng);
          if (neg != target) output_ids.push_back(neg);
        }
        outputs.clear();
        for (auto id : output_ids) outputs.push_back(m.token_vectors.data() + static_cast<std::size_t>(id) * k);
        grad_out.resize(output_ids.size() * k);
        loss_sum += negative_sampling_loss<float>(std::span<const float>(p, k), outputs, grad_p, grad_out);
        ++loss_terms;

        const auto rate = static_cast<float>(lr);
        for (std::size_t j = 0; j < output_ids.size(); ++j) {
          float* u = m.token_vectors.data() + static_cast<std::size_t>(output_ids[j]) * k;
          for (std::size_t i = 0; i < k; ++i) u[i] -= rate * grad_out[j * k + i];
        }
        for (std::size_t i = 0; i < k; ++i) p[i] -= rate * grad_p[i];
      }
    }
    m.epoch_losses.push_back(loss_terms == 0 ? 0.0 : loss_sum / static_cast<double>(loss_terms));
  }
}

}  // namespace

EmbedderModel train_embedder(std::span<const std::vector<std::string>> corpus,
                             const Vocabulary& vocab, const EmbedderConfig& cfg) {
  cfg.validate();
  if (corpus.empty()) throw DataError("cannot train an embedder on an empty corpus");
  if (vocab.size() < 2) throw DataError("vocabulary is empty");
  EmbedderModel m;
  m.vocab = vocab;
  m.config = cfg;
  Rng rng(sub_seed(cfg.rng_seed, "embedder/init"));
  init_rows(m.token_vectors, vocab.size(), m.dim(), rng);
  std::fill_n(m.token_vectors.begin(), m.dim(), 0.0f);  // PAD
  Rng train_rng(sub_seed(cfg.rng_seed, "embedder/train"));
  run_epochs(m, index_corpus(corpus, vocab), cfg.epochs, train_rng);
  return m;
}

void continue_training(EmbedderModel& m, std::span<const std::vector<std::string>> corpus, int epochs,
                       std::uint64_t seed) {
  if (corpus.empty()) throw DataError("cannot train an embedder on an empty corpus");
  if (epochs < 0) throw Error("epoch count must be >= 0");
  Rng rng(sub_seed(seed, "embedder/finetune"));
  run_epochs(m, index_corpus(corpus, m.vocab), epochs, rng);
}

EmbedderModel transfer_init_embedder(const EmbedderModel& pretrained, const Vocabulary& target_vocab) {
  if (!(pretrained.vocab.policy() == target_vocab.policy()))
    throw MismatchError("symbolization policy differs: pretrained " + pretrained.vocab.policy().name() +
                        "/N=" + std::to_string(pretrained.vocab.policy().modulus) + ", target " +
                        target_vocab.policy().name() + "/N=" + std::to_string(target_vocab.policy().modulus));
  if (pretrained.vocab.hash() != target_vocab.hash())
    throw MismatchError("vocabulary hash differs: pretrained " + pretrained.vocab.hash() + ", target " +
                        target_vocab.hash());
  EmbedderModel m;
  m.vocab = pretrained.vocab;
  m.config = pretrained.config;
  m.token_vectors = pretrained.token_vectors;
  return m;
}

EmbeddedSlice embed_slice(const EmbedderModel& m, const Slice& s, std::size_t length) {
  if (length < 1) throw Error("slice length must be >= 1");
  if (s.tokens.empty()) throw DataError("cannot embed an empty slice");
  const std::size_t k = m.dim();
  const std::size_t n = s.tokens.size();
  std::size_t start = 0;
  if (n > length && s.origin == SliceOrigin::kCallsite) {
    const std::size_t anchor = s.anchor_token();
    const std::size_t half = length / 2;
    start = anchor > half ? anchor - half : 0;
    start = std::min(start, n - length);
  }
  EmbeddedSlice e;
  e.length = length;
  e.dim = k;
  e.flat.assign(length * k, 0.0f);
  for (std::size_t r = 0; r < length && start + r < n; ++r) {
    auto v = m.token_vector(m.vocab.index_of(s.tokens[start + r]));
    std::copy(v.begin(), v.end(), e.flat.begin() + static_cast<std::ptrdiff_t>(r * k));
  }
  return e;
}

void save_embedder(const EmbedderModel& m, const std::filesystem::path& path, const std::string& manifest) {
  Container c;
  c.kind = "embedder";
  c.header = {{"version", 1},
              {"config", m.config.to_json()},
              {"vocab_hash", m.vocab.hash()},
              {"vocab_size", m.vocab.size()},
              {"epoch_losses", m.epoch_losses}};
  if (!manifest.empty()) c.header["manifest"] = manifest;
  c.tensors.push_back(m.token_vectors);
  write_container(path, c);
}

EmbedderModel load_embedder(const std::filesystem::path& path, const Vocabulary& vocab) {
  Container c = read_container(path, "embedder");
  const auto hash = c.header.at("vocab_hash").get<std::string>();
  if (hash != vocab.hash())
    throw MismatchError(path.string() + " was trained with vocabulary " + hash + ", got " + vocab.hash());
  EmbedderModel m;
  m.vocab = vocab;
  m.config = EmbedderConfig::from_json(c.header.at("config"));
  m.epoch_losses = c.header.at("epoch_losses").get<std::vector<double>>();
  if (c.tensors.size() != 1 || c.tensors[0].size() != vocab.size() * m.dim())
    throw DataError(path.string() + ": token vector table has the wrong shape");
  m.token_vectors = std::move(c.tensors[0]);
  return m;
}

}  // namespace cgforge
