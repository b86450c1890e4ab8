#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgforge/embedder.hpp"
#include "cgforge/error.hpp"
#include "cgforge/nn.hpp"

namespace cgforge {

/// Shape of the pseudo-Siamese network. The callsite and callee extractors
/// share this architecture but not their weights.
struct MatcherArch {
  std::size_t input_dim = 128 * 100;  // T * k
  std::vector<std::size_t> extractor_hidden{512, 512, 512};
  std::vector<std::size_t> classifier_hidden{512, 512};
  double dropout = 0.2;
  bool batchnorm = true;

  std::size_t feature_dim() const { return extractor_hidden.back(); }
  void validate() const;
  nlohmann::json to_json() const;
  static MatcherArch from_json(const nlohmann::json& j);
  bool operator==(const MatcherArch&) const = default;
};

struct TrainConfig {
  std::size_t batch_size = 512;
  int epochs = 20;
  double learning_rate = 0.001;
  double rmsprop_alpha = 0.99;
  double rmsprop_eps = 1e-8;
  double threshold = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Difference score: a pair matches iff d < threshold.
struct Score {
  double d = 0;
  bool match = false;
};

inline bool decide(double d, double threshold) { return d < threshold; }

struct PairRecord {
  EmbeddedSlice callsite;
  EmbeddedSlice callee;
  int label = 0;  // 1 = matching pair
  std::string binary_id;
  Addr callsite_addr = 0;
  Addr callee_addr = 0;
};

/// L = 1/(2N) * sum_i [ y_i d_i^2 + (1 - y_i) max(1 - d_i, 0)^2 ]
double contrastive_loss(std::span<const double> d, std::span<const int> labels);

template <class T>
struct SiameseNet {
  MatcherArch arch;
  nn::Mlp<T> callsite_extractor;  // phi
  nn::Mlp<T> callee_extractor;    // phi'
  nn::Mlp<T> classifier;          // sigma
  std::uint64_t seed = 0;

  static SiameseNet create(const MatcherArch& arch, std::uint64_t seed) {
    arch.validate();
    SiameseNet m;
    m.arch = arch;
    m.seed = seed;
    m.callsite_extractor =
        nn::Mlp<T>::build(arch.input_dim, arch.extractor_hidden, arch.batchnorm, arch.dropout, false);
    m.callee_extractor =
        nn::Mlp<T>::build(arch.input_dim, arch.extractor_hidden, arch.batchnorm, arch.dropout, false);
    Rng phi_rng(sub_seed(seed, "matcher/phi"));
    Rng phi_prime_rng(sub_seed(seed, "matcher/phi_prime"));
    m.callsite_extractor.init(phi_rng);
    m.callee_extractor.init(phi_prime_rng);
    m.reset_classifier(sub_seed(seed, "matcher/sigma"));
    return m;
  }

  void reset_classifier(std::uint64_t sigma_seed) {
    classifier = nn::Mlp<T>::build(2 * arch.feature_dim(), arch.classifier_hidden, arch.batchnorm,
                                   arch.dropout, true);
    Rng rng(sigma_seed);
    classifier.init(rng);
  }

  /// Parameter tensors in a fixed order: phi, phi', sigma.
  std::vector<std::span<T>> parameters() {
    std::vector<std::span<T>> out;
    for (auto* mlp : {&callsite_extractor, &callee_extractor, &classifier}) {
      for (auto& l : mlp->layers) {
        for (auto s : l.parameters()) out.push_back(s);
      }
    }
    return out;
  }
  std::vector<std::span<T>> buffers() {
    std::vector<std::span<T>> out;
    for (auto* mlp : {&callsite_extractor, &callee_extractor, &classifier}) {
      for (auto& l : mlp->layers) {
        for (auto s : l.buffers()) out.push_back(s);
      }
    }
    return out;
  }

  template <class U>
  SiameseNet<U> cast() const {
    SiameseNet<U> m;
    m.arch = arch;
    m.seed = seed;
    m.callsite_extractor = callsite_extractor.template cast<U>();
    m.callee_extractor = callee_extractor.template cast<U>();
    m.classifier = classifier.template cast<U>();
    return m;
  }
};

using SiameseModel = SiameseNet<float>;

/// Forward state of one batch, kept for the backward pass.
template <class T>
struct SiameseCache {
  std::vector<nn::LayerCache<T>> callsite, callee, classifier;
  std::vector<double> d;
};

template <class T>
struct SiameseGrad {
  std::vector<nn::LayerGrad<T>> callsite, callee, classifier;
  nn::Matrix<T> d_callsite_input, d_callee_input;

  std::vector<std::span<T>> parameters(const SiameseNet<T>& m) {
    std::vector<std::span<T>> out;
    auto add = [&out](std::vector<nn::LayerGrad<T>>& g, const nn::Mlp<T>& mlp) {
      for (std::size_t i = 0; i < g.size(); ++i) {
        for (auto s : g[i].parameters(mlp.layers[i].batchnorm)) out.push_back(s);
      }
    };
    add(callsite, m.callsite_extractor);
    add(callee, m.callee_extractor);
    add(classifier, m.classifier);
    return out;
  }
};

/// Batch forward: rows of q and a are flattened slices. Returns d per row.
template <class T>
std::vector<double> siamese_forward(SiameseNet<T>& m, const nn::Matrix<T>& q, const nn::Matrix<T>& a,
                                    bool train, Rng* dropout_rng, SiameseCache<T>* cache) {
  if (q.cols != m.arch.input_dim || a.cols != m.arch.input_dim || q.rows != a.rows)
    throw MismatchError("matcher input has " + std::to_string(q.cols) + "/" + std::to_string(a.cols) +
                        " columns, model expects " + std::to_string(m.arch.input_dim));
  auto fq = m.callsite_extractor.forward(q, train, dropout_rng, cache ? &cache->callsite : nullptr);
  auto fa = m.callee_extractor.forward(a, train, dropout_rng, cache ? &cache->callee : nullptr);
  const std::size_t f = m.arch.feature_dim();
  nn::Matrix<T> joined(q.rows, 2 * f);
  for (std::size_t b = 0; b < q.rows; ++b) {
    std::copy(fq.row(b), fq.row(b) + f, joined.row(b));
    std::copy(fa.row(b), fa.row(b) + f, joined.row(b) + f);
  }
  auto out = m.classifier.forward(joined, train, dropout_rng, cache ? &cache->classifier : nullptr);
  std::vector<double> d(q.rows);
  for (std::size_t b = 0; b < q.rows; ++b) d[b] = static_cast<double>(out(b, 0));
  if (cache != nullptr) cache->d = d;
  return d;
}

/// Backward from dL/dd. Fills parameter gradients and, when requested, the
/// gradients with respect to both inputs.
template <class T>
SiameseGrad<T> siamese_backward(const SiameseNet<T>& m, const SiameseCache<T>& cache,
                                std::span<const double> dloss_dd, bool need_input_grad) {
  SiameseGrad<T> g;
  g.callsite = m.callsite_extractor.zero_grads();
  g.callee = m.callee_extractor.zero_grads();
  g.classifier = m.classifier.zero_grads();
  const std::size_t n = dloss_dd.size();
  nn::Matrix<T> dd(n, 1);
  for (std::size_t b = 0; b < n; ++b) dd(b, 0) = static_cast<T>(dloss_dd[b]);
  auto djoined = m.classifier.backward(cache.classifier, std::move(dd), g.classifier, true);
  const std::size_t f = m.arch.feature_dim();
  nn::Matrix<T> dfq(n, f), dfa(n, f);
  for (std::size_t b = 0; b < n; ++b) {
    std::copy(djoined.row(b), djoined.row(b) + f, dfq.row(b));
    std::copy(djoined.row(b) + f, djoined.row(b) + 2 * f, dfa.row(b));
  }
  g.d_callsite_input = m.callsite_extractor.backward(cache.callsite, std::move(dfq), g.callsite, need_input_grad);
  g.d_callee_input = m.callee_extractor.backward(cache.callee, std::move(dfa), g.callee, need_input_grad);
  return g;
}

/// dL/dd_i of the contrastive loss over a batch of N pairs.
std::vector<double> contrastive_loss_grad(std::span<const double> d, std::span<const int> labels);

/// Single-pair eval-mode score.
Score forward(SiameseModel& m, const EmbeddedSlice& q, const EmbeddedSlice& a, double threshold = 0.5);

struct EpochStats {
  double mean_loss = 0;
  std::size_t batches = 0;
};

/// RMSprop state, one accumulator per parameter element.
struct RmsPropState {
  std::vector<std::vector<float>> square_avg;
};

/// One shuffled mini-batch pass. `rng` drives shuffling and dropout.
EpochStats train_epoch(SiameseModel& m, std::span<const PairRecord> pairs, const TrainConfig& cfg,
                       RmsPropState& opt, Rng& rng);

/// Runs cfg.epochs epochs with a fresh optimizer; returns per-epoch stats.
std::vector<EpochStats> train_matcher(SiameseModel& m, std::span<const PairRecord> pairs,
                                      const TrainConfig& cfg);

/// Feature extractors copied from the pretrained model, classifier drawn
/// fresh from `fresh_sigma_seed`.
SiameseModel transfer_init_matcher(const SiameseModel& pretrained, const MatcherArch& target_arch,
                                   std::uint64_t fresh_sigma_seed);

/// Eval-mode scoring in chunks of `batch_size` pairs.
std::vector<Score> predict_batch(SiameseModel& m, std::span<const EmbeddedSlice* const> q,
                                 std::span<const EmbeddedSlice* const> a, double threshold,
                                 std::size_t batch_size);

enum class SaliencyInput { kCallsite, kCallee };

/// S[i] = || dd / dx_{i,.} ||_2 for each token row of the chosen input.
std::vector<double> saliency(SiameseModel& m, const EmbeddedSlice& q, const EmbeddedSlice& a,
                             SaliencyInput which);

template <class T>
std::vector<double> saliency_t(SiameseNet<T>& m, const EmbeddedSlice& q, const EmbeddedSlice& a,
                               SaliencyInput which) {
  nn::Matrix<T> qm(1, q.flat.size()), am(1, a.flat.size());
  std::copy(q.flat.begin(), q.flat.end(), qm.data.begin());
  std::copy(a.flat.begin(), a.flat.end(), am.data.begin());
  SiameseCache<T> cache;
  siamese_forward(m, qm, am, false, nullptr, &cache);
  const double one = 1.0;
  auto g = siamese_backward(m, cache, std::span<const double>(&one, 1), true);
  const auto& input = which == SaliencyInput::kCallsite ? q : a;
  const auto& grad = which == SaliencyInput::kCallsite ? g.d_callsite_input : g.d_callee_input;
  std::vector<double> s(input.length, 0.0);
  for (std::size_t i = 0; i < input.length; ++i) {
    double sq = 0;
    for (std::size_t j = 0; j < input.dim; ++j) {
      const double v = static_cast<double>(grad.data[i * input.dim + j]);
      sq += v * v;
    }
    s[i] = std::sqrt(sq);
  }
  return s;
}

std::uint64_t parameter_hash(SiameseModel& m);

void save_matcher(const SiameseModel& m, const TrainConfig& cfg, const std::filesystem::path& path,
                  const std::string& manifest = {});
SiameseModel load_matcher(const std::filesystem::path& path, TrainConfig* cfg = nullptr);

nn::Matrix<float> stack_inputs(std::span<const EmbeddedSlice* const> slices, std::size_t begin,
                               std::size_t end);

}  // namespace cgforge
