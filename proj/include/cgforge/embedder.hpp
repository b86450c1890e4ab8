#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgforge/slicer.hpp"
#include "cgforge/symbolizer.hpp"

namespace cgforge {

/// PV-DBOW training parameters. Assembly-specific defaults: no frequent-token
/// downsampling, min_count 0.
struct EmbedderConfig {
  int dim = 100;
  bool downsample_high_freq = false;
  double sample = 1e-3;  // only read when downsample_high_freq is set
  int min_count = 0;
  int negative_samples = 5;
  int epochs = 10;
  double learning_rate = 0.025;
  double min_learning_rate = 0.0001;
  std::uint64_t rng_seed = 1;

  void validate() const;
  nlohmann::json to_json() const;
  static EmbedderConfig from_json(const nlohmann::json& j);
};

struct EmbedderModel {
  Vocabulary vocab;
  EmbedderConfig config;
  std::vector<float> token_vectors;      // V x dim, row-major; row kPad is zero
  std::vector<float> paragraph_vectors;  // P x dim, last training corpus only
  std::vector<double> epoch_losses;

  std::size_t dim() const { return static_cast<std::size_t>(config.dim); }
  std::span<const float> token_vector(std::int32_t index) const {
    return std::span<const float>(token_vectors).subspan(static_cast<std::size_t>(index) * dim(), dim());
  }
};

/// T x k slice matrix stored row-major; `flat` is E_0 ⊕ E_1 ⊕ ... ⊕ E_{T-1}.
struct EmbeddedSlice {
  std::size_t length = 0;
  std::size_t dim = 0;
  std::vector<float> flat;

  std::span<const float> row(std::size_t i) const {
    return std::span<const float>(flat).subspan(i * dim, dim);
  }
};

/// Trains token and paragraph vectors from scratch. Each sequence in `corpus`
/// is one paragraph (a function's symbolized tokens).
EmbedderModel train_embedder(std::span<const std::vector<std::string>> corpus,
                             const Vocabulary& vocab, const EmbedderConfig& cfg);

/// Runs `epochs` more PV-DBOW epochs over `corpus`, keeping the token vectors
/// and drawing fresh paragraph vectors for the new corpus.
void continue_training(EmbedderModel& m, std::span<const std::vector<std::string>> corpus,
                       int epochs, std::uint64_t seed);

/// Copy of a pretrained embedder for further training on another corpus.
/// Throws MismatchError when `target_vocab` is not the pretrained vocabulary.
EmbedderModel transfer_init_embedder(const EmbedderModel& pretrained,
                                     const Vocabulary& target_vocab);

/// Token-vector lookup with PAD fill / truncation to `length` rows. Callsite
/// slices keep a window centred on the call instruction, callee slices keep
/// their head.
EmbeddedSlice embed_slice(const EmbedderModel& m, const Slice& symbolized, std::size_t length);

/// `manifest` (optional) is recorded in the header as the producing run.
void save_embedder(const EmbedderModel& m, const std::filesystem::path& path,
                   const std::string& manifest = {});
/// Throws MismatchError when the file was trained against another vocabulary.
EmbedderModel load_embedder(const std::filesystem::path& path, const Vocabulary& vocab);

/// Negative-sampling objective for one paragraph/target step:
///   L = -log s(p.u_0) - sum_{j>0} log s(-p.u_j)
/// where outputs[0] is the observed token and the rest are noise tokens.
/// Gradients are written into grad_paragraph (k) and grad_outputs (m x k).
template <class T>
T negative_sampling_loss(std::span<const T> paragraph, std::span<const T* const> outputs,
                         std::span<T> grad_paragraph, std::span<T> grad_outputs) {
  const std::size_t k = paragraph.size();
  T loss = 0;
  for (std::size_t i = 0; i < k; ++i) grad_paragraph[i] = 0;
  for (std::size_t j = 0; j < outputs.size(); ++j) {
    const T* u = outputs[j];
    T dot = 0;
    for (std::size_t i = 0; i < k; ++i) dot += paragraph[i] * u[i];
    const T label = j == 0 ? T(1) : T(0);
    const T sig = T(1) / (T(1) + std::exp(-dot));
    // log s(x) = -log(1 + e^{-x}), evaluated stably on both sides.
    const T signed_dot = j == 0 ? dot : -dot;
    loss += signed_dot > 0 ? std::log1p(std::exp(-signed_dot))
                           : -signed_dot + std::log1p(std::exp(signed_dot));
    const T g = sig - label;  // dL/d(dot)
    for (std::size_t i = 0; i < k; ++i) {
      grad_paragraph[i] += g * u[i];
      grad_outputs[j * k + i] = g * paragraph[i];
    }
  }
  return loss;
}

}  // namespace cgforge
