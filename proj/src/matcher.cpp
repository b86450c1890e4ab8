#include "cgforge/matcher.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>

#include "cgforge/container.hpp"

namespace cgforge {

void MatcherArch::validate() const {
  if (input_dim < 1) throw Error("matcher input dimension must be >= 1");
  if (extractor_hidden.empty()) throw Error("feature extractor needs at least one layer");
  for (auto h : extractor_hidden)
    if (h < 1) throw Error("layer widths must be >= 1");
  for (auto h : classifier_hidden)
    if (h < 1) throw Error("layer widths must be >= 1");
  if (dropout < 0 || dropout >= 1) throw Error("dropout rate must be in [0, 1)");
}

nlohmann::json MatcherArch::to_json() const {
  return {{"input_dim", input_dim},
          {"extractor_hidden", extractor_hidden},
          {"classifier_hidden", classifier_hidden},
          {"dropout", dropout},
          {"batchnorm", batchnorm}};
}

MatcherArch MatcherArch::from_json(const nlohmann::json& j) {
  MatcherArch a;
  a.input_dim = j.at("input_dim").get<std::size_t>();
  a.extractor_hidden = j.at("extractor_hidden").get<std::vector<std::size_t>>();
  a.classifier_hidden = j.at("classifier_hidden").get<std::vector<std::size_t>>();
  a.dropout = j.at("dropout").get<double>();
  a.batchnorm = j.at("batchnorm").get<bool>();
  a.validate();
  return a;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error("batch size must be >= 1");
  if (epochs < 0) throw Error("epoch count must be >= 0");
  if (learning_rate < 0) throw Error("learning rate must be >= 0");
  if (!(threshold > 0 && threshold < 1)) throw Error("threshold must lie in (0, 1)");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"batch_size", batch_size},       {"epochs", epochs},
          {"learning_rate", learning_rate}, {"optimizer", "rmsprop"},
          {"rmsprop_alpha", rmsprop_alpha}, {"rmsprop_eps", rmsprop_eps},
          {"threshold", threshold},         {"seed", seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.epochs = j.at("epochs").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.rmsprop_alpha = j.at("rmsprop_alpha").get<double>();
  c.rmsprop_eps = j.at("rmsprop_eps").get<double>();
  c.threshold = j.at("threshold").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

double contrastive_loss(std::span<const double> d, std::span<const int> labels) {
  if (d.empty()) throw Error("contrastive loss of an empty batch");
  if (d.size() != labels.size()) throw Error("scores and labels differ in length");
  double sum = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double y = labels[i];
    const double hinge = std::max(1.0 - d[i], 0.0);
    sum += y * d[i] * d[i] + (1.0 - y) * hinge * hinge;
  }
  return sum / (2.0 * static_cast<double>(d.size()));
}

std::vector<double> contrastive_loss_grad(std::span<const double> d, std::span<const int> labels) {
  if (d.empty()) throw Error("contrastive loss of an empty batch");
  const double inv_n = 1.0 / static_cast<double>(d.size());
  std::vector<double> g(d.size());
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double y = labels[i];
    g[i] = inv_n * (y * d[i] - (1.0 - y) * std::max(1.0 - d[i], 0.0));
  }
  return g;
}

namespace {

// Scores are reported in the open interval (0, 1) even where float sigmoid
// saturates.
double open_unit(double d) {
  constexpr double lo = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  return std::clamp(d, lo, hi);
}

}  // namespace

nn::Matrix<float> stack_inputs(std::span<const EmbeddedSlice* const> slices, std::size_t begin,
                               std::size_t end) {
  if (begin >= end) return {};
  const std::size_t width = slices[begin]->flat.size();
  nn::Matrix<float> m(end - begin, width);
  for (std::size_t i = begin; i < end; ++i) {
    if (slices[i]->flat.size() != width) throw MismatchError("embedded slices differ in size");
    std::copy(slices[i]->flat.begin(), slices[i]->flat.end(), m.row(i - begin));
  }
  return m;
}

Score forward(SiameseModel& m, const EmbeddedSlice& q, const EmbeddedSlice& a, double threshold) {
  const EmbeddedSlice* qp = &q;
  const EmbeddedSlice* ap = &a;
  return predict_batch(m, std::span(&qp, 1), std::span(&ap, 1), threshold, 1).front();
}

EpochStats train_epoch(SiameseModel& m, std::span<const PairRecord> pairs, const TrainConfig& cfg,
                       RmsPropState& opt, Rng& rng) {
  cfg.validate();
  if (pairs.empty()) throw DataError("no training pairs");
  auto params = m.parameters();
  if (opt.square_avg.size() != params.size()) {
    opt.square_avg.clear();
    for (auto p : params) opt.square_avg.emplace_back(p.size(), 0.0f);
  }
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);

  std::vector<const EmbeddedSlice*> qs(pairs.size()), as(pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    qs[i] = &pairs[order[i]].callsite;
    as[i] = &pairs[order[i]].callee;
  }

  EpochStats stats;
  double weighted = 0;
  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto alpha = static_cast<float>(cfg.rmsprop_alpha);
  const auto eps = static_cast<float>(cfg.rmsprop_eps);
  for (std::size_t begin = 0; begin < pairs.size(); begin += cfg.batch_size) {
    const std::size_t end = std::min(pairs.size(), begin + cfg.batch_size);
    auto q = stack_inputs(qs, begin, end);
    auto a = stack_inputs(as, begin, end);
    std::vector<int> labels;
    for (std::size_t i = begin; i < end; ++i) labels.push_back(pairs[order[i]].label);

    SiameseCache<float> cache;
    auto d = siamese_forward(m, q, a, true, &rng, &cache);
    weighted += contrastive_loss(d, labels) * static_cast<double>(end - begin);
    auto dd = contrastive_loss_grad(d, labels);
    auto grad = siamese_backward(m, cache, dd, false);
    auto gparams = grad.parameters(m);
    for (std::size_t t = 0; t < params.size(); ++t) {
      auto p = params[t];
      auto g = gparams[t];
      auto& sq = opt.square_avg[t];
      for (std::size_t i = 0; i < p.size(); ++i) {
        sq[i] = alpha * sq[i] + (1.0f - alpha) * g[i] * g[i];
        p[i] -= lr * g[i] / (std::sqrt(sq[i]) + eps);
      }
    }
    ++stats.batches;
  }
  stats.mean_loss = weighted / static_cast<double>(pairs.size());
  return stats;
}

std::vector<EpochStats> train_matcher(SiameseModel& m, std::span<const PairRecord> pairs,
                                      const TrainConfig& cfg) {
  cfg.validate();
  RmsPropState opt;
  Rng rng(sub_seed(cfg.seed, "matcher/train"));
  std::vector<EpochStats> out;
  for (int e = 0; e < cfg.epochs; ++e) out.push_back(train_epoch(m, pairs, cfg, opt, rng));
  return out;
}

SiameseModel transfer_init_matcher(const SiameseModel& pretrained, const MatcherArch& target_arch,
                                   std::uint64_t fresh_sigma_seed) {
  if (!(pretrained.arch == target_arch))
    throw MismatchError("matcher architecture differs: pretrained " + pretrained.arch.to_json().dump() +
                        ", target " + target_arch.to_json().dump());
  SiameseModel m = pretrained;
  m.reset_classifier(fresh_sigma_seed);
  return m;
}

std::vector<Score> predict_batch(SiameseModel& m, std::span<const EmbeddedSlice* const> q,
                                 std::span<const EmbeddedSlice* const> a, double threshold,
                                 std::size_t batch_size) {
  if (q.size() != a.size()) throw Error("callsite and callee lists differ in length");
  if (batch_size < 1) throw Error("batch size must be >= 1");
  std::vector<Score> out;
  out.reserve(q.size());
  for (std::size_t begin = 0; begin < q.size(); begin += batch_size) {
    const std::size_t end = std::min(q.size(), begin + batch_size);
    auto qm = stack_inputs(q, begin, end);
    auto am = stack_inputs(a, begin, end);
    for (double d : siamese_forward(m, qm, am, false, nullptr, static_cast<SiameseCache<float>*>(nullptr))) {
      const double s = open_unit(d);
      out.push_back({s, decide(s, threshold)});
    }
  }
  return out;
}

std::vector<double> saliency(SiameseModel& m, const EmbeddedSlice& q, const EmbeddedSlice& a,
                             SaliencyInput which) {
  return saliency_t(m, q, a, which);
}

std::uint64_t parameter_hash(SiameseModel& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto group : {m.parameters(), m.buffers()}) {
    for (auto p : group) {
      h = fnv1a(std::string_view(reinterpret_cast<const char*>(p.data()), p.size() * sizeof(float)), h);
    }
  }
  return h;
}

void save_matcher(const SiameseModel& m, const TrainConfig& cfg, const std::filesystem::path& path,
                  const std::string& manifest) {
  SiameseModel copy = m;
  Container c;
  c.kind = "matcher";
  c.header = {{"version", 1}, {"arch", m.arch.to_json()}, {"train", cfg.to_json()}, {"seed", m.seed}};
  if (!manifest.empty()) c.header["manifest"] = manifest;
  for (auto group : {copy.parameters(), copy.buffers()}) {
    for (auto p : group) c.tensors.emplace_back(p.begin(), p.end());
  }
  write_container(path, c);
}

SiameseModel load_matcher(const std::filesystem::path& path, TrainConfig* cfg) {
  Container c = read_container(path, "matcher");
  const auto arch = MatcherArch::from_json(c.header.at("arch"));
  SiameseModel m = SiameseModel::create(arch, c.header.at("seed").get<std::uint64_t>());
  if (cfg != nullptr) *cfg = TrainConfig::from_json(c.header.at("train"));
  std::size_t t = 0;
  for (auto group : {m.parameters(), m.buffers()}) {
    for (auto p : group) {
      if (t >= c.tensors.size() || c.tensors[t].size() != p.size())
        throw MismatchError(path.string() + ": parameter tensor " + std::to_string(t) +
                            " does not match the stored architecture");
      std::copy(c.tensors[t].begin(), c.tensors[t].end(), p.begin());
      ++t;
    }
  }
  if (t != c.tensors.size()) throw MismatchError(path.string() + ": unexpected extra tensors");
  return m;
}

}  // namespace cgforge
