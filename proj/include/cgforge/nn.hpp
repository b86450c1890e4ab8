#pragma once

// Minimal fully-connected network pieces with hand-written backward passes.
// Every output element is a fixed-order dot product, so results do not depend
// on how samples are grouped into batches.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cgforge/rng.hpp"

namespace cgforge::nn {

/// Row-major batch x width activations.
template <class T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}

  T* row(std::size_t r) { return data.data() + r * cols; }
  const T* row(std::size_t r) const { return data.data() + r * cols; }
  T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

/// Eight-lane dot product; lane sums are combined in a fixed order.
template <class T>
inline T dot(const T* a, const T* b, std::size_t n) {
  T lane[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) lane[l] += a[i + l] * b[i + l];
  }
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((lane[0] + lane[1]) + (lane[2] + lane[3])) + ((lane[4] + lane[5]) + (lane[6] + lane[7])) +
         tail;
}

template <class T>
inline void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

enum class Activation { kRelu, kSigmoid, kNone };

/// Affine map, optional batch normalisation, activation, optional dropout.
template <class T>
struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation act = Activation::kRelu;
  bool batchnorm = false;
  double dropout = 0.0;

  std::vector<T> weight;  // out x in
  std::vector<T> bias;
  std::vector<T> gamma, beta;                // batchnorm affine
  std::vector<T> running_mean, running_var;  // batchnorm buffers

  static constexpr double kBnEps = 1e-5;
  static constexpr double kBnMomentum = 0.1;

  void init(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight.resize(out * in);
    bias.resize(out);
    for (T& w : weight) w = static_cast<T>(rng.uniform(-bound, bound));
    for (T& b : bias) b = static_cast<T>(rng.uniform(-bound, bound));
    if (batchnorm) {
      gamma.assign(out, T(1));
      beta.assign(out, T(0));
      running_mean.assign(out, T(0));
      running_var.assign(out, T(1));
    } else {
      gamma.clear();
      beta.clear();
      running_mean.clear();
      running_var.clear();
    }
  }

  std::vector<std::span<T>> parameters() {
    std::vector<std::span<T>> p{weight, bias};
    if (batchnorm) {
      p.emplace_back(gamma);
      p.emplace_back(beta);
    }
    return p;
  }
  std::vector<std::span<T>> buffers() {
    if (!batchnorm) return {};
    return {running_mean, running_var};
  }

  template <class U>
  Layer<U> cast() const {
    Layer<U> l;
    l.in = in;
    l.out = out;
    l.act = act;
    l.batchnorm = batchnorm;
    l.dropout = dropout;
    auto conv = [](const std::vector<T>& v) { return std::vector<U>(v.begin(), v.end()); };
    l.weight = conv(weight);
    l.bias = conv(bias);
    l.gamma = conv(gamma);
    l.beta = conv(beta);
    l.running_mean = conv(running_mean);
    l.running_var = conv(running_var);
    return l;
  }
};

/// Values saved by a forward pass for the matching backward pass.
template <class T>
struct LayerCache {
  Matrix<T> input;
  Matrix<T> xhat;  // normalised pre-activation (or affine output without BN)
  Matrix<T> output;
  std::vector<T> inv_std;
  std::vector<T> mask;  // dropout scale per element (0 or 1/(1-p))
  bool batch_stats = false;
};

template <class T>
Matrix<T> layer_forward(Layer<T>& layer, const Matrix<T>& x, bool train, Rng* dropout_rng,
                        LayerCache<T>* cache) {
  const std::size_t n = x.rows;
  Matrix<T> z(n, layer.out);
  for (std::size_t b = 0; b < n; ++b) {
    const T* xr = x.row(b);
    T* zr = z.row(b);
    for (std::size_t o = 0; o < layer.out; ++o) {
      zr[o] = layer.bias[o] + dot(layer.weight.data() + o * layer.in, xr, layer.in);
    }
  }

  std::vector<T> inv_std;
  bool batch_stats = false;
  if (layer.batchnorm) {
    inv_std.resize(layer.out);
    // Single-sample batches carry no batch statistics; fall back to the
    // running estimates.
    batch_stats = train && n > 1;
    for (std::size_t o = 0; o < layer.out; ++o) {
      T mean, var;
      if (batch_stats) {
        T s = 0;
        for (std::size_t b = 0; b < n; ++b) s += z(b, o);
        mean = s / static_cast<T>(n);
        T v = 0;
        for (std::size_t b = 0; b < n; ++b) v += (z(b, o) - mean) * (z(b, o) - mean);
        var = v / static_cast<T>(n);
        const T m = static_cast<T>(Layer<T>::kBnMomentum);
        layer.running_mean[o] = (T(1) - m) * layer.running_mean[o] + m * mean;
        layer.running_var[o] = (T(1) - m) * layer.running_var[o] +
                               m * var * static_cast<T>(n) / static_cast<T>(n - 1);
      } else {
        mean = layer.running_mean[o];
        var = layer.running_var[o];
      }
      inv_std[o] = T(1) / std::sqrt(var + static_cast<T>(Layer<T>::kBnEps));
      for (std::size_t b = 0; b < n; ++b) z(b, o) = (z(b, o) - mean) * inv_std[o];
    }
  }

  Matrix<T> y(n, layer.out);
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < layer.out; ++o) {
      T v = z(b, o);
      if (layer.batchnorm) v = layer.gamma[o] * v + layer.beta[o];
      switch (layer.act) {
        case Activation::kRelu:
          v = v > T(0) ? v : T(0);
          break;
        case Activation::kSigmoid:
          v = T(1) / (T(1) + std::exp(-v));
          break;
        case Activation::kNone:
          break;
      }
      y(b, o) = v;
    }
  }

  std::vector<T> mask;
  if (train && layer.dropout > 0 && dropout_rng != nullptr) {
    mask.resize(y.data.size());
    const T scale = static_cast<T>(1.0 / (1.0 - layer.dropout));
    for (std::size_t i = 0; i < mask.size(); ++i) {
      mask[i] = dropout_rng->bernoulli(layer.dropout) ? T(0) : scale;
      y.data[i] *= mask[i];
    }
  }

  if (cache != nullptr) {
    cache->input = x;
    cache->xhat = std::move(z);
    cache->output = y;
    cache->inv_std = std::move(inv_std);
    cache->mask = std::move(mask);
    cache->batch_stats = batch_stats;
  }
  return y;
}

/// Gradients for one layer, same shapes as the layer's parameters.
template <class T>
struct LayerGrad {
  std::vector<T> weight, bias, gamma, beta;

  void zero(const Layer<T>& l) {
    weight.assign(l.weight.size(), T(0));
    bias.assign(l.bias.size(), T(0));
    gamma.assign(l.gamma.size(), T(0));
    beta.assign(l.beta.size(), T(0));
  }
  std::vector<std::span<T>> parameters(bool batchnorm) {
    std::vector<std::span<T>> p{weight, bias};
    if (batchnorm) {
      p.emplace_back(gamma);
      p.emplace_back(beta);
    }
    return p;
  }
};

/// Backward pass. Accumulates parameter gradients into `grad`; returns dL/dx
/// when `need_input_grad` is set (an empty matrix otherwise).
template <class T>
Matrix<T> layer_backward(const Layer<T>& layer, const LayerCache<T>& cache, Matrix<T> dy,
                         LayerGrad<T>& grad, bool need_input_grad) {
  const std::size_t n = dy.rows;
  if (!cache.mask.empty()) {
    for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] *= cache.mask[i];
  }
  // Through the activation, using the pre-dropout output.
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < layer.out; ++o) {
      T pre = cache.xhat(b, o);
      if (layer.batchnorm) pre = layer.gamma[o] * pre + layer.beta[o];
      switch (layer.act) {
        case Activation::kRelu:
          if (pre <= T(0)) dy(b, o) = T(0);
          break;
        case Activation::kSigmoid: {
          const T s = T(1) / (T(1) + std::exp(-pre));
          dy(b, o) *= s * (T(1) - s);
          break;
        }
        case Activation::kNone:
          break;
      }
    }
  }
  Matrix<T>& dz = dy;
  if (layer.batchnorm) {
    for (std::size_t o = 0; o < layer.out; ++o) {
      T sum_dy = 0, sum_dy_xhat = 0;
      for (std::size_t b = 0; b < n; ++b) {
        sum_dy += dy(b, o);
        sum_dy_xhat += dy(b, o) * cache.xhat(b, o);
      }
      grad.beta[o] += sum_dy;
      grad.gamma[o] += sum_dy_xhat;
      const T g = layer.gamma[o];
      const T is = cache.inv_std[o];
      if (cache.batch_stats) {
        const T inv_n = T(1) / static_cast<T>(n);
        for (std::size_t b = 0; b < n; ++b) {
          dz(b, o) = g * is * (dy(b, o) - inv_n * sum_dy - cache.xhat(b, o) * inv_n * sum_dy_xhat);
        }
      } else {
        for (std::size_t b = 0; b < n; ++b) dz(b, o) = g * is * dy(b, o);
      }
    }
  }

  Matrix<T> dx;
  if (need_input_grad) dx = Matrix<T>(n, layer.in);
  for (std::size_t b = 0; b < n; ++b) {
    const T* xr = cache.input.row(b);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const T g = dz(b, o);
      if (g == T(0)) continue;
      grad.bias[o] += g;
      axpy(g, xr, grad.weight.data() + o * layer.in, layer.in);
      if (need_input_grad) axpy(g, layer.weight.data() + o * layer.in, dx.row(b), layer.in);
    }
  }
  return dx;
}

/// Stack of layers with per-layer caches.
template <class T>
struct Mlp {
  std::vector<Layer<T>> layers;

  /// Hidden layers get ReLU (+BN, +dropout); when `scalar_head` is set a final
  /// 1-unit sigmoid layer is appended.
  static Mlp build(std::size_t in, const std::vector<std::size_t>& hidden, bool batchnorm,
                   double dropout, bool scalar_head) {
    Mlp m;
    std::size_t width = in;
    for (std::size_t h : hidden) {
      Layer<T> l;
      l.in = width;
      l.out = h;
      l.act = Activation::kRelu;
      l.batchnorm = batchnorm;
      l.dropout = dropout;
      m.layers.push_back(std::move(l));
      width = h;
    }
    if (scalar_head) {
      Layer<T> l;
      l.in = width;
      l.out = 1;
      l.act = Activation::kSigmoid;
      m.layers.push_back(std::move(l));
    }
    return m;
  }

  void init(Rng& rng) {
    for (auto& l : layers) l.init(rng);
  }

  std::size_t out_dim() const { return layers.back().out; }

  Matrix<T> forward(const Matrix<T>& x, bool train, Rng* rng, std::vector<LayerCache<T>>* caches) {
    if (caches != nullptr) caches->assign(layers.size(), {});
    Matrix<T> h = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      h = layer_forward(layers[i], h, train, rng, caches ? &(*caches)[i] : nullptr);
    }
    return h;
  }

  Matrix<T> backward(const std::vector<LayerCache<T>>& caches, Matrix<T> dy,
                     std::vector<LayerGrad<T>>& grads, bool need_input_grad) const {
    for (std::size_t i = layers.size(); i-- > 0;) {
      dy = layer_backward(layers[i], caches[i], std::move(dy), grads[i], i > 0 || need_input_grad);
    }
    return dy;
  }

  std::vector<LayerGrad<T>> zero_grads() const {
    std::vector<LayerGrad<T>> g(layers.size());
    for (std::size_t i = 0; i < layers.size(); ++i) g[i].zero(layers[i]);
    return g;
  }

  template <class U>
  Mlp<U> cast() const {
    Mlp<U> m;
    for (const auto& l : layers) m.layers.push_back(l.template cast<U>());
    return m;
  }
};

}  // namespace cgforge::nn
