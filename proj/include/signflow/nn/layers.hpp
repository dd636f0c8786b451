#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "signflow/autograd/ops.hpp"
#include "signflow/autograd/tensor.hpp"
#include "signflow/core/ndarray.hpp"

namespace signflow {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedTensor<T>>;

// Non-trainable state that still belongs in a checkpoint.
template <typename T>
struct NamedBuffer {
  std::string name;
  NdArray<T>* array;
};

template <typename T>
using BufferList = std::vector<NamedBuffer<T>>;

// One captured attention matrix.
template <typename T>
struct AttentionMap {
  std::string block;  // "encoder", "decoder-self", "decoder-cross"
  std::size_t layer = 0;
  std::size_t head = 0;
  NdArray<T> weights;
};

template <typename T>
struct AttentionRecorder {
  std::vector<AttentionMap<T>> maps;
  void clear() { maps.clear(); }
};

// Per-call forward settings. `rng` may be null when training is false.
template <typename T>
struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  AttentionRecorder<T>* recorder = nullptr;

  static ForwardContext inference(AttentionRecorder<T>* rec = nullptr) {
    return ForwardContext{false, nullptr, rec};
  }
};

template <typename T>
NdArray<T> xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out,
                          std::mt19937_64& rng) {
  NdArray<T> out(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
NdArray<T> he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  NdArray<T> out(std::move(shape));
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (auto& v : out.values()) v = static_cast<T>(dist(rng));
  return out;
}

template <typename T>
struct Linear {
  Tensor<T> weight;  // (in, out)
  Tensor<T> bias;    // (out)

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
      : weight(Tensor<T>::parameter(xavier_uniform<T>(Shape{in, out}, in, out, rng))),
        bias(Tensor<T>::parameter(NdArray<T>(Shape{out}))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return add_bias(matmul(x, weight), bias); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t width)
      : gamma(Tensor<T>::parameter(NdArray<T>(Shape{width}, T{1}))),
        beta(Tensor<T>::parameter(NdArray<T>(Shape{width}))) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

// d -> d_ff -> d with ReLU; dropout on the output in training mode.
template <typename T>
struct FeedForward {
  Linear<T> expand;
  Linear<T> project;
  T dropout = T(0.1);

  FeedForward() = default;
  FeedForward(std::size_t width, std::size_t hidden, T dropout_rate, std::mt19937_64& rng)
      : expand(width, hidden, rng), project(hidden, width, rng), dropout(dropout_rate) {}

  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext<T>& ctx) const {
    Tensor<T> y = project(relu(expand(x)));
    if (ctx.training && ctx.rng) y = signflow::dropout(y, dropout, *ctx.rng, true);
    return y;
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    expand.collect(out, prefix + ".expand");
    project.collect(out, prefix + ".project");
  }
};

}  // namespace signflow
