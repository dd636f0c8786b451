#pragma once

#include <cmath>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "signflow/autograd/ops.hpp"
#include "signflow/autograd/tensor.hpp"
#include "signflow/core/error.hpp"
#include "signflow/nn/layers.hpp"

namespace signflow {

// Sinusoidal absolute encoding: column 2i holds sin(p / 10000^(2i/d)),
// column 2i+1 the matching cosine.
template <typename T>
NdArray<T> positional_encoding(std::size_t length, std::size_t width) {
  if (length == 0 || width == 0) throw ValueError("positional_encoding: length and width must be >= 1");
  if (width % 2 != 0) throw ValueError(detail::concat("positional_encoding: width must be even, got ", width));
  NdArray<T> pe(Shape{length, width});
  for (std::size_t p = 0; p < length; ++p)
    for (std::size_t i = 0; i < width; i += 2) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(i) / width);
      pe(p, i) = static_cast<T>(std::sin(angle));
      pe(p, i + 1) = static_cast<T>(std::cos(angle));
    }
  return pe;
}

struct AttentionOptions {
  bool scaled = true;  // divide scores by sqrt(head width)
  AttentionMask mask = AttentionMask::kNone;
};

// One head: Q = q_in W_q, H = kv_in W_h, V = kv_in W_v,
// A = softmax(Q H^T [/ sqrt(d_h)]), O = A V.
// `weights_out` receives A (before dropout) when non-null.
template <typename T>
Tensor<T> attention_head(const Tensor<T>& q_in, const Tensor<T>& kv_in, const Tensor<T>& w_h,
                         const Tensor<T>& w_q, const Tensor<T>& w_v, const AttentionOptions& opts,
                         const ForwardContext<T>& ctx, T dropout_rate, NdArray<T>* weights_out = nullptr) {
  if (w_h.shape() != w_q.shape() || w_v.shape() != w_q.shape())
    throw ShapeError("attention_head: projection shapes differ: " + shape_string(w_h.shape()) + " " +
                     shape_string(w_q.shape()) + " " + shape_string(w_v.shape()));
  const Tensor<T> q = matmul(q_in, w_q);
  const Tensor<T> h = matmul(kv_in, w_h);
  const Tensor<T> v = matmul(kv_in, w_v);
  Tensor<T> scores = matmul(q, transpose(h));
  if (opts.scaled) scores = scale(scores, static_cast<T>(1.0 / std::sqrt(static_cast<double>(w_q.dim(1)))));
  Tensor<T> a = softmax(scores, opts.mask);
  if (weights_out) *weights_out = a.value();
  if (ctx.training && ctx.rng && dropout_rate > T{0}) a = dropout(a, dropout_rate, *ctx.rng, true);
  return matmul(a, v);
}

template <typename T>
struct MultiHeadAttention {
  std::vector<Tensor<T>> w_h, w_q, w_v;  // per head, (d, d / C)
  Linear<T> output;                      // concat(O_1..O_C) -> d
  T dropout = T(0.1);

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, T dropout_rate, std::mt19937_64& rng)
      : dropout(dropout_rate) {
    if (heads == 0 || width % heads != 0)
      throw ValueError(detail::concat("attention: width ", width, " not divisible by ", heads, " heads"));
    const std::size_t hw = width / heads;
    for (std::size_t i = 0; i < heads; ++i) {
      w_h.push_back(Tensor<T>::parameter(xavier_uniform<T>(Shape{width, hw}, width, hw, rng)));
      w_q.push_back(Tensor<T>::parameter(xavier_uniform<T>(Shape{width, hw}, width, hw, rng)));
      w_v.push_back(Tensor<T>::parameter(xavier_uniform<T>(Shape{width, hw}, width, hw, rng)));
    }
    output = Linear<T>(width, width, rng);
  }

  std::size_t heads() const { return w_q.size(); }

  Tensor<T> operator()(const Tensor<T>& q_in, const Tensor<T>& kv_in, const AttentionOptions& opts,
                       const ForwardContext<T>& ctx, const char* block = "", std::size_t layer = 0) const {
    std::vector<Tensor<T>> outs;
    outs.reserve(heads());
    for (std::size_t i = 0; i < heads(); ++i) {
      NdArray<T> weights;
      outs.push_back(attention_head(q_in, kv_in, w_h[i], w_q[i], w_v[i], opts, ctx, dropout,
                                    ctx.recorder ? &weights : nullptr));
      if (ctx.recorder) ctx.recorder->maps.push_back({block, layer, i, std::move(weights)});
    }
    return output(outs.size() == 1 ? outs.front() : concat(outs, 1));
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < heads(); ++i) {
      const std::string p = prefix + ".head" + std::to_string(i);
      out.push_back({p + ".w_h", w_h[i]});
      out.push_back({p + ".w_q", w_q[i]});
      out.push_back({p + ".w_v", w_v[i]});
    }
    output.collect(out, prefix + ".output");
  }
};

}  // namespace signflow
