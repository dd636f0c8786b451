#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "signflow/autograd/ops.hpp"
#include "signflow/model/attention.hpp"
#include "signflow/nn/layers.hpp"

namespace signflow {

struct EncoderConfig {
  std::size_t layers = 2;     // B
  std::size_t heads = 8;      // C
  std::size_t width = 128;    // d
  std::size_t ff_width = 2048;
  double dropout = 0.1;
  bool scaled_attention = true;
  bool positional_encoding = true;

  void validate() const {
    if (layers == 0) throw ValueError("encoder: need at least one layer");
    if (heads == 0 || width % heads != 0)
      throw ValueError(detail::concat("encoder: width ", width, " not divisible by ", heads, " heads"));
    if (ff_width == 0) throw ValueError("encoder: feed-forward width must be positive");
    if (dropout < 0 || dropout >= 1) throw ValueError("encoder: dropout must lie in [0, 1)");
  }
};

// Post-norm layer: x1 = LN(x + MHA(x)); out = LN(x1 + FF(x1)).
template <typename T>
struct EncoderLayer {
  MultiHeadAttention<T> attention;
  LayerNorm<T> norm1;
  FeedForward<T> ff;
  LayerNorm<T> norm2;
  bool scaled = true;

  EncoderLayer() = default;
  EncoderLayer(const EncoderConfig& c, std::mt19937_64& rng)
      : attention(c.width, c.heads, static_cast<T>(c.dropout), rng),
        norm1(c.width),
        ff(c.width, c.ff_width, static_cast<T>(c.dropout), rng),
        norm2(c.width),
        scaled(c.scaled_attention) {}

  Tensor<T> operator()(const Tensor<T>& x, const ForwardContext<T>& ctx, std::size_t index = 0) const {
    const Tensor<T> a = attention(x, x, AttentionOptions{scaled, AttentionMask::kNone}, ctx, "encoder", index);
    const Tensor<T> x1 = norm1(add(x, a));
    return norm2(add(x1, ff(x1, ctx)));
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    attention.collect(out, prefix + ".attention");
    norm1.collect(out, prefix + ".norm1");
    ff.collect(out, prefix + ".ff");
    norm2.collect(out, prefix + ".norm2");
  }
};

template <typename T>
class Encoder {
 public:
  Encoder() = default;
  Encoder(EncoderConfig config, std::mt19937_64& rng) : config_(config) {
    config_.validate();
    for (std::size_t i = 0; i < config_.layers; ++i) layers_.emplace_back(config_, rng);
  }

  const EncoderConfig& config() const { return config_; }
  std::vector<EncoderLayer<T>>& layers() { return layers_; }

  // K (L, d) -> K_hat (L, d). Attention maps go to ctx.recorder if set.
  Tensor<T> operator()(const Tensor<T>& k, const ForwardContext<T>& ctx) const {
    if (k.value().rank() != 2 || k.dim(1) != config_.width)
      throw ShapeError(detail::concat("encoder: expected (L, ", config_.width, "), got ", shape_string(k.shape())));
    Tensor<T> h = k;
    if (config_.positional_encoding)
      h = add(h, Tensor<T>(positional_encoding<T>(k.dim(0), config_.width)));
    for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i](h, ctx, i);
    return h;
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".layer" + std::to_string(i));
  }

 private:
  EncoderConfig config_;
  std::vector<EncoderLayer<T>> layers_;
};

}  // namespace signflow
