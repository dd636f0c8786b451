#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "signflow/autograd/ops.hpp"
#include "signflow/data/vocabulary.hpp"
#include "signflow/model/attention.hpp"
#include "signflow/nn/layers.hpp"

namespace signflow {

struct DecoderConfig {
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t width = 128;  // D
  std::size_t ff_width = 2048;
  std::size_t vocab = 115;  // J, specials included
  std::size_t max_len = 12; // M
  double dropout = 0.1;
  bool scaled_attention = true;

  void validate() const {
    if (layers == 0) throw ValueError("decoder: need at least one layer");
    if (heads == 0 || width % heads != 0)
      throw ValueError(detail::concat("decoder: width ", width, " not divisible by ", heads, " heads"));
    if (width % 2 != 0) throw ValueError("decoder: width must be even for positional encoding");
    if (vocab <= WordVocabulary::kSpecials) throw ValueError("decoder: vocabulary holds no words");
    if (max_len < 2) throw ValueError("decoder: max_len must be at least 2");
    if (dropout < 0 || dropout >= 1) throw ValueError("decoder: dropout must lie in [0, 1)");
  }
};

// Teacher-forcing pair of length M: input = [start] w1 .. w_{M-1},
// target = w1 .. w_{M-1} [end]; both padded with [pad]. Sentences longer
// than M - 1 words are truncated.
struct DecoderSequences {
  std::vector<int> input;
  std::vector<int> target;
};

inline DecoderSequences make_decoder_sequences(std::span<const int> words, std::size_t max_len) {
  const std::size_t n = std::min(words.size(), max_len - 1);
  DecoderSequences s{std::vector<int>(max_len, kPad), std::vector<int>(max_len, kPad)};
  s.input[0] = kStart;
  for (std::size_t i = 0; i < n; ++i) {
    s.input[i + 1] = words[i];
    s.target[i] = words[i];
  }
  s.target[n] = kEnd;
  return s;
}

// Post-norm: masked self-attention, cross-attention over K_hat, feed-forward.
template <typename T>
struct DecoderLayer {
  MultiHeadAttention<T> self_attention;
  LayerNorm<T> norm1;
  MultiHeadAttention<T> cross_attention;
  LayerNorm<T> norm2;
  FeedForward<T> ff;
  LayerNorm<T> norm3;
  bool scaled = true;

  DecoderLayer() = default;
  DecoderLayer(const DecoderConfig& c, std::mt19937_64& rng)
      : self_attention(c.width, c.heads, static_cast<T>(c.dropout), rng),
        norm1(c.width),
        cross_attention(c.width, c.heads, static_cast<T>(c.dropout), rng),
        norm2(c.width),
        ff(c.width, c.ff_width, static_cast<T>(c.dropout), rng),
        norm3(c.width),
        scaled(c.scaled_attention) {}

  // Masked self-attention sub-layer: E -> E_hat.
  Tensor<T> masked_self(const Tensor<T>& e, const ForwardContext<T>& ctx, std::size_t index = 0) const {
    const Tensor<T> a = self_attention(e, e, AttentionOptions{scaled, AttentionMask::kCausal}, ctx, "decoder-self", index);
    return norm1(add(e, a));
  }

  // Cross-attention plus feed-forward: (E_hat, K_hat) -> E_tilde.
  Tensor<T> cross(const Tensor<T>& e_hat, const Tensor<T>& k_hat, const ForwardContext<T>& ctx,
                  std::size_t index = 0) const {
    if (k_hat.value().rank() != 2 || k_hat.dim(1) != e_hat.dim(1))
      throw ShapeError("cross_attention: decoder width " + shape_string(e_hat.shape()) +
                       " does not match encoder output " + shape_string(k_hat.shape()));
    const Tensor<T> a = cross_attention(e_hat, k_hat, AttentionOptions{scaled, AttentionMask::kNone}, ctx,
                                        "decoder-cross", index);
    const Tensor<T> x = norm2(add(e_hat, a));
    return norm3(add(x, ff(x, ctx)));
  }

  Tensor<T> operator()(const Tensor<T>& e, const Tensor<T>& k_hat, const ForwardContext<T>& ctx,
                       std::size_t index = 0) const {
    return cross(masked_self(e, ctx, index), k_hat, ctx, index);
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    self_attention.collect(out, prefix + ".self_attention");
    norm1.collect(out, prefix + ".norm1");
    cross_attention.collect(out, prefix + ".cross_attention");
    norm2.collect(out, prefix + ".norm2");
    ff.collect(out, prefix + ".ff");
    norm3.collect(out, prefix + ".norm3");
  }
};

template <typename T>
class Decoder {
 public:
  Decoder() = default;
  Decoder(DecoderConfig config, std::mt19937_64& rng) : config_(config) {
    config_.validate();
    embedding_ = Tensor<T>::parameter(
        xavier_uniform<T>(Shape{config_.vocab, config_.width}, config_.vocab, config_.width, rng));
    for (std::size_t i = 0; i < config_.layers; ++i) layers_.emplace_back(config_, rng);
    output_ = Linear<T>(config_.width, config_.vocab, rng);
  }

  const DecoderConfig& config() const { return config_; }
  std::vector<DecoderLayer<T>>& layers() { return layers_; }
  Linear<T>& output() { return output_; }
  Tensor<T>& embedding_table() { return embedding_; }

  // Token ids (m <= M) -> E (m, D): embedding lookup plus positions.
  Tensor<T> embed(std::span<const int> ids) const {
    if (ids.empty() || ids.size() > config_.max_len)
      throw ShapeError(detail::concat("decoder: sequence length ", ids.size(), " outside [1, ", config_.max_len, "]"));
    return add(embedding(embedding_, ids), Tensor<T>(positional_encoding<T>(ids.size(), config_.width)));
  }

  // Unnormalised word scores (m, J).
  Tensor<T> logits(std::span<const int> ids, const Tensor<T>& k_hat, const ForwardContext<T>& ctx) const {
    Tensor<T> h = embed(ids);
    for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i](h, k_hat, ctx, i);
    return output_(h);
  }

  Tensor<T> log_probs(std::span<const int> ids, const Tensor<T>& k_hat, const ForwardContext<T>& ctx) const {
    return log_softmax(logits(ids, k_hat, ctx));
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".embedding", embedding_});
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect(out, prefix + ".layer" + std::to_string(i));
    output_.collect(out, prefix + ".output");
  }

 private:
  DecoderConfig config_;
  Tensor<T> embedding_;  // (J, D)
  std::vector<DecoderLayer<T>> layers_;
  Linear<T> output_;
};

// Mean cross-entropy over non-[pad] targets of (m, J) log probabilities.
template <typename T>
Tensor<T> decoder_loss(const Tensor<T>& log_probs, std::span<const int> targets) {
  return nll_loss(log_probs, targets, kPad);
}

// L = lambda_te * L_te + lambda_td * L_td. A task whose weight is zero may
// pass an undefined tensor.
template <typename T>
Tensor<T> joint_loss(const Tensor<T>& te, const Tensor<T>& td, double lambda_te, double lambda_td) {
  if (lambda_te < 0 || lambda_td < 0) throw ValueError("joint_loss: weights must be non-negative");
  if (lambda_te == 0 && lambda_td == 0) throw ValueError("joint_loss: both task weights are zero");
  if (lambda_te == 0) return scale(td, static_cast<T>(lambda_td));
  if (lambda_td == 0) return scale(te, static_cast<T>(lambda_te));
  return add(scale(te, static_cast<T>(lambda_te)), scale(td, static_cast<T>(lambda_td)));
}

}  // namespace signflow
