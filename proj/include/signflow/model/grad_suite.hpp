#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "signflow/autograd/grad_check.hpp"
#include "signflow/model/attention.hpp"
#include "signflow/model/decoder.hpp"
#include "signflow/model/encoder.hpp"
#include "signflow/model/gloss_ctc.hpp"
#include "signflow/model/stfe.hpp"

namespace signflow {

struct GradSuiteEntry {
  std::string module;
  std::size_t seeds = 0;
  GradCheckReport report;
  double seconds = 0.0;
};

inline const std::vector<std::string>& grad_suite_modules() {
  static const std::vector<std::string> m{"stfe",         "encoder-layer",   "ctc",      "masked-attention",
                                          "cross-attention", "decoder-loss", "joint-loss"};
  return m;
}

namespace detail::suite {

inline NdArray<double> normal(Shape shape, std::mt19937_64& rng, double s = 1.0) {
  NdArray<double> a(std::move(shape));
  std::normal_distribution<double> d(0.0, s);
  for (auto& v : a.values()) v = d(rng);
  return a;
}

inline std::vector<Tensor<double>> leaves(std::vector<Tensor<double>> inputs, const ParameterList<double>& params) {
  for (const auto& p : params) inputs.push_back(p.tensor);
  return inputs;
}

inline std::vector<int> random_ids(std::size_t n, int lo, int hi, std::mt19937_64& rng) {
  std::vector<int> out(n);
  for (auto& v : out) v = lo + static_cast<int>(rng() % static_cast<std::uint64_t>(hi - lo + 1));
  return out;
}

// Small transformer dimensions: width 8, two heads.
constexpr std::size_t kWidth = 8, kHeads = 2, kFf = 16, kSteps = 6, kGlossClasses = 4, kVocab = 8, kMaxLen = 5;

inline EncoderConfig encoder_config(bool scaled) {
  EncoderConfig c;
  c.layers = 1;
  c.heads = kHeads;
  c.width = kWidth;
  c.ff_width = kFf;
  c.scaled_attention = scaled;
  return c;
}

inline DecoderConfig decoder_config(bool scaled) {
  DecoderConfig c;
  c.layers = 1;
  c.heads = kHeads;
  c.width = kWidth;
  c.ff_width = kFf;
  c.vocab = kVocab;
  c.max_len = kMaxLen;
  c.scaled_attention = scaled;
  return c;
}

// Random probe weights turn a tensor output into a scalar with a
// non-degenerate gradient everywhere.
inline Tensor<double> probe(const Tensor<double>& y, std::mt19937_64& rng) {
  return sum(mul(y, Tensor<double>(normal(y.shape(), rng))));
}

inline GradCheckReport check_once(const std::string& module, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const bool scaled = seed % 2 == 0;  // alternate scaled and unscaled attention
  const auto ctx = ForwardContext<double>::inference();
  GradCheckOptions opts;
  opts.seed = seed;
  opts.max_coords_per_leaf = 24;

  if (module == "stfe") {
    Stfe<double> stfe(StfeConfig::toy(), rng);
    auto x = Tensor<double>::parameter(normal(StfeConfig::toy().input, rng));
    const NdArray<double> w = normal(stfe.output_shape(), rng);
    const ForwardContext<double> train{true, nullptr, nullptr};
    ParameterList<double> p;
    stfe.collect(p, "stfe");
    opts.max_coords_per_leaf = 16;
    // |f| is large next to the input gradients, so at 1e-5 rounding in f
    // swamps the smallest entries; a wide extrapolated step avoids that.
    opts.step = 1e-3;
    opts.richardson = true;
    return grad_check<double>([&] { return sum(mul(stfe.forward(x, train), Tensor<double>(w))); }, leaves({x}, p),
                              opts);
  }
  if (module == "encoder-layer") {
    EncoderLayer<double> layer(encoder_config(scaled), rng);
    auto x = Tensor<double>::parameter(normal({kSteps, kWidth}, rng));
    const NdArray<double> w = normal({kSteps, kWidth}, rng);
    ParameterList<double> p;
    layer.collect(p, "layer");
    return grad_check<double>([&] { return sum(mul(layer(x, ctx), Tensor<double>(w))); }, leaves({x}, p), opts);
  }
  if (module == "ctc") {
    auto logits = Tensor<double>::parameter(normal({kSteps, kGlossClasses}, rng, 2.0));
    const auto target = random_ids(1 + rng() % 3, 1, static_cast<int>(kGlossClasses) - 1, rng);
    const CtcMode mode = scaled ? CtcMode::kNll : CtcMode::kOneMinusP;
    opts.max_coords_per_leaf = 0;
    return grad_check<double>([&] { return ctc_loss(log_softmax(logits), target, mode); }, {logits}, opts);
  }
  if (module == "masked-attention") {
    MultiHeadAttention<double> mha(kWidth, kHeads, 0.0, rng);
    auto x = Tensor<double>::parameter(normal({kMaxLen, kWidth}, rng));
    const NdArray<double> w = normal({kMaxLen, kWidth}, rng);
    ParameterList<double> p;
    mha.collect(p, "self");
    const AttentionOptions o{scaled, AttentionMask::kCausal};
    return grad_check<double>([&] { return sum(mul(mha(x, x, o, ctx, "decoder-self", 0), Tensor<double>(w))); },
                              leaves({x}, p), opts);
  }
  if (module == "cross-attention") {
    DecoderLayer<double> layer(decoder_config(scaled), rng);
    auto e = Tensor<double>::parameter(normal({kMaxLen, kWidth}, rng));
    auto k = Tensor<double>::parameter(normal({kSteps, kWidth}, rng));
    const NdArray<double> w = normal({kMaxLen, kWidth}, rng);
    ParameterList<double> p;
    layer.collect(p, "layer");
    return grad_check<double>([&] { return sum(mul(layer.cross(e, k, ctx), Tensor<double>(w))); },
                              leaves({e, k}, p), opts);
  }
  if (module == "decoder-loss") {
    Decoder<double> dec(decoder_config(scaled), rng);
    auto k = Tensor<double>::parameter(normal({kSteps, kWidth}, rng));
    const auto words = random_ids(1 + rng() % (kMaxLen - 1), 3, static_cast<int>(kVocab) - 1, rng);
    const auto seq = make_decoder_sequences(words, kMaxLen);
    ParameterList<double> p;
    dec.collect(p, "mgttd");
    return grad_check<double>([&] { return decoder_loss(dec.log_probs(seq.input, k, ctx), seq.target); },
                              leaves({k}, p), opts);
  }
  if (module == "joint-loss") {
    Encoder<double> enc(encoder_config(scaled), rng);
    GlossHead<double> head(kWidth, kGlossClasses, rng);
    Decoder<double> dec(decoder_config(scaled), rng);
    auto k = Tensor<double>::parameter(normal({kSteps, kWidth}, rng));
    const auto glosses = random_ids(1 + rng() % 3, 1, static_cast<int>(kGlossClasses) - 1, rng);
    const auto seq = make_decoder_sequences(random_ids(3, 3, static_cast<int>(kVocab) - 1, rng), kMaxLen);
    std::uniform_real_distribution<double> lam(0.25, 2.0);
    const double lte = lam(rng), ltd = lam(rng);
    ParameterList<double> p;
    enc.collect(p, "mgrte");
    head.collect(p, "gloss-head");
    dec.collect(p, "mgttd");
    return grad_check<double>(
        [&] {
          const auto k_hat = enc(k, ctx);
          return joint_loss(ctc_loss(head.log_posterior(k_hat), glosses),
                            decoder_loss(dec.log_probs(seq.input, k_hat, ctx), seq.target), lte, ltd);
        },
        leaves({k}, p), opts);
  }
  throw ValueError("grad suite: unknown module '" + module + "'");
}

}  // namespace detail::suite

// Finite-difference check of one module over `seeds` independent random
// draws of weights and inputs, in double precision.
inline GradSuiteEntry run_grad_module(const std::string& module, std::size_t seeds, std::uint64_t base_seed = 1) {
  const auto start = std::chrono::steady_clock::now();
  GradSuiteEntry e;
  e.module = module;
  e.seeds = seeds;
  for (std::size_t s = 0; s < seeds; ++s) e.report.merge(detail::suite::check_once(module, base_seed + s));
  e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return e;
}

}  // namespace signflow
