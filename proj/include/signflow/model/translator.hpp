#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "signflow/autograd/ops.hpp"
#include "signflow/decode/search.hpp"
#include "signflow/model/decoder.hpp"
#include "signflow/model/encoder.hpp"
#include "signflow/model/gloss_ctc.hpp"
#include "signflow/model/stfe.hpp"
#include "signflow/nn/layers.hpp"

namespace signflow {

struct ModelConfig {
  std::string stfe_preset = "standard";  // standard or toy
  std::size_t layers = 2;                // B, encoder and decoder alike
  std::size_t heads = 8;                 // C
  std::size_t ff_width = 2048;
  std::size_t max_len = 12;              // M
  double dropout = 0.1;
  bool scaled_attention = true;
  std::size_t gloss_classes = 91;  // |G| + 1
  std::size_t vocab = 115;         // J

  StfeConfig stfe_config() const {
    if (stfe_preset == "standard") return StfeConfig::standard();
    if (stfe_preset == "toy") return StfeConfig::toy();
    throw ValueError("model: unknown STFE preset '" + stfe_preset + "' (expected standard or toy)");
  }

  std::size_t width() const { return stfe_output_shape(stfe_config())[1]; }

  EncoderConfig encoder_config() const {
    EncoderConfig c;
    c.layers = layers;
    c.heads = heads;
    c.width = width();
    c.ff_width = ff_width;
    c.dropout = dropout;
    c.scaled_attention = scaled_attention;
    return c;
  }

  DecoderConfig decoder_config() const {
    DecoderConfig c;
    c.layers = layers;
    c.heads = heads;
    c.width = width();
    c.ff_width = ff_width;
    c.vocab = vocab;
    c.max_len = max_len;
    c.dropout = dropout;
    c.scaled_attention = scaled_attention;
    return c;
  }
};

// Loss terms of one sample. `ctc_skipped` is set when the gloss target
// cannot be aligned to the L encoder steps; the CTC term is then dropped.
template <typename T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> recognition;  // L_TE
  Tensor<T> translation;  // L_TD
  bool ctc_skipped = false;
};

// Flow video -> STFE -> MGRTE (recognition encoder with gloss head) and
// MGTTD (translation decoder).
template <typename T>
class Translator {
 public:
  Translator() = default;
  Translator(ModelConfig config, std::mt19937_64& rng) : config_(std::move(config)) {
    stfe_ = Stfe<T>(config_.stfe_config(), rng);
    encoder_ = Encoder<T>(config_.encoder_config(), rng);
    head_ = GlossHead<T>(config_.width(), config_.gloss_classes, rng);
    decoder_ = Decoder<T>(config_.decoder_config(), rng);
  }

  const ModelConfig& config() const { return config_; }
  Stfe<T>& stfe() { return stfe_; }
  Encoder<T>& encoder() { return encoder_; }
  GlossHead<T>& gloss_head() { return head_; }
  Decoder<T>& decoder() { return decoder_; }

  // (T, H, W, 3) -> K_hat (L, d)
  Tensor<T> encode(const Tensor<T>& video, const ForwardContext<T>& ctx) {
    return encoder_(stfe_.forward(video, ctx), ctx);
  }

  LossTerms<T> loss(const Tensor<T>& video, std::span<const int> glosses, std::span<const int> words,
                    double lambda_te, double lambda_td, const ForwardContext<T>& ctx,
                    CtcMode mode = CtcMode::kNll) {
    LossTerms<T> out;
    const Tensor<T> k_hat = encode(video, ctx);
    double lte = lambda_te;
    if (lte > 0) {
      if (ctc_min_length(glosses) > k_hat.dim(0)) {
        out.ctc_skipped = true;
        lte = 0;
      } else {
        out.recognition = ctc_loss(head_.log_posterior(k_hat), glosses, mode);
      }
    }
    if (lambda_td > 0) {
      const auto seq = make_decoder_sequences(words, config_.max_len);
      out.translation = decoder_loss(decoder_.log_probs(seq.input, k_hat, ctx), seq.target);
    }
    if (lte == 0 && lambda_td == 0) return out;
    out.total = joint_loss(out.recognition, out.translation, lte, lambda_td);
    return out;
  }

  // CTC best-path gloss ids.
  std::vector<int> recognize(const Tensor<T>& k_hat) const { return best_path_decode(head_.posterior(k_hat)); }

  Hypothesis translate(const Tensor<T>& k_hat, SearchOptions opts) const {
    opts.max_len = std::min(opts.max_len, config_.max_len);
    const auto ctx = ForwardContext<T>::inference();
    const NextTokenScorer scorer = [&](const std::vector<int>& prefix) {
      const Tensor<T> lp = decoder_.log_probs(prefix, k_hat, ctx);
      const std::size_t last = prefix.size() - 1, j = lp.dim(1);
      std::vector<double> out(j);
      for (std::size_t k = 0; k < j; ++k) out[k] = static_cast<double>(lp.value()(last, k));
      return out;
    };
    return opts.width <= 1 ? greedy_decode(scorer, opts) : beam_search(scorer, opts);
  }

  // Checkpoint sections in fixed order.
  ParameterList<T> parameters(const std::string& section = "") const {
    ParameterList<T> out;
    if (section.empty() || section == "stfe") stfe_.collect(out, "stfe");
    if (section.empty() || section == "mgrte") encoder_.collect(out, "mgrte");
    if (section.empty() || section == "gloss-head") head_.collect(out, "gloss-head");
    if (section.empty() || section == "mgttd") decoder_.collect(out, "mgttd");
    return out;
  }

  BufferList<T> buffers() {
    BufferList<T> out;
    stfe_.collect_buffers(out, "stfe");
    return out;
  }

  static const std::vector<std::string>& sections() {
    static const std::vector<std::string> s{"stfe", "mgrte", "gloss-head", "mgttd"};
    return s;
  }

 private:
  ModelConfig config_;
  Stfe<T> stfe_;
  Encoder<T> encoder_;
  GlossHead<T> head_;
  Decoder<T> decoder_;
};

// Module-by-module output shapes of the full pipeline. STFE shapes come from
// the block arithmetic; the transformer stages run a real forward pass on a
// random (L, d) representation.
inline std::string pipeline_shape_report(const ModelConfig& config, std::uint64_t seed = 0) {
  std::ostringstream o;
  const StfeConfig sc = config.stfe_config();
  o << stfe_conformance_report(sc);
  std::mt19937_64 rng(seed);
  Translator<float> model(config, rng);
  NoGradScope<float> no_grad;
  const Shape ld = stfe_output_shape(sc);
  NdArray<float> k(ld);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (auto& v : k.values()) v = n(rng);
  const auto ctx = ForwardContext<float>::inference();
  const Tensor<float> k_hat = model.encoder()(Tensor<float>(k), ctx);
  const Tensor<float> gloss = model.gloss_head().log_posterior(k_hat);
  std::vector<int> ids(config.max_len, kPad);
  ids[0] = kStart;
  const Tensor<float> e = model.decoder().embed(ids);
  const Tensor<float> words = model.decoder().logits(ids, k_hat, ctx);
  o << "\nmodule chain\n";
  o << "input F " << shape_string(sc.input) << "\n";
  o << "STFE " << shape_string(ld) << "\n";
  o << "MGRT " << shape_string(k_hat.shape()) << ", " << shape_string(gloss.shape()) << "\n";
  o << "input W (" << ids.size() << ")\n";
  o << "word embedding " << shape_string(e.shape()) << "\n";
  o << "MGTT " << shape_string(words.shape()) << "\n";
  return o.str();
}

}  // namespace signflow
