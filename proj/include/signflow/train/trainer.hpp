#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "signflow/data/augment.hpp"
#include "signflow/data/manifest.hpp"
#include "signflow/decode/metrics.hpp"
#include "signflow/decode/search.hpp"
#include "signflow/model/translator.hpp"
#include "signflow/train/checkpoint.hpp"
#include "signflow/train/config.hpp"
#include "signflow/train/optimizer.hpp"

namespace signflow {

// Training stopped on a non-finite loss or gradient. The model holds the
// last finite parameters and the checkpoint file (if any) the last
// completed epoch.
class TrainingAborted : public StateError {
 public:
  using StateError::StateError;
};

using FlowLoader = std::function<flow::FlowSequence(const ManifestSample&)>;

template <typename T>
MetricReport evaluate(Translator<T>& model, const DatasetManifest& manifest,
                      const std::vector<const ManifestSample*>& samples, std::size_t beam_width,
                      const FlowLoader& load = {}) {
  if (samples.empty()) throw ValueError("evaluate: no samples to evaluate");
  NoGradScope<T> no_grad;
  const auto ctx = ForwardContext<T>::inference();
  SearchOptions opts;
  opts.width = beam_width;
  opts.max_len = model.config().max_len;
  std::vector<SampleResult> results;
  for (const ManifestSample* s : samples) {
    const flow::FlowSequence seq = load ? load(*s) : manifest.load_flow(*s);
    const Tensor<T> k_hat = model.encode(Tensor<T>(seq.to_tensor<T>()), ctx);
    SampleResult r;
    r.id = s->id;
    r.gloss_ref = s->glosses;
    r.gloss_hyp = manifest.gloss_vocab.decode(model.recognize(k_hat));
    r.text_ref = s->words;
    r.text_hyp = manifest.word_vocab.decode(model.translate(k_hat, opts).tokens);
    results.push_back(std::move(r));
  }
  return MetricReport::compute(std::move(results));
}

// Evaluates a checkpoint on one split of a manifest whose vocabularies must
// be the ones the checkpoint was trained with.
template <typename T>
MetricReport evaluate_checkpoint(const Checkpoint& ckpt, const DatasetManifest& manifest, const std::string& split,
                                 std::size_t beam_width) {
  if (ckpt.gloss_hash != manifest.gloss_vocab.hash() || ckpt.word_hash != manifest.word_vocab.hash())
    throw ValueError("evaluate: checkpoint vocabulary hashes do not match the manifest vocabularies");
  const auto samples = manifest.split(split);
  if (samples.empty()) throw ValueError("evaluate: split '" + split + "' is empty");
  Translator<T> model = model_from_checkpoint<T>(ckpt);
  return evaluate(model, manifest, samples, beam_width);
}

// Runs one sample with teacher forcing over its reference words (padded to
// M) and writes every recorded attention map as a whitespace-separated
// matrix, one file per block/layer/head, plus an index listing them.
template <typename T>
std::vector<AttentionMap<T>> dump_attention(Translator<T>& model, const DatasetManifest& manifest,
                                            const std::string& sample_id, const std::filesystem::path& out_dir,
                                            const FlowLoader& load = {}) {
  const ManifestSample& s = manifest.sample(sample_id);
  const flow::FlowSequence seq = load ? load(s) : manifest.load_flow(s);
  NoGradScope<T> no_grad;
  AttentionRecorder<T> rec;
  const auto ctx = ForwardContext<T>::inference(&rec);
  const Tensor<T> k_hat = model.encode(Tensor<T>(seq.to_tensor<T>()), ctx);
  const auto words = manifest.word_vocab.encode(s.words);
  const auto dec = make_decoder_sequences(words, model.config().max_len);
  model.decoder().logits(dec.input, k_hat, ctx);

  std::filesystem::create_directories(out_dir);
  std::ofstream index(out_dir / "index.txt");
  if (!index) throw FormatError("cannot write attention index in " + out_dir.string());
  for (const auto& m : rec.maps) {
    const std::string name = detail::concat(m.block, ".layer", m.layer, ".head", m.head, ".txt");
    std::ofstream out(out_dir / name);
    if (!out) throw FormatError("cannot write " + (out_dir / name).string());
    out << std::setprecision(9);
    for (std::size_t r = 0; r < m.weights.dim(0); ++r) {
      for (std::size_t c = 0; c < m.weights.dim(1); ++c) out << (c ? " " : "") << m.weights(r, c);
      out << "\n";
    }
    index << name << "\t" << m.weights.dim(0) << "x" << m.weights.dim(1) << "\n";
  }
  return rec.maps;
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;  // mean joint loss over the steps taken
  std::size_t steps = 0;
  std::size_t ctc_skipped = 0;
  std::optional<double> wer;
  std::array<double, 4> bleu{};

  std::string to_text() const {
    std::ostringstream o;
    o << "epoch=" << epoch << " lr=" << std::setprecision(17) << lr << std::setprecision(6) << std::fixed
      << " loss=" << loss << " steps=" << steps << " ctc_skipped=" << ctc_skipped;
    if (wer) {
      o << std::setprecision(2) << " wer=" << *wer;
      for (std::size_t n = 0; n < 4; ++n) o << " bleu" << n + 1 << "=" << bleu[n];
    }
    return o.str();
  }
};

template <typename T>
class Trainer {
 public:
  // Budget for holding the training flow codes in memory rather than
  // reading caches every step.
  static constexpr std::size_t kPreloadBytes = std::size_t{512} << 20;

  Trainer(TrainConfig config, const DatasetManifest& manifest) : config_(std::move(config)), manifest_(manifest) {
    config_.validate();
    train_ = manifest_.split("train");
    if (train_.empty()) throw ValueError("train: manifest has no train samples");
    std::mt19937_64 init_rng(config_.seed);
    model_ = Translator<T>(config_.model_config(manifest_.gloss_vocab.size(), manifest_.word_vocab.size()), init_rng);
    if (model_.stfe().config().input[0] != manifest_.frames)
      throw ValueError(detail::concat("train: manifest declares ", manifest_.frames, " frames, STFE preset '",
                                      config_.stfe_preset, "' expects ", model_.stfe().config().input[0]));
    optimizer_ = Adam<T>(config_.adam_beta1, config_.adam_beta2, config_.adam_eps);
    rng_.seed(config_.seed ^ 0x9e3779b97f4a7c15ULL);
    params_ = model_.parameters();
    for (const auto* s : train_) {
      glosses_.push_back(manifest_.gloss_vocab.encode(s->glosses));
      words_.push_back(manifest_.word_vocab.encode(s->words));
    }
    const auto h = model_.stfe().config().input;
    if (train_.size() * h[0] * h[1] * h[2] * h[3] <= kPreloadBytes)
      for (const auto* s : train_) cache_.push_back(manifest_.load_flow(*s));
  }

  Translator<T>& model() { return model_; }
  Adam<T>& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return config_; }
  std::size_t epochs_done() const { return epoch_; }

  flow::FlowSequence train_flow(std::size_t i) const {
    return cache_.empty() ? manifest_.load_flow(*train_[i]) : cache_[i];
  }

  Checkpoint checkpoint() {
    return capture_checkpoint(model_, optimizer_, config_, manifest_.gloss_vocab.hash(), manifest_.word_vocab.hash(),
                              static_cast<std::uint32_t>(epoch_));
  }

  void restore(const Checkpoint& c) {
    if (c.gloss_hash != manifest_.gloss_vocab.hash() || c.word_hash != manifest_.word_vocab.hash())
      throw ValueError("train: checkpoint vocabulary hashes do not match the manifest vocabularies");
    restore_checkpoint(c, model_, &optimizer_);
    epoch_ = c.epoch;
  }

  // One pass over the (shuffled, optionally flip-augmented) train split.
  EpochLog run_epoch() {
    const std::size_t epoch = epoch_ + 1;
    EpochLog log;
    log.epoch = epoch;
    log.lr = config_.lr_at(epoch);
    std::vector<std::pair<std::size_t, bool>> order;
    for (std::size_t i = 0; i < train_.size(); ++i) {
      order.push_back({i, false});
      if (config_.augment_hflip) order.push_back({i, true});
    }
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng_() % i]);

    double total = 0;
    for (const auto& [i, flipped] : order) {
      flow::FlowSequence seq = train_flow(i);
      if (flipped) seq = augment_hflip(seq);
      const Tensor<T> video(seq.to_tensor<T>());
      Graph<T> graph;
      GraphScope<T> scope(graph);
      const ForwardContext<T> ctx{true, &rng_, nullptr};
      LossTerms<T> terms;
      try {
        terms = model_.loss(video, glosses_[i], words_[i], config_.lambda_te, config_.lambda_td, ctx,
                            config_.ctc_mode());
      } catch (const NonFiniteError& e) {
        throw TrainingAborted(detail::concat("epoch ", epoch, ", sample '", train_[i]->id, "': ", e.what()));
      }
      if (terms.ctc_skipped) ++log.ctc_skipped;
      if (!terms.total.defined()) continue;
      const double value = static_cast<double>(terms.total.item());
      if (!std::isfinite(value))
        throw TrainingAborted(detail::concat("epoch ", epoch, ", sample '", train_[i]->id, "': loss is ", value));
      for (auto& p : params_) p.tensor.zero_grad();
      graph.backward(terms.total);
      const double norm = clip_gradients(params_, config_.grad_clip);
      if (!std::isfinite(norm))
        throw TrainingAborted(detail::concat("epoch ", epoch, ", sample '", train_[i]->id, "': gradient norm is ", norm));
      optimizer_.step(params_, log.lr);
      total += value;
      ++log.steps;
    }
    log.loss = log.steps ? total / static_cast<double>(log.steps) : 0.0;
    epoch_ = epoch;

    const auto val = manifest_.split(config_.eval_split);
    if (config_.eval_every > 0 && !val.empty() && epoch % config_.eval_every == 0) {
      const MetricReport r = evaluate(model_, manifest_, val, config_.beam_width);
      log.wer = r.wer;
      log.bleu = r.bleu.bleu;
    }
    return log;
  }

  // Runs the remaining epochs. With a checkpoint path set, the checkpoint is
  // rewritten after every completed epoch.
  std::vector<EpochLog> train(const std::function<void(const EpochLog&)>& on_epoch = {}) {
    std::vector<EpochLog> logs;
    while (epoch_ < config_.epochs) {
      logs.push_back(run_epoch());
      if (!config_.ckpt.empty()) checkpoint().save(config_.ckpt);
      if (on_epoch) on_epoch(logs.back());
    }
    return logs;
  }

 private:
  TrainConfig config_;
  const DatasetManifest& manifest_;
  std::vector<const ManifestSample*> train_;
  std::vector<std::vector<int>> glosses_, words_;
  std::vector<flow::FlowSequence> cache_;
  Translator<T> model_;
  Adam<T> optimizer_;
  ParameterList<T> params_;
  std::mt19937_64 rng_;
  std::size_t epoch_ = 0;
};

}  // namespace signflow
