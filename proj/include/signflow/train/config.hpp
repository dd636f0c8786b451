#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "signflow/core/error.hpp"
#include "signflow/model/gloss_ctc.hpp"
#include "signflow/model/translator.hpp"

namespace signflow {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 1;
  double lr = 1e-4;
  double lr_decay = 0.1;             // lr * exp(-lr_decay) per epoch ...
  std::size_t lr_decay_after = 5;    // ... once past this epoch
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double grad_clip = 0.0;            // global L2 norm; 0 disables
  double dropout = 0.1;
  double lambda_te = 1.0;
  double lambda_td = 1.0;
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t ff_width = 2048;
  std::size_t max_len = 12;
  std::string stfe_preset = "standard";
  bool paper_loss_mode = false;      // CTC loss 1 - P instead of -log P
  bool attn_scaling = true;
  bool augment_hflip = false;
  std::size_t beam_width = 5;
  std::uint64_t seed = 1;
  std::string ckpt;
  std::string eval_split = "dev";    // per-epoch validation; skipped when the split is empty
  std::size_t eval_every = 1;        // 0 disables per-epoch validation

  // Learning rate for a 1-based epoch.
  double lr_at(std::size_t epoch) const {
    const double past = epoch > lr_decay_after ? static_cast<double>(epoch - lr_decay_after) : 0.0;
    return lr * std::exp(-lr_decay * past);
  }

  CtcMode ctc_mode() const { return paper_loss_mode ? CtcMode::kOneMinusP : CtcMode::kNll; }

  ModelConfig model_config(std::size_t gloss_classes, std::size_t vocab) const {
    ModelConfig m;
    m.stfe_preset = stfe_preset;
    m.layers = layers;
    m.heads = heads;
    m.ff_width = ff_width;
    m.max_len = max_len;
    m.dropout = dropout;
    m.scaled_attention = attn_scaling;
    m.gloss_classes = gloss_classes;
    m.vocab = vocab;
    return m;
  }

  void validate() const {
    if (epochs == 0) throw ValueError("config: epochs must be positive");
    if (batch_size != 1) throw ValueError("config: only batch size 1 is supported");
    if (!(lr > 0)) throw ValueError("config: lr must be positive");
    if (lr_decay < 0) throw ValueError("config: lr_decay must be non-negative");
    if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1))
      throw ValueError("config: Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0)) throw ValueError("config: adam_eps must be positive");
    if (grad_clip < 0) throw ValueError("config: grad_clip must be non-negative");
    if (!(dropout >= 0 && dropout < 1)) throw ValueError("config: dropout must lie in [0, 1)");
    if (lambda_te < 0 || lambda_td < 0) throw ValueError("config: task weights must be non-negative");
    if (lambda_te == 0 && lambda_td == 0) throw ValueError("config: both task weights are zero");
    if (layers == 0 || heads == 0 || ff_width == 0) throw ValueError("config: layers, heads and ff_width must be positive");
    if (max_len < 2) throw ValueError("config: max_len must be at least 2");
    if (beam_width == 0) throw ValueError("config: beam width must be positive");
    if (stfe_preset != "standard" && stfe_preset != "toy")
      throw ValueError("config: stfe_preset must be standard or toy");
  }

  nlohmann::json to_json() const {
    return {{"epochs", epochs},         {"batch_size", batch_size},
            {"lr", lr},                 {"lr_decay", lr_decay},
            {"lr_decay_after", lr_decay_after},
            {"adam_beta1", adam_beta1}, {"adam_beta2", adam_beta2},
            {"adam_eps", adam_eps},     {"grad_clip", grad_clip},
            {"dropout", dropout},       {"lambda_te", lambda_te},
            {"lambda_td", lambda_td},   {"layers", layers},
            {"heads", heads},           {"ff_width", ff_width},
            {"max_len", max_len},       {"stfe_preset", stfe_preset},
            {"paper_loss_mode", paper_loss_mode},
            {"attn_scaling", attn_scaling},
            {"augment_hflip", augment_hflip},
            {"beam_width", beam_width}, {"seed", seed},
            {"ckpt", ckpt},             {"eval_split", eval_split},
            {"eval_every", eval_every}};
  }

  // Keys absent from `j` keep their current values; unknown keys are errors.
  void merge_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("config: top level must be an object");
    const nlohmann::json known = to_json();
    for (const auto& [key, value] : j.items()) {
      if (!known.contains(key)) throw FormatError("config: unknown key '" + key + "'");
      try {
        assign(key, value);
      } catch (const nlohmann::json::exception& e) {
        throw FormatError("config: bad value for '" + key + "': " + e.what());
      }
    }
  }

  static TrainConfig from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.merge_json(j);
    return c;
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config " + path.string());
    try {
      merge_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError(path.string() + ": " + e.what());
    }
  }

 private:
  void assign(const std::string& key, const nlohmann::json& v) {
    if (key == "epochs") epochs = v.get<std::size_t>();
    else if (key == "batch_size") batch_size = v.get<std::size_t>();
    else if (key == "lr") lr = v.get<double>();
    else if (key == "lr_decay") lr_decay = v.get<double>();
    else if (key == "lr_decay_after") lr_decay_after = v.get<std::size_t>();
    else if (key == "adam_beta1") adam_beta1 = v.get<double>();
    else if (key == "adam_beta2") adam_beta2 = v.get<double>();
    else if (key == "adam_eps") adam_eps = v.get<double>();
    else if (key == "grad_clip") grad_clip = v.get<double>();
    else if (key == "dropout") dropout = v.get<double>();
    else if (key == "lambda_te") lambda_te = v.get<double>();
    else if (key == "lambda_td") lambda_td = v.get<double>();
    else if (key == "layers") layers = v.get<std::size_t>();
    else if (key == "heads") heads = v.get<std::size_t>();
    else if (key == "ff_width") ff_width = v.get<std::size_t>();
    else if (key == "max_len") max_len = v.get<std::size_t>();
    else if (key == "stfe_preset") stfe_preset = v.get<std::string>();
    else if (key == "paper_loss_mode") paper_loss_mode = v.get<bool>();
    else if (key == "attn_scaling") attn_scaling = v.get<bool>();
    else if (key == "augment_hflip") augment_hflip = v.get<bool>();
    else if (key == "beam_width") beam_width = v.get<std::size_t>();
    else if (key == "seed") seed = v.get<std::uint64_t>();
    else if (key == "ckpt") ckpt = v.get<std::string>();
    else if (key == "eval_split") eval_split = v.get<std::string>();
    else if (key == "eval_every") eval_every = v.get<std::size_t>();
  }
};

}  // namespace signflow
