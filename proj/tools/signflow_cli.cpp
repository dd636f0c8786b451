#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "signflow/signflow.hpp"

using namespace signflow;
namespace fs = std::filesystem;

namespace {

// Flags shared by train/eval that override the config file when given.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::size_t> epochs, heads, layers, beam_width, ff_width, max_len, eval_every;
  std::optional<double> lr, lambda_te, lambda_td, grad_clip, dropout;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> ckpt, stfe, eval_split;
  bool paper_loss_mode = false;
  bool no_attn_scaling = false;
  bool hflip = false;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "JSON config file; flags take precedence")->check(CLI::ExistingFile);
    app.add_option("--epochs", epochs, "Training epochs");
    app.add_option("--lr", lr, "Initial learning rate");
    app.add_option("--heads", heads, "Attention heads per layer (C)");
    app.add_option("--layers", layers, "Encoder and decoder layers (B)");
    app.add_option("--lambda-te", lambda_te, "Recognition (CTC) loss weight");
    app.add_option("--lambda-td", lambda_td, "Translation loss weight");
    app.add_option("--beam-width", beam_width, "Beam width for decoding");
    app.add_option("--seed", seed, "Seed for initialisation, dropout and shuffling");
    app.add_option("--ckpt", ckpt, "Checkpoint path");
    app.add_option("--ff-width", ff_width, "Feed-forward width");
    app.add_option("--max-len", max_len, "Maximum sentence length M");
    app.add_option("--grad-clip", grad_clip, "Clip gradients to this global norm (0 = off)");
    app.add_option("--dropout", dropout, "Dropout rate");
    app.add_option("--stfe", stfe, "STFE preset: standard or toy");
    app.add_option("--eval-split", eval_split, "Split evaluated after each epoch");
    app.add_option("--eval-every", eval_every, "Evaluate every N epochs (0 = never)");
    app.add_flag("--paper-loss-mode", paper_loss_mode, "Use the 1 - P form of the CTC loss");
    app.add_flag("--no-attn-scaling", no_attn_scaling, "Unscaled dot-product attention scores");
    app.add_flag("--hflip", hflip, "Add horizontally flipped copies of training samples");
  }

  TrainConfig resolve() const {
    TrainConfig c;
    if (!config_path.empty()) c.merge_file(config_path);
    if (epochs) c.epochs = *epochs;
    if (heads) c.heads = *heads;
    if (layers) c.layers = *layers;
    if (beam_width) c.beam_width = *beam_width;
    if (ff_width) c.ff_width = *ff_width;
    if (max_len) c.max_len = *max_len;
    if (eval_every) c.eval_every = *eval_every;
    if (lr) c.lr = *lr;
    if (lambda_te) c.lambda_te = *lambda_te;
    if (lambda_td) c.lambda_td = *lambda_td;
    if (grad_clip) c.grad_clip = *grad_clip;
    if (dropout) c.dropout = *dropout;
    if (seed) c.seed = *seed;
    if (ckpt) c.ckpt = *ckpt;
    if (stfe) c.stfe_preset = *stfe;
    if (eval_split) c.eval_split = *eval_split;
    if (paper_loss_mode) c.paper_loss_mode = true;
    if (no_attn_scaling) c.attn_scaling = false;
    if (hflip) c.augment_hflip = true;
    c.validate();
    return c;
  }
};

template <typename T>
int run_train(const TrainConfig& config, const std::string& manifest_path, const std::string& log_path) {
  const auto manifest = DatasetManifest::load(manifest_path);
  std::cout << manifest.word_vocab.accounting() << "\n";
  Trainer<T> trainer(config, manifest);
  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path);
    if (!log) throw FormatError("cannot write log " + log_path);
  }
  try {
    trainer.train([&](const EpochLog& e) {
      std::cout << e.to_text() << std::endl;
      if (log) log << e.to_text() << std::endl;
    });
  } catch (const TrainingAborted& e) {
    std::cerr << "training aborted: " << e.what() << "\n";
    if (!config.ckpt.empty()) std::cerr << "last good checkpoint: " << config.ckpt << "\n";
    return 3;
  }
  if (!config.ckpt.empty()) std::cout << "checkpoint written to " << config.ckpt << "\n";
  return 0;
}

template <typename T>
int run_eval(const std::string& ckpt_path, const std::string& manifest_path, const std::string& split,
             std::optional<std::size_t> beam_width, const std::string& report_path) {
  const auto ckpt = Checkpoint::load(ckpt_path);
  const auto manifest = DatasetManifest::load(manifest_path);
  const auto report = evaluate_checkpoint<T>(ckpt, manifest, split, beam_width.value_or(ckpt.config.beam_width));
  if (report_path.empty()) {
    std::cout << report.to_text();
  } else {
    report.write(report_path);
    std::cout << "WER=" << report.wer << " BLEU4=" << report.bleu.bleu[3] << "\nreport written to " << report_path
              << "\n";
  }
  return 0;
}

template <typename T>
int run_dump(const std::string& ckpt_path, const std::string& manifest_path, const std::string& sample,
             const std::string& out_dir) {
  const auto ckpt = Checkpoint::load(ckpt_path);
  const auto manifest = DatasetManifest::load(manifest_path);
  Translator<T> model = model_from_checkpoint<T>(ckpt);
  const auto maps = dump_attention(model, manifest, sample, out_dir);
  std::cout << maps.size() << " attention maps written to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"signflow: sign language translation from optical flow"};
  app.require_subcommand(1);

  // flow
  auto* flow_cmd = app.add_subcommand("flow", "Compute and cache the encoded optical flow of a frame directory");
  std::string frames_dir, flow_out;
  std::size_t out_w = 227, out_h = 227;
  double m_max = 8.0;
  bool matching = false;
  flow_cmd->add_option("--frames", frames_dir, "Directory of PGM/PPM frames")->required()->check(CLI::ExistingDirectory);
  flow_cmd->add_option("--out", flow_out, "Output flow cache")->required();
  flow_cmd->add_option("--width", out_w, "Output width");
  flow_cmd->add_option("--height", out_h, "Output height");
  flow_cmd->add_option("--m-max", m_max, "Velocity normalisation constant");
  flow_cmd->add_flag("--matching", matching, "Seed large displacements with block matching");

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic toy corpus");
  std::string synth_out;
  SyntheticOptions synth;
  synth_cmd->add_option("--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("--sentences", synth.sentences, "Number of distinct sentences");
  synth_cmd->add_option("--seed", synth.seed, "Generator seed");
  synth_cmd->add_option("--test-fraction", synth.test_fraction, "Fraction of sentences tagged test");
  synth_cmd->add_flag("--rendered", synth.rendered, "Render frames and estimate flow instead of analytic fields");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train the joint recognition and translation model");
  ConfigFlags train_flags;
  std::string train_manifest, train_log, precision = "double";
  train_cmd->add_option("--manifest", train_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--log", train_log, "Also write the per-epoch log here");
  train_cmd->add_option("--precision", precision, "float or double")->check(CLI::IsMember({"float", "double"}));
  train_flags.attach(*train_cmd);

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint and write a metric report");
  std::string eval_ckpt, eval_manifest, eval_split = "test", eval_report;
  std::optional<std::size_t> eval_beam;
  eval_cmd->add_option("--ckpt", eval_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--manifest", eval_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--split", eval_split, "Split to evaluate");
  eval_cmd->add_option("--beam-width", eval_beam, "Beam width (default from the checkpoint config)");
  eval_cmd->add_option("--report", eval_report, "Report file (stdout when omitted)");
  eval_cmd->add_option("--precision", precision, "float or double")->check(CLI::IsMember({"float", "double"}));

  // dump-attention
  auto* dump_cmd = app.add_subcommand("dump-attention", "Write every attention map for one sample");
  std::string dump_ckpt, dump_manifest, dump_sample, dump_out;
  dump_cmd->add_option("--ckpt", dump_ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  dump_cmd->add_option("--manifest", dump_manifest, "Dataset manifest")->required()->check(CLI::ExistingFile);
  dump_cmd->add_option("--sample", dump_sample, "Sample id")->required();
  dump_cmd->add_option("--out", dump_out, "Output directory")->required();

  // grad-check
  auto* grad_cmd = app.add_subcommand("grad-check", "Run the finite-difference gradient suites");
  std::size_t grad_seeds = 20;
  std::uint64_t grad_base = 1;
  std::string grad_module;
  grad_cmd->add_option("--seeds", grad_seeds, "Random draws per module");
  grad_cmd->add_option("--seed", grad_base, "First seed");
  grad_cmd->add_option("--module", grad_module, "Run a single module");

  // shapes
  auto* shapes_cmd = app.add_subcommand("shapes", "Print the tensor shape chain of the full model");
  ModelConfig shape_cfg;
  shapes_cmd->add_option("--heads", shape_cfg.heads, "Attention heads");
  shapes_cmd->add_option("--layers", shape_cfg.layers, "Encoder and decoder layers");
  shapes_cmd->add_option("--glosses", shape_cfg.gloss_classes, "Gloss classes including the blank");
  shapes_cmd->add_option("--vocab", shape_cfg.vocab, "Word vocabulary size J");
  shapes_cmd->add_option("--max-len", shape_cfg.max_len, "Maximum sentence length M");
  shapes_cmd->add_option("--stfe", shape_cfg.stfe_preset, "STFE preset: standard or toy");

  if (argc < 2) {
    std::cerr << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*flow_cmd) {
      flow::VideoToFlowOptions opts;
      opts.out_width = out_w;
      opts.out_height = out_h;
      opts.m_max = m_max;
      opts.params.descriptor_matching = matching;
      const auto frames = flow::read_frame_directory(frames_dir);
      const auto seq = flow::video_to_flow(frames, opts);
      flow::write_flow_cache(flow_out, seq);
      std::cout << seq.frames << " fields (" << seq.width << "x" << seq.height << "), " << seq.degenerate_pairs
                << " degenerate pairs, written to " << flow_out << "\n";
    } else if (*synth_cmd) {
      auto corpus = generate_synthetic(SyntheticSpec{}, synth);
      const auto path = corpus.write(synth_out);
      std::cout << corpus.manifest.samples.size() << " samples, |G| = " << corpus.manifest.gloss_vocab.gloss_count()
                << ", " << corpus.manifest.word_vocab.accounting() << "\nmanifest: " << path.string() << "\n";
    } else if (*train_cmd) {
      const TrainConfig config = train_flags.resolve();
      return precision == "float" ? run_train<float>(config, train_manifest, train_log)
                                  : run_train<double>(config, train_manifest, train_log);
    } else if (*eval_cmd) {
      return precision == "float" ? run_eval<float>(eval_ckpt, eval_manifest, eval_split, eval_beam, eval_report)
                                  : run_eval<double>(eval_ckpt, eval_manifest, eval_split, eval_beam, eval_report);
    } else if (*dump_cmd) {
      return run_dump<double>(dump_ckpt, dump_manifest, dump_sample, dump_out);
    } else if (*grad_cmd) {
      bool ok = true;
      for (const auto& m : grad_suite_modules()) {
        if (!grad_module.empty() && m != grad_module) continue;
        const auto e = run_grad_module(m, grad_seeds, grad_base);
        std::cout << m << ": " << e.report.summary() << " seeds=" << e.seeds << " time=" << e.seconds << "s\n";
        ok = ok && e.report.passed;
      }
      return ok ? 0 : 1;
    } else if (*shapes_cmd) {
      std::cout << pipeline_shape_report(shape_cfg);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
