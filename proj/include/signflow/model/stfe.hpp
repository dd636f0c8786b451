#pragma once

#include <cstddef>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "signflow/autograd/ops.hpp"
#include "signflow/autograd/tensor.hpp"
#include "signflow/core/error.hpp"
#include "signflow/nn/layers.hpp"

namespace signflow {

// One volumetric block: conv3d -> batch norm -> relu -> max pool.
struct StfeBlockConfig {
  Triple conv_kernel{1, 1, 1};
  Triple conv_stride{1, 1, 1};
  Triple conv_pad{0, 0, 0};
  std::size_t channels = 1;
  bool pool = true;
  Triple pool_kernel{1, 1, 1};
  Triple pool_stride{1, 1, 1};
  Triple pool_pad{0, 0, 0};
  Shape expected;  // documented block output; empty means unchecked
};

struct StfeConfig {
  Shape input;  // (T, H, W, C)
  std::vector<StfeBlockConfig> blocks;

  // Six blocks solved so that a (128, 227, 227, 3) flow video lands on the
  // shape chain 63x57x57x64 -> 62x28x28x32 -> 61x14x14x64 -> 60x7x7x64 ->
  // 59x3x3x128 -> 58x1x1x128.
  static StfeConfig standard() {
    StfeConfig c;
    c.input = {128, 227, 227, 3};
    auto block = [](Triple ck, Triple cs, Triple cp, std::size_t ch, Triple pp, Shape expected) {
      StfeBlockConfig b;
      b.conv_kernel = ck;
      b.conv_stride = cs;
      b.conv_pad = cp;
      b.channels = ch;
      b.pool_kernel = {1, 3, 3};
      b.pool_stride = {1, 2, 2};
      b.pool_pad = pp;
      b.expected = std::move(expected);
      return b;
    };
    const Triple k233{2, 3, 3}, s1{1, 1, 1}, p011{0, 1, 1}, p0{0, 0, 0};
    c.blocks.push_back(block({3, 3, 3}, {2, 2, 2}, p0, 64, p011, {63, 57, 57, 64}));
    c.blocks.push_back(block(k233, s1, p011, 32, p0, {62, 28, 28, 32}));
    c.blocks.push_back(block(k233, s1, p011, 64, p011, {61, 14, 14, 64}));
    c.blocks.push_back(block(k233, s1, p011, 64, p011, {60, 7, 7, 64}));
    c.blocks.push_back(block(k233, s1, p011, 128, p0, {59, 3, 3, 128}));
    c.blocks.push_back(block(k233, s1, p011, 128, p0, {58, 1, 1, 128}));
    return c;
  }

  // Same block structure on a 16-frame 65x65 input:
  // 7x16x16x8 -> 6x8x8x16 -> 5x1x1x32, giving (5, 32).
  static StfeConfig toy() {
    StfeConfig c;
    c.input = {16, 65, 65, 3};
    StfeBlockConfig b1;
    b1.conv_kernel = {3, 3, 3};
    b1.conv_stride = {2, 2, 2};
    b1.channels = 8;
    b1.pool_kernel = {1, 3, 3};
    b1.pool_stride = {1, 2, 2};
    b1.pool_pad = {0, 1, 1};
    b1.expected = {7, 16, 16, 8};
    StfeBlockConfig b2 = b1;
    b2.conv_kernel = {2, 3, 3};
    b2.conv_stride = {1, 1, 1};
    b2.conv_pad = {0, 1, 1};
    b2.channels = 16;
    b2.expected = {6, 8, 8, 16};
    StfeBlockConfig b3 = b2;
    b3.channels = 32;
    b3.pool_kernel = {1, 8, 8};
    b3.pool_stride = {1, 8, 8};
    b3.pool_pad = {0, 0, 0};
    b3.expected = {5, 1, 1, 32};
    c.blocks = {b1, b2, b3};
    return c;
  }

  // Single 1x1x1 convolution without pooling; preserves the input shape.
  static StfeConfig identity(Shape input) {
    StfeConfig c;
    c.input = input;
    StfeBlockConfig b;
    b.channels = input.at(3);
    b.pool = false;
    c.blocks = {b};
    return c;
  }
};

inline std::string triple_string(const Triple& t) {
  std::ostringstream oss;
  oss << "(" << t[0] << ", " << t[1] << ", " << t[2] << ")";
  return oss.str();
}

// Pure shape arithmetic over the block chain. Throws ShapeError naming the
// first block whose windows do not fit or whose output differs from its
// documented shape.
inline std::vector<Shape> stfe_shape_trace(const StfeConfig& config) {
  if (config.input.size() != 4) throw ShapeError("stfe: input must be (T, H, W, C), got " + shape_string(config.input));
  if (config.blocks.empty()) throw ShapeError("stfe: config has no blocks");
  std::vector<Shape> trace;
  Shape cur = config.input;
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const auto& b = config.blocks[i];
    Shape next(4);
    for (int d = 0; d < 3; ++d) {
      std::size_t n = window_output(cur[d], b.conv_kernel[d], b.conv_stride[d], b.conv_pad[d]);
      if (n > 0 && b.pool) {
        if (b.pool_pad[d] * 2 > b.pool_kernel[d]) n = 0;
        else n = window_output(n, b.pool_kernel[d], b.pool_stride[d], b.pool_pad[d]);
      }
      if (n == 0)
        throw ShapeError(detail::concat("stfe block ", i + 1, ": windows do not fit input ",
                                        shape_string(cur), " (conv ", triple_string(b.conv_kernel),
                                        ", pool ", triple_string(b.pool_kernel), ")"));
      next[d] = n;
    }
    next[3] = b.channels;
    if (b.channels == 0) throw ShapeError(detail::concat("stfe block ", i + 1, ": zero channels"));
    if (!b.expected.empty() && b.expected != next)
      throw ShapeError(detail::concat("stfe block ", i + 1, ": expected ", shape_string(b.expected),
                                      ", configuration yields ", shape_string(next)));
    trace.push_back(next);
    cur = next;
  }
  return trace;
}

// (L, d) after flattening the spatial and channel axes of the last block.
inline Shape stfe_output_shape(const StfeConfig& config) {
  const Shape last = stfe_shape_trace(config).back();
  return {last[0], last[1] * last[2] * last[3]};
}

// Human-readable table of the solved per-block parameters.
inline std::string stfe_conformance_report(const StfeConfig& config) {
  const auto trace = stfe_shape_trace(config);
  std::ostringstream oss;
  oss << "input " << shape_string(config.input) << "\n";
  for (std::size_t i = 0; i < config.blocks.size(); ++i) {
    const auto& b = config.blocks[i];
    oss << "block " << i + 1 << ": conv k" << triple_string(b.conv_kernel) << " s"
        << triple_string(b.conv_stride) << " p" << triple_string(b.conv_pad) << " -> " << b.channels
        << " ch";
    if (b.pool)
      oss << "; pool k" << triple_string(b.pool_kernel) << " s" << triple_string(b.pool_stride) << " p"
          << triple_string(b.pool_pad);
    oss << "; output " << shape_string(trace[i]) << "\n";
  }
  oss << "reshape -> " << shape_string(stfe_output_shape(config)) << "\n";
  return oss.str();
}

template <typename T>
struct StfeBlock {
  Tensor<T> weight;  // (kT, kH, kW, Cin, Cout)
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormStats<T> stats;
};

template <typename T>
class Stfe {
 public:
  Stfe() = default;
  Stfe(StfeConfig config, std::mt19937_64& rng) : config_(std::move(config)) {
    trace_ = stfe_shape_trace(config_);
    std::size_t cin = config_.input[3];
    for (const auto& b : config_.blocks) {
      StfeBlock<T> blk;
      const std::size_t fan_in = b.conv_kernel[0] * b.conv_kernel[1] * b.conv_kernel[2] * cin;
      blk.weight = Tensor<T>::parameter(he_uniform<T>(
          Shape{b.conv_kernel[0], b.conv_kernel[1], b.conv_kernel[2], cin, b.channels}, fan_in, rng));
      blk.gamma = Tensor<T>::parameter(NdArray<T>(Shape{b.channels}, T{1}));
      blk.beta = Tensor<T>::parameter(NdArray<T>(Shape{b.channels}));
      blk.stats = BatchNormStats<T>(b.channels);
      blocks_.push_back(std::move(blk));
      cin = b.channels;
    }
  }

  const StfeConfig& config() const { return config_; }
  const std::vector<Shape>& shape_trace() const { return trace_; }
  Shape output_shape() const { return {trace_.back()[0], trace_.back()[1] * trace_.back()[2] * trace_.back()[3]}; }

  // x: (T, H, W, C) -> (L, d). `block_outputs`, when given, receives each
  // block's output shape.
  Tensor<T> forward(const Tensor<T>& x, const ForwardContext<T>& ctx,
                    std::vector<Shape>* block_outputs = nullptr) {
    if (x.shape() != config_.input)
      throw ShapeError("stfe: expected input " + shape_string(config_.input) + ", got " + shape_string(x.shape()));
    Tensor<T> h = x;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const auto& c = config_.blocks[i];
      auto& b = blocks_[i];
      h = conv3d(h, b.weight, Tensor<T>(), c.conv_stride, c.conv_pad);
      h = batch_norm(h, b.gamma, b.beta, b.stats, ctx.training);
      h = relu(h);
      if (c.pool) h = max_pool3d(h, c.pool_kernel, c.pool_stride, c.pool_pad);
      if (block_outputs) block_outputs->push_back(h.shape());
    }
    return reshape(h, output_shape());
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = prefix + ".block" + std::to_string(i + 1);
      out.push_back({p + ".conv", blocks_[i].weight});
      out.push_back({p + ".bn.gamma", blocks_[i].gamma});
      out.push_back({p + ".bn.beta", blocks_[i].beta});
    }
  }

  void collect_buffers(BufferList<T>& out, const std::string& prefix) {
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      const std::string p = prefix + ".block" + std::to_string(i + 1);
      out.push_back({p + ".bn.running_mean", &blocks_[i].stats.running_mean});
      out.push_back({p + ".bn.running_var", &blocks_[i].stats.running_var});
    }
  }

  std::vector<StfeBlock<T>>& blocks() { return blocks_; }

 private:
  StfeConfig config_;
  std::vector<Shape> trace_;
  std::vector<StfeBlock<T>> blocks_;
};

}  // namespace signflow
