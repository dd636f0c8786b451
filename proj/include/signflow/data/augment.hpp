#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>

#include "signflow/core/error.hpp"
#include "signflow/flow/flow_sequence.hpp"

namespace signflow {

// Fixed-length policy. Longer inputs take field floor(i * n / T); shorter
// ones keep every field and repeat the last one, recording the padding.
inline flow::FlowSequence resample_temporal(const flow::FlowSequence& seq, std::size_t target) {
  if (seq.frames == 0) throw ValueError("resample_temporal: sequence has no fields");
  if (target == 0) throw ValueError("resample_temporal: target length must be positive");
  flow::FlowSequence out = seq;
  out.frames = target;
  out.codes.resize(target * seq.frame_stride());
  const std::size_t n = seq.frames, stride = seq.frame_stride();
  for (std::size_t i = 0; i < target; ++i) {
    const std::size_t src = n >= target ? i * n / target : std::min(i, n - 1);
    std::copy_n(seq.codes.begin() + static_cast<long>(src * stride), stride,
                out.codes.begin() + static_cast<long>(i * stride));
  }
  out.padded_frames = n >= target ? 0 : target - n;
  return out;
}

// Left-right mirror. Horizontal velocity changes sign, which on the code
// scale (dx / m + 1) / 2 is k -> 255 - k; dy and magnitude are unchanged.
inline flow::FlowSequence augment_hflip(const flow::FlowSequence& seq) {
  flow::FlowSequence out = seq;
  for (std::size_t t = 0; t < seq.frames; ++t)
    for (std::size_t y = 0; y < seq.height; ++y)
      for (std::size_t x = 0; x < seq.width; ++x) {
        const std::size_t xs = seq.width - 1 - x;
        out.code(t, y, x, 0) = static_cast<std::uint8_t>(255 - seq.code(t, y, xs, 0));
        out.code(t, y, x, 1) = seq.code(t, y, xs, 1);
        out.code(t, y, x, 2) = seq.code(t, y, xs, 2);
      }
  return out;
}

}  // namespace signflow
