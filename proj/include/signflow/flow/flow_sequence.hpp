#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <vector>

#include "signflow/core/binary.hpp"
#include "signflow/core/error.hpp"
#include "signflow/core/ndarray.hpp"
#include "signflow/flow/image.hpp"
#include "signflow/flow/optical_flow.hpp"

namespace signflow::flow {

// Encoded flow video: `frames` fields of height x width x 3 quantised codes,
// laid out (frame, y, x, channel).
struct FlowSequence {
  std::size_t frames = 0;
  std::size_t width = 0;
  std::size_t height = 0;
  double m_max = 1.0;
  std::vector<std::uint8_t> codes;
  std::size_t degenerate_pairs = 0;
  std::size_t padded_frames = 0;  // set by temporal resampling

  std::size_t frame_stride() const { return width * height * 3; }

  std::uint8_t& code(std::size_t t, std::size_t y, std::size_t x, std::size_t c) {
    return codes[((t * height + y) * width + x) * 3 + c];
  }
  std::uint8_t code(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return codes[((t * height + y) * width + x) * 3 + c];
  }

  // Model input: (frames, height, width, 3) with values k / 255.
  template <typename T>
  NdArray<T> to_tensor() const {
    NdArray<T> out(Shape{frames, height, width, 3});
    for (std::size_t i = 0; i < codes.size(); ++i) out[i] = static_cast<T>(codes[i] / 255.0);
    return out;
  }

  FlowField field(std::size_t t) const {
    std::vector<unsigned char> slice(codes.begin() + static_cast<long>(t * frame_stride()),
                                     codes.begin() + static_cast<long>((t + 1) * frame_stride()));
    return decode_flow(slice, width, height, m_max);
  }
};

struct VideoToFlowOptions {
  FlowParams params;
  std::size_t out_width = 227;
  std::size_t out_height = 227;
  double m_max = 8.0;
};

// Frames are resized to the output extent before flow estimation, so the
// velocities are measured in output pixels.
inline FlowSequence video_to_flow(const std::vector<Image>& frames, const VideoToFlowOptions& opts = {}) {
  if (frames.size() < 2)
    throw ValueError(signflow::detail::concat("video_to_flow: need at least 2 frames, got ",
                                              frames.size()));
  for (const auto& f : frames)
    if (!f.same_extent(frames.front()))
      throw ShapeError("video_to_flow: frames do not share spatial extents");
  FlowSequence seq;
  seq.frames = frames.size() - 1;
  seq.width = opts.out_width;
  seq.height = opts.out_height;
  seq.m_max = opts.m_max;
  seq.codes.reserve(seq.frames * seq.frame_stride());
  Image prev = resize(frames[0], opts.out_width, opts.out_height);
  for (std::size_t t = 1; t < frames.size(); ++t) {
    Image next = resize(frames[t], opts.out_width, opts.out_height);
    const FlowField f = compute_flow(prev, next, opts.params);
    if (f.degenerate) ++seq.degenerate_pairs;
    const auto enc = encode_flow(f, opts.m_max);
    seq.codes.insert(seq.codes.end(), enc.begin(), enc.end());
    prev = std::move(next);
  }
  return seq;
}

inline FlowSequence video_to_flow(const std::vector<Frame>& frames, const VideoToFlowOptions& opts = {}) {
  std::vector<Image> gray;
  gray.reserve(frames.size());
  for (const auto& f : frames) gray.push_back(f.luminance());
  return video_to_flow(gray, opts);
}

// ------------------------------------------------------------ cache file

inline constexpr std::uint32_t kFlowCacheVersion = 1;


inline void write_flow_cache(const std::filesystem::path& path, const FlowSequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write flow cache " + path.string());
  out.write("SFLW", 4);
  binary::put_u32(out, kFlowCacheVersion);
  binary::put_u32(out, static_cast<std::uint32_t>(seq.frames));
  binary::put_u32(out, static_cast<std::uint32_t>(seq.width));
  binary::put_u32(out, static_cast<std::uint32_t>(seq.height));
  binary::put_f64(out, seq.m_max);
  out.write(reinterpret_cast<const char*>(seq.codes.data()), static_cast<std::streamsize>(seq.codes.size()));
  if (!out) throw FormatError("flow cache: write failed for " + path.string());
}

inline FlowSequence read_flow_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open flow cache " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, "SFLW", 4) != 0)
    throw FormatError(path.string() + ": not a flow cache (bad magic)");
  const std::uint32_t version = binary::get_u32(in, "flow cache header");
  if (version != kFlowCacheVersion)
    throw FormatError(signflow::detail::concat(path.string(), ": unsupported flow cache version ", version));
  FlowSequence seq;
  seq.frames = binary::get_u32(in, "flow cache header");
  seq.width = binary::get_u32(in, "flow cache header");
  seq.height = binary::get_u32(in, "flow cache header");
  seq.m_max = binary::get_f64(in, "flow cache header");
  if (seq.frames == 0 || seq.width == 0 || seq.height == 0 || !(seq.m_max > 0))
    throw FormatError(path.string() + ": invalid flow cache header");
  seq.codes.resize(seq.frames * seq.frame_stride());
  in.read(reinterpret_cast<char*>(seq.codes.data()), static_cast<std::streamsize>(seq.codes.size()));
  if (in.gcount() != static_cast<std::streamsize>(seq.codes.size()))
    throw FormatError(path.string() + ": truncated flow data");
  return seq;
}

}  // namespace signflow::flow
