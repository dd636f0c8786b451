#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <vector>

#include "signflow/flow/flow_sequence.hpp"
#include "signflow/flow/optical_flow.hpp"

using namespace signflow;
using namespace signflow::flow;

namespace {

// Smooth texture evaluated analytically, so a shifted copy is exact.
double texture(double x, double y) {
  return 0.5 + 0.18 * std::sin(0.31 * x + 0.12 * y) + 0.14 * std::cos(0.17 * x - 0.27 * y) +
         0.1 * std::sin(0.45 * x + 0.38 * y + 1.0);
}

Image shifted_texture(std::size_t w, std::size_t h, double dx, double dy) {
  Image img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) img.at(x, y) = texture(x - dx, y - dy);
  return img;
}

struct Medians {
  double u, v;
};

Medians interior_median(const FlowField& f, std::size_t margin) {
  std::vector<double> us, vs;
  for (std::size_t y = margin; y + margin < f.height; ++y)
    for (std::size_t x = margin; x + margin < f.width; ++x) {
      us.push_back(f.u[y * f.width + x]);
      vs.push_back(f.v[y * f.width + x]);
    }
  auto med = [](std::vector<double> v) {
    std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
    return v[v.size() / 2];
  };
  return {med(us), med(vs)};
}

}  // namespace

TEST(ComputeFlow, IdenticalFramesGiveZeroField) {
  const Image a = shifted_texture(48, 40, 0, 0);
  const FlowField f = compute_flow(a, a);
  EXPECT_FALSE(f.degenerate);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    EXPECT_EQ(f.u[i], 0.0);
    EXPECT_EQ(f.v[i], 0.0);
  }
}

TEST(ComputeFlow, ConstantFramesAreFlaggedDegenerate) {
  const Image a(32, 32, 0.4), b(32, 32, 0.6);
  const FlowField f = compute_flow(a, b);
  EXPECT_TRUE(f.degenerate);
  EXPECT_TRUE(std::all_of(f.u.begin(), f.u.end(), [](double v) { return v == 0.0; }));
  EXPECT_TRUE(std::all_of(f.v.begin(), f.v.end(), [](double v) { return v == 0.0; }));
}

TEST(ComputeFlow, RejectsMismatchedOrNonFiniteFrames) {
  EXPECT_THROW(compute_flow(Image(8, 8, 0.1), Image(9, 8, 0.1)), ShapeError);
  Image bad = shifted_texture(16, 16, 0, 0);
  bad.at(3, 3) = std::nan("");
  EXPECT_THROW(compute_flow(bad, shifted_texture(16, 16, 0, 0)), ValueError);
}

TEST(ComputeFlow, RecoversTwoPixelTranslation) {
  const Image a = shifted_texture(64, 64, 0, 0);
  const Image b = shifted_texture(64, 64, 2, 0);
  const Medians m = interior_median(compute_flow(a, b), 8);
  EXPECT_NEAR(m.u, 2.0, 0.5);
  EXPECT_NEAR(m.v, 0.0, 0.5);
}

struct Shift {
  double dx, dy;
};

class TranslationSweep : public ::testing::TestWithParam<Shift> {};

TEST_P(TranslationSweep, MedianEndpointErrorWithinHalfPixel) {
  const Shift s = GetParam();
  const Image a = shifted_texture(80, 80, 0, 0);
  const Image b = shifted_texture(80, 80, s.dx, s.dy);
  FlowParams p;
  p.levels = 4;
  const FlowField f = compute_flow(a, b, p);
  std::vector<double> epe;
  for (std::size_t y = 12; y + 12 < f.height; ++y)
    for (std::size_t x = 12; x + 12 < f.width; ++x)
      epe.push_back(std::hypot(f.u[y * f.width + x] - s.dx, f.v[y * f.width + x] - s.dy));
  std::nth_element(epe.begin(), epe.begin() + static_cast<long>(epe.size() / 2), epe.end());
  EXPECT_LE(epe[epe.size() / 2], 0.5) << "shift (" << s.dx << ", " << s.dy << ")";
}

INSTANTIATE_TEST_SUITE_P(UpToEightPixels, TranslationSweep,
                         ::testing::Values(Shift{1, 0}, Shift{0, -3}, Shift{4, 2.5}, Shift{-5, -5},
                                           Shift{8, 0}, Shift{0, 8}, Shift{-6, 5}));

TEST(ComputeFlow, ReverseOrderNegatesFlow) {
  const Image a = shifted_texture(64, 64, 0, 0);
  const Image b = shifted_texture(64, 64, 3, -2);
  const Medians fwd = interior_median(compute_flow(a, b), 10);
  const Medians bwd = interior_median(compute_flow(b, a), 10);
  EXPECT_NEAR(fwd.u, -bwd.u, 0.5);
  EXPECT_NEAR(fwd.v, -bwd.v, 0.5);
}

TEST(ComputeFlow, DescriptorMatchingSeedsLargeMotion) {
  // Two levels alone cannot reach a 10 px motion; matching supplies the seed.
  const Image a = shifted_texture(96, 96, 0, 0);
  const Image b = shifted_texture(96, 96, 10, -6);
  FlowParams p;
  p.levels = 2;
  p.descriptor_matching = true;
  const Medians m = interior_median(compute_flow(a, b, p), 16);
  EXPECT_NEAR(m.u, 10.0, 0.5);
  EXPECT_NEAR(m.v, -6.0, 0.5);
}

TEST(EncodeFlow, ZeroFieldMapsToMidpoint) {
  const FlowField f(4, 3);
  const auto codes = encode_flow(f, 6.0);
  for (std::size_t i = 0; i < 12; ++i) {
    EXPECT_NEAR(codes[3 * i] / 255.0, 0.5, 0.5 / 255);
    EXPECT_NEAR(codes[3 * i + 1] / 255.0, 0.5, 0.5 / 255);
    EXPECT_EQ(codes[3 * i + 2], 0);
  }
}

TEST(EncodeFlow, UniformMaxMotionHitsEndpoints) {
  FlowField f(3, 3);
  std::fill(f.u.begin(), f.u.end(), 6.0);
  const auto codes = encode_flow(f, 6.0);
  for (std::size_t i = 0; i < 9; ++i) {
    EXPECT_EQ(codes[3 * i], 255);
    EXPECT_NEAR(codes[3 * i + 1] / 255.0, 0.5, 0.5 / 255);
    EXPECT_EQ(codes[3 * i + 2], 255);
  }
}

TEST(EncodeFlow, RoundTripWithinQuantisationBound) {
  const double m_max = 5.0;
  FlowField f(16, 16);
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    f.u[i] = m_max * std::sin(0.37 * static_cast<double>(i));
    f.v[i] = m_max * std::cos(0.91 * static_cast<double>(i));
  }
  const FlowField back = decode_flow(encode_flow(f, m_max), 16, 16, m_max);
  const double bound = 2.0 * m_max / 255.0;
  for (std::size_t i = 0; i < f.u.size(); ++i) {
    EXPECT_LE(std::abs(back.u[i] - f.u[i]), bound);
    EXPECT_LE(std::abs(back.v[i] - f.v[i]), bound);
  }
}

TEST(EncodeFlow, RejectsNonFiniteAndBadScale) {
  FlowField f(2, 2);
  EXPECT_THROW(encode_flow(f, 0.0), ValueError);
  f.u[1] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(encode_flow(f, 1.0), ValueError);
}

TEST(VideoToFlow, ProducesOneFieldPerFramePair) {
  VideoToFlowOptions opts;
  opts.out_width = 24;
  opts.out_height = 20;
  opts.params.levels = 2;
  opts.params.warp_iterations = 1;
  opts.params.inner_iterations = 1;
  for (std::size_t t : {2u, 5u}) {
    std::vector<Image> frames;
    for (std::size_t i = 0; i < t; ++i) frames.push_back(shifted_texture(30, 26, i * 0.5, 0));
    const FlowSequence seq = video_to_flow(frames, opts);
    EXPECT_EQ(seq.frames, t - 1);
    EXPECT_EQ(seq.codes.size(), (t - 1) * 24 * 20 * 3);
    EXPECT_EQ(seq.to_tensor<double>().shape(), (Shape{t - 1, 20, 24, 3}));
  }
}

TEST(VideoToFlow, StaticVideoEncodesZeroMotion) {
  VideoToFlowOptions opts;
  opts.out_width = 20;
  opts.out_height = 20;
  const std::vector<Image> frames(4, shifted_texture(20, 20, 0, 0));
  const FlowSequence seq = video_to_flow(frames, opts);
  ASSERT_EQ(seq.frames, 3u);
  for (std::size_t i = 0; i < seq.codes.size(); i += 3) {
    EXPECT_EQ(seq.codes[i], quantize(0.5));
    EXPECT_EQ(seq.codes[i + 1], quantize(0.5));
    EXPECT_EQ(seq.codes[i + 2], 0);
  }
}

TEST(VideoToFlow, RejectsSingleFrame) {
  EXPECT_THROW(video_to_flow(std::vector<Image>{Image(8, 8, 0.2)}), ValueError);
}

TEST(FlowCache, RoundTripsThroughDisk) {
  FlowSequence seq;
  seq.frames = 2;
  seq.width = 3;
  seq.height = 2;
  seq.m_max = 7.25;
  for (std::size_t i = 0; i < 36; ++i) seq.codes.push_back(static_cast<std::uint8_t>(i * 7));
  const auto path = std::filesystem::temp_directory_path() / "signflow_cache_test.sflw";
  write_flow_cache(path, seq);
  EXPECT_EQ(std::filesystem::file_size(path), 4u + 4 * 4 + 8 + 36);
  const FlowSequence back = read_flow_cache(path);
  EXPECT_EQ(back.frames, 2u);
  EXPECT_EQ(back.width, 3u);
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.m_max, 7.25);
  EXPECT_EQ(back.codes, seq.codes);
  std::filesystem::remove(path);
}

TEST(FlowCache, RejectsBadMagic) {
  const auto path = std::filesystem::temp_directory_path() / "signflow_bad_cache.sflw";
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOPE and some bytes";
  }
  EXPECT_THROW(read_flow_cache(path), FormatError);
  std::filesystem::remove(path);
}

TEST(FrameIo, PgmRoundTrip) {
  Image img = shifted_texture(9, 7, 0, 0);
  const auto path = std::filesystem::temp_directory_path() / "signflow_frame.pgm";
  write_pgm(path, img);
  const Frame f = read_pnm(path);
  EXPECT_EQ(f.width, 9u);
  EXPECT_EQ(f.height, 7u);
  EXPECT_EQ(f.channels, 1u);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(f.pixels[i], img.pixels[i], 0.5 / 255 + 1e-12);
  std::filesystem::remove(path);
}
