#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "signflow/data/augment.hpp"
#include "signflow/data/manifest.hpp"
#include "signflow/data/synthetic.hpp"

using namespace signflow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("signflow_data_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Field t carries the value t in every code so resampled indices are visible.
flow::FlowSequence indexed_sequence(std::size_t n) {
  flow::FlowSequence s;
  s.frames = n;
  s.width = 2;
  s.height = 1;
  s.m_max = 4.0;
  for (std::size_t t = 0; t < n; ++t) s.codes.insert(s.codes.end(), s.frame_stride(), static_cast<std::uint8_t>(t));
  return s;
}

std::vector<std::size_t> source_indices(const flow::FlowSequence& s) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < s.frames; ++t) out.push_back(s.code(t, 0, 0, 0));
  return out;
}

flow::FlowSequence uniform_sequence(double dx, double dy, double m_max) {
  flow::FlowField f(9, 7);
  std::fill(f.u.begin(), f.u.end(), dx);
  std::fill(f.v.begin(), f.v.end(), dy);
  flow::FlowSequence s;
  s.frames = 2;
  s.width = 9;
  s.height = 7;
  s.m_max = m_max;
  for (int t = 0; t < 2; ++t) {
    const auto enc = flow::encode_flow(f, m_max);
    s.codes.insert(s.codes.end(), enc.begin(), enc.end());
  }
  return s;
}

double median(std::vector<double> v) {
  std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
  return v[v.size() / 2];
}

DatasetManifest toy_manifest(std::size_t n) {
  DatasetManifest m;
  m.m_max = 6.0;
  m.frames = 16;
  m.gloss_vocab = GlossVocabulary::from_glosses({"I", "EAT", "APPLE", "YOU"});
  m.word_vocab = WordVocabulary::from_words({"i", "eat", "the", "apple", "you"});
  for (std::size_t i = 0; i < n; ++i)
    m.samples.push_back({"s" + std::to_string(i), "flow/s" + std::to_string(i) + ".sflw",
                         {i % 2 ? "YOU" : "I", "EAT", "APPLE"}, {i % 2 ? "you" : "i", "eat", "the", "apple"},
                         i < 8 ? "train" : "test"});
  return m;
}

void write_caches(const DatasetManifest& m, const fs::path& dir, std::size_t frames = 10) {
  fs::create_directories(dir / "flow");
  for (const auto& s : m.samples) {
    auto seq = indexed_sequence(frames);
    seq.m_max = m.m_max;
    flow::write_flow_cache(dir / s.flow_path, seq);
  }
}

}  // namespace

// ------------------------------------------------------------ resampling

TEST(ResampleTemporal, ShortSequenceRepeatPadsLastField) {
  const auto out = resample_temporal(indexed_sequence(119), 128);
  ASSERT_EQ(out.frames, 128u);
  EXPECT_EQ(out.padded_frames, 9u);
  const auto idx = source_indices(out);
  for (std::size_t i = 0; i < 119; ++i) EXPECT_EQ(idx[i], i);
  for (std::size_t i = 119; i < 128; ++i) EXPECT_EQ(idx[i], 118u);
}

TEST(ResampleTemporal, SameLengthIsIdentity) {
  const auto in = indexed_sequence(16);
  const auto out = resample_temporal(in, 16);
  EXPECT_EQ(out.codes, in.codes);
  EXPECT_EQ(out.padded_frames, 0u);
}

TEST(ResampleTemporal, DoubleLengthTakesEveryOtherField) {
  const auto idx = source_indices(resample_temporal(indexed_sequence(32), 16));
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(idx[i], 2 * i);
}

TEST(ResampleTemporal, FloorIndexRule) {
  const auto idx = source_indices(resample_temporal(indexed_sequence(7), 3));
  EXPECT_EQ(idx, (std::vector<std::size_t>{0, 2, 4}));  // floor(i * 7 / 3)
}

TEST(ResampleTemporal, AlwaysReturnsTargetLength) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng() % 200, target = 1 + rng() % 200;
    const auto out = resample_temporal(indexed_sequence(n), target);
    EXPECT_EQ(out.frames, target);
    EXPECT_EQ(out.codes.size(), target * out.frame_stride());
    EXPECT_EQ(out.padded_frames, n >= target ? 0u : target - n);
  }
}

TEST(ResampleTemporal, RejectsEmptySequence) {
  flow::FlowSequence empty;
  empty.width = empty.height = 1;
  EXPECT_THROW(resample_temporal(empty, 4), ValueError);
}

// ------------------------------------------------------------ flipping

TEST(HorizontalFlip, IsAnInvolution) {
  std::mt19937_64 rng(11);
  flow::FlowSequence s;
  s.frames = 3;
  s.width = 13;
  s.height = 5;
  s.m_max = 6.0;
  s.codes.resize(s.frames * s.frame_stride());
  for (auto& c : s.codes) c = static_cast<std::uint8_t>(rng() % 256);
  EXPECT_EQ(augment_hflip(augment_hflip(s)).codes, s.codes);
}

TEST(HorizontalFlip, RightwardBecomesLeftward) {
  const auto s = uniform_sequence(2.5, -1.0, 6.0);
  const auto f = augment_hflip(s);
  for (std::size_t t = 0; t < s.frames; ++t)
    for (std::size_t y = 0; y < s.height; ++y)
      for (std::size_t x = 0; x < s.width; ++x) {
        EXPECT_EQ(f.code(t, y, x, 0), 255 - s.code(t, y, x, 0));
        EXPECT_EQ(f.code(t, y, x, 1), s.code(t, y, x, 1));
        EXPECT_EQ(f.code(t, y, x, 2), s.code(t, y, x, 2));
      }
  const auto field = f.field(0);
  for (double u : field.u) EXPECT_NEAR(u, -2.5, 6.0 / 255.0);
  for (double v : field.v) EXPECT_NEAR(v, -1.0, 6.0 / 255.0);
}

TEST(HorizontalFlip, MirrorsPixelPositions) {
  auto s = uniform_sequence(0.0, 0.0, 6.0);
  s.code(0, 3, 1, 2) = 200;
  const auto f = augment_hflip(s);
  EXPECT_EQ(f.code(0, 3, s.width - 2, 2), 200);
  EXPECT_EQ(f.code(0, 3, 1, 2), s.code(0, 3, 0, 2));
}

TEST(HorizontalFlip, LeftMovingBlobFlipsToRightMoving) {
  const double m = 6.0;
  const double cx = 30.0, cy = 20.0, r = 6.0;
  const auto field = analytic_blob_field(cx, cy, -3.0, 1.0, r, 64, 48);
  flow::FlowSequence s;
  s.frames = 1;
  s.width = 64;
  s.height = 48;
  s.m_max = m;
  s.codes = flow::encode_flow(field, m);
  const auto flipped = augment_hflip(s).field(0);
  const auto original = s.field(0);
  // Decode-and-compare: the mirrored disc sits at x' = W - 1 - x.
  std::vector<double> before, after;
  for (std::size_t y = 0; y < 48; ++y)
    for (std::size_t x = 0; x < 64; ++x)
      if (std::hypot(static_cast<double>(x) - cx, static_cast<double>(y) - cy) <= r) {
        before.push_back(original.u[y * 64 + x]);
        after.push_back(flipped.u[y * 64 + (63 - x)]);
      }
  ASSERT_FALSE(before.empty());
  EXPECT_NEAR(median(after), -median(before), 2.0 * m / 255.0);
  EXPECT_GT(median(after), 2.9);
}

// ------------------------------------------------------------ manifest

TEST(Manifest, ToyManifestLoads) {
  const auto dir = scratch("toy");
  const auto m = toy_manifest(10);
  write_caches(m, dir);
  m.save(dir / "manifest.tsv");
  const auto loaded = DatasetManifest::load(dir / "manifest.tsv");
  EXPECT_EQ(loaded.samples.size(), 10u);
  EXPECT_EQ(loaded.gloss_vocab.size(), 5u);  // four glosses plus blank
  EXPECT_EQ(loaded.word_vocab.size(), 8u);   // five words plus three specials
  EXPECT_EQ(loaded.m_max, 6.0);
  EXPECT_EQ(loaded.frames, 16u);
  EXPECT_EQ(loaded.split("train").size(), 8u);
  EXPECT_EQ(loaded.split("test").size(), 2u);
}

TEST(Manifest, RoundTripIsIdentity) {
  const auto dir = scratch("roundtrip");
  auto m = toy_manifest(10);
  m.m_max = 8.125;
  write_caches(m, dir);
  m.save(dir / "a.tsv");
  const auto first = DatasetManifest::load(dir / "a.tsv");
  first.save(dir / "b.tsv");
  const auto second = DatasetManifest::load(dir / "b.tsv");
  EXPECT_EQ(first.samples, second.samples);
  EXPECT_EQ(first.m_max, second.m_max);
  EXPECT_EQ(first.frames, second.frames);
  EXPECT_TRUE(first.gloss_vocab == second.gloss_vocab);
  EXPECT_TRUE(first.word_vocab == second.word_vocab);
  EXPECT_EQ(slurp(dir / "a.tsv"), slurp(dir / "b.tsv"));
  EXPECT_EQ(first.samples, m.samples);
}

TEST(Manifest, UnknownGlossNamesTheSample) {
  const auto dir = scratch("unknown_gloss");
  auto m = toy_manifest(4);
  m.samples[2].glosses.push_back("HOUSE");
  write_caches(m, dir);
  m.save(dir / "manifest.tsv");
  try {
    DatasetManifest::load(dir / "manifest.tsv");
    FAIL() << "expected rejection";
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("'s2'"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("HOUSE"), std::string::npos) << e.what();
  }
}

TEST(Manifest, UnknownWordNamesTheSample) {
  const auto dir = scratch("unknown_word");
  auto m = toy_manifest(4);
  m.samples[1].words.push_back("quickly");
  write_caches(m, dir);
  m.save(dir / "manifest.tsv");
  EXPECT_THROW(
      {
        try {
          DatasetManifest::load(dir / "manifest.tsv");
        } catch (const ValueError& e) {
          EXPECT_NE(std::string(e.what()).find("'s1'"), std::string::npos);
          throw;
        }
      },
      ValueError);
}

TEST(Manifest, MissingFlowFileIsRejected) {
  const auto dir = scratch("missing");
  const auto m = toy_manifest(3);
  write_caches(m, dir);
  fs::remove(dir / m.samples[1].flow_path);
  m.save(dir / "manifest.tsv");
  EXPECT_THROW(DatasetManifest::load(dir / "manifest.tsv"), ValueError);
  EXPECT_NO_THROW(DatasetManifest::load(dir / "manifest.tsv", /*check_files=*/false));
}

TEST(Manifest, MalformedRowIsFormatError) {
  EXPECT_THROW(DatasetManifest::parse("#m_max\t6\nid\tpath\tI EAT\n", "."), FormatError);
  EXPECT_THROW(DatasetManifest::parse("#frames\tmany\n", "."), FormatError);
}

TEST(Manifest, DuplicateIdAndBadSplitRejected) {
  auto m = toy_manifest(3);
  m.samples[2].id = m.samples[0].id;
  EXPECT_THROW(m.validate(false), ValueError);
  m = toy_manifest(3);
  m.samples[0].split = "holdout";
  EXPECT_THROW(m.validate(false), ValueError);
}

TEST(Manifest, SplitCountsEchoTags) {
  auto m = toy_manifest(0);
  for (std::size_t i = 0; i < 1020; ++i)
    m.samples.push_back({"v" + std::to_string(i), "x.sflw", {"I", "EAT", "APPLE"}, {"i", "eat", "the", "apple"},
                         i < 807 ? "train" : "test"});
  const auto reparsed = DatasetManifest::parse(m.to_text(), ".");
  const auto counts = reparsed.split_counts();
  EXPECT_EQ(counts.at("train"), 807u);
  EXPECT_EQ(counts.at("test"), 213u);
}

TEST(Manifest, PathsResolveRelativeToManifest) {
  const auto dir = scratch("relative");
  const auto m = toy_manifest(2);
  write_caches(m, dir / "nested", 20);
  m.save(dir / "nested" / "manifest.tsv");
  const auto loaded = DatasetManifest::load(dir / "nested" / "manifest.tsv");
  EXPECT_EQ(loaded.resolve("flow/s0.sflw"), dir / "nested" / "flow" / "s0.sflw");
  const auto seq = loaded.load_flow(loaded.samples[0]);
  EXPECT_EQ(seq.frames, 16u);  // 20 cached fields resampled to the declared 16
}

TEST(Manifest, FlowCacheMustMatchDeclaredMmax) {
  const auto dir = scratch("mmax");
  auto m = toy_manifest(1);
  write_caches(m, dir);
  m.m_max = 3.0;
  m.base_dir = dir;
  EXPECT_THROW(m.load_flow(m.samples[0]), FormatError);
}

// ------------------------------------------------------------ synthetic corpus

TEST(Synthetic, CapacityIsProductOfCategories) {
  const SyntheticSpec spec;
  EXPECT_EQ(spec.capacity(), 100u);
  EXPECT_EQ(spec.glosses().size(), 14u);
  SyntheticOptions o;
  o.sentences = 101;
  EXPECT_THROW(generate_synthetic(spec, o), ValueError);
}

TEST(Synthetic, WordAccounting) {
  const SyntheticSpec spec;
  const auto vocab = WordVocabulary::from_words(spec.words());
  EXPECT_EQ(vocab.word_count(), 19u);
  EXPECT_EQ(vocab.accounting(), "J = 19 words + 3 specials = 22");
  EXPECT_EQ(spec.sentence({"SHE", "HAVE", "DOG"}), (std::vector<std::string>{"she", "has", "the", "dog"}));
  EXPECT_EQ(spec.sentence({"WE", "SEE", "BOOK"}), (std::vector<std::string>{"we", "see", "the", "book"}));
}

TEST(Synthetic, PrimitivesAreDistinct) {
  const SyntheticSpec spec;
  std::set<std::pair<long, long>> seen;
  for (const auto& g : spec.glosses()) {
    const auto p = spec.primitive(g);
    EXPECT_TRUE(seen.insert({std::lround(p.dx() * 1e6), std::lround(p.dy() * 1e6)}).second) << g;
  }
}

TEST(Synthetic, SameSeedGivesByteIdenticalCorpus) {
  const SyntheticSpec spec;
  SyntheticOptions o;
  o.sentences = 12;
  o.seed = 7;
  o.test_fraction = 0.25;
  auto a = generate_synthetic(spec, o);
  auto b = generate_synthetic(spec, o);
  const auto da = scratch("det_a"), db = scratch("det_b");
  a.write(da);
  b.write(db);
  EXPECT_EQ(slurp(da / "manifest.tsv"), slurp(db / "manifest.tsv"));
  for (const auto& s : a.manifest.samples) EXPECT_EQ(slurp(da / s.flow_path), slurp(db / s.flow_path));
  EXPECT_EQ(a.manifest.split("test").size(), 3u);

  o.seed = 8;
  const auto c = generate_synthetic(spec, o);
  EXPECT_NE(c.manifest.to_text(), a.manifest.to_text());
}

TEST(Synthetic, SentencesAreDistinctAndMapped) {
  const SyntheticSpec spec;
  SyntheticOptions o;
  o.sentences = 100;
  const auto c = generate_synthetic(spec, o);
  std::set<std::vector<std::string>> seen;
  for (const auto& s : c.manifest.samples) {
    EXPECT_TRUE(seen.insert(s.glosses).second);
    EXPECT_EQ(s.words, spec.sentence(s.glosses));
  }
  EXPECT_NO_THROW(c.manifest.validate(false));
}

TEST(Synthetic, WrittenCorpusLoadsBack) {
  const SyntheticSpec spec;
  SyntheticOptions o;
  o.sentences = 5;
  auto c = generate_synthetic(spec, o);
  const auto dir = scratch("written");
  const auto path = c.write(dir);
  const auto m = DatasetManifest::load(path);
  ASSERT_EQ(m.samples.size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(m.load_flow(m.samples[i]).codes, c.flows[i].codes);
}

TEST(Synthetic, AnalyticFieldOfBlobMovingRight) {
  // Oracle: every pixel inside the disc carries exactly the disc velocity.
  const auto f = analytic_blob_field(32.0, 30.0, 3.0, 0.0, 8.0, 65, 65);
  std::size_t inside = 0;
  for (std::size_t y = 0; y < 65; ++y)
    for (std::size_t x = 0; x < 65; ++x) {
      const bool in = std::hypot(static_cast<double>(x) - 32.0, static_cast<double>(y) - 30.0) <= 8.0;
      EXPECT_EQ(f.u[y * 65 + x], in ? 3.0 : 0.0);
      EXPECT_EQ(f.v[y * 65 + x], 0.0);
      inside += in;
    }
  EXPECT_GT(inside, 190u);  // about pi * 64 pixels
}

TEST(Synthetic, RenderedBlobFlowMatchesAnalyticMotion) {
  const auto f0 = render_blob_frame(30.0, 32.0, 8.0, 65, 65);
  const auto f1 = render_blob_frame(33.0, 32.0, 8.0, 65, 65);
  const auto est = flow::compute_flow(f0, f1, flow::FlowParams{});
  std::vector<double> err;
  for (std::size_t y = 0; y < 65; ++y)
    for (std::size_t x = 0; x < 65; ++x)
      if (std::hypot(static_cast<double>(x) - 30.0, static_cast<double>(y) - 32.0) <= 5.0)
        err.push_back(std::hypot(est.u[y * 65 + x] - 3.0, est.v[y * 65 + x]));
  EXPECT_LE(median(err), 0.5);
}

TEST(Synthetic, BlobReturnsHomeAfterEachGloss) {
  const SyntheticSpec spec;
  SyntheticOptions o;
  std::mt19937_64 rng(2);
  const auto s = script_sample(spec, {"HE", "WANT", "WATER"}, o, rng);
  ASSERT_EQ(s.vx.size(), o.fields);
  ASSERT_EQ(s.cx.size(), o.fields + 1);
  EXPECT_NEAR(s.cx.back(), s.cx.front(), 1e-9);
  EXPECT_NEAR(s.cy.back(), s.cy.front(), 1e-9);
  for (std::size_t t = 0; t <= o.fields; ++t) {
    EXPECT_GE(s.cx[t] - spec.radius, 0.0);
    EXPECT_LE(s.cx[t] + spec.radius, 64.0);
    EXPECT_GE(s.cy[t] - spec.radius, 0.0);
    EXPECT_LE(s.cy[t] + spec.radius, 64.0);
  }
}

TEST(Synthetic, FieldsRespectMmax) {
  const SyntheticSpec spec;
  SyntheticOptions o;
  o.sentences = 20;
  const auto c = generate_synthetic(spec, o);
  for (const auto& seq : c.flows) {
    EXPECT_EQ(seq.frames, 16u);
    EXPECT_EQ(seq.width, 65u);
    for (std::size_t t = 0; t < seq.frames; ++t)
      for (std::size_t i = 0; i < seq.width * seq.height; ++i) EXPECT_LT(seq.codes[t * seq.frame_stride() + 3 * i + 2], 255);
  }
}

TEST(Synthetic, RenderedModeRunsTheEstimator) {
  const SyntheticSpec spec;
  SyntheticOptions o;
  o.sentences = 1;
  o.rendered = true;
  const auto rendered = generate_synthetic(spec, o);
  o.rendered = false;
  const auto analytic = generate_synthetic(spec, o);
  ASSERT_EQ(rendered.flows[0].frames, analytic.flows[0].frames);
  // Median horizontal velocity over moving pixels agrees per field.
  std::size_t agree = 0, moving = 0;
  for (std::size_t t = 0; t < analytic.flows[0].frames; ++t) {
    const auto a = analytic.flows[0].field(t), r = rendered.flows[0].field(t);
    std::vector<double> du;
    for (std::size_t i = 0; i < a.u.size(); ++i)
      if (std::hypot(a.u[i], a.v[i]) > 1.0) du.push_back(std::hypot(r.u[i] - a.u[i], r.v[i] - a.v[i]));
    if (du.empty()) continue;
    ++moving;
    agree += median(du) < 1.0;
  }
  EXPECT_GT(moving, 8u);
  EXPECT_GE(agree, moving - 1);
}
