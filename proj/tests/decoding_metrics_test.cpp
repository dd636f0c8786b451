#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "signflow/decode/metrics.hpp"
#include "signflow/decode/search.hpp"

using namespace signflow;

namespace {

using Words = std::vector<std::string>;

// Random autoregressive toy model: logits depend on the last token and the
// position, normalised with a plain log-sum-exp.
struct ToyModel {
  std::size_t vocab;
  std::vector<std::vector<double>> by_token, by_position;

  ToyModel(std::size_t j, std::size_t max_len, std::uint64_t seed, double spread = 2.0) : vocab(j) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> d(0.0, spread);
    by_token.assign(j, std::vector<double>(j));
    by_position.assign(max_len + 1, std::vector<double>(j));
    for (auto& row : by_token)
      for (auto& v : row) v = d(rng);
    for (auto& row : by_position)
      for (auto& v : row) v = d(rng);
  }

  std::vector<double> operator()(const std::vector<int>& prefix) const {
    const auto& a = by_token[static_cast<std::size_t>(prefix.back())];
    const auto& b = by_position[prefix.size() - 1];
    std::vector<double> lp(vocab);
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < vocab; ++k) m = std::max(m, lp[k] = a[k] + b[k]);
    double z = 0;
    for (double v : lp) z += std::exp(v - m);
    for (auto& v : lp) v -= m + std::log(z);
    return lp;
  }
};

SearchOptions generic_options(std::size_t width, std::size_t max_len) {
  SearchOptions o;
  o.width = width;
  o.max_len = max_len;
  o.start_token = 0;
  o.end_token = 3;
  o.banned = {};
  return o;
}

}  // namespace

TEST(Wer, IdenticalIsZero) { EXPECT_EQ(wer(Words{"A", "B"}, Words{"A", "B"}), 0.0); }

TEST(Wer, OneDeletionOfThree) {
  EXPECT_DOUBLE_EQ(wer(Words{"a", "b", "c"}, Words{"a", "c"}), 100.0 / 3.0);
  EXPECT_NEAR(wer(Words{"a", "b", "c"}, Words{"a", "c"}), 33.33, 0.005);
}

TEST(Wer, EmptyHypothesisIsFullDeletion) { EXPECT_EQ(wer(Words{"a", "b", "c", "d"}, Words{}), 100.0); }

TEST(Wer, CanExceedHundredWithInsertions) { EXPECT_EQ(wer(Words{"a"}, Words{"b", "c", "d"}), 300.0); }

TEST(Wer, RejectsEmptyReference) { EXPECT_THROW(wer(Words{}, Words{"a"}), ValueError); }

TEST(Wer, InvariantToTokenRelabelling) {
  const std::vector<int> ref{1, 2, 3, 2, 4}, hyp{1, 3, 3, 4, 4, 2};
  std::vector<int> map{0, 7, 9, 5, 6};
  std::vector<int> ref2, hyp2;
  for (int t : ref) ref2.push_back(map[static_cast<std::size_t>(t)]);
  for (int t : hyp) hyp2.push_back(map[static_cast<std::size_t>(t)]);
  EXPECT_EQ(wer(ref, hyp), wer(ref2, hyp2));
}

TEST(Bleu, IdenticalCorpusIsHundred) {
  const std::vector<Words> refs{{"i", "eat", "the", "apple"}, {"you", "see", "the", "dog"}};
  const auto s = bleu(refs, refs);
  for (double b : s.bleu) EXPECT_DOUBLE_EQ(b, 100.0);
}

TEST(Bleu, NoOverlapIsZero) {
  const auto s = bleu(std::vector<Words>{{"a", "b", "c"}}, std::vector<Words>{{"x", "y", "z"}});
  for (double b : s.bleu) EXPECT_EQ(b, 0.0);
}

TEST(Bleu, TwoSentenceHandComputation) {
  const std::vector<Words> refs{{"the", "cat", "sat", "on", "the", "mat"}, {"a", "dog", "runs"}};
  const std::vector<Words> hyps{{"the", "cat", "sat", "on", "mat"}, {"a", "dog", "runs"}};
  // unigrams 8/8, bigrams (3+2)/(4+2), trigrams (2+1)/(3+1), 4-grams (1+0)/(2+0)
  // hypothesis length 8 < reference length 9
  const double bp = std::exp(1.0 - 9.0 / 8.0);
  const double p1 = 1.0, p2 = 5.0 / 6.0, p3 = 3.0 / 4.0, p4 = 1.0 / 2.0;
  const auto s = bleu(refs, hyps);
  EXPECT_DOUBLE_EQ(s.brevity_penalty, bp);
  EXPECT_NEAR(s.bleu[0], 100 * bp * p1, 1e-12);
  EXPECT_NEAR(s.bleu[1], 100 * bp * std::sqrt(p1 * p2), 1e-12);
  EXPECT_NEAR(s.bleu[2], 100 * bp * std::cbrt(p1 * p2 * p3), 1e-12);
  EXPECT_NEAR(s.bleu[3], 100 * bp * std::pow(p1 * p2 * p3 * p4, 0.25), 1e-12);
  for (bool f : s.smoothed) EXPECT_FALSE(f);
}

TEST(Bleu, AddOneOnlyWhenHigherOrderCountIsZero) {
  const auto s = bleu(std::vector<Words>{{"a", "c", "d"}}, std::vector<Words>{{"a", "b", "e"}});
  EXPECT_DOUBLE_EQ(s.precision[0], 1.0 / 3.0);
  EXPECT_TRUE(s.smoothed[1]);
  EXPECT_DOUBLE_EQ(s.precision[1], 1.0 / 3.0);  // (0 + 1) / (2 + 1)
  EXPECT_FALSE(s.smoothed[0]);
}

TEST(Bleu, NonIncreasingWhenPrecisionsAre) {
  std::mt19937_64 rng(3);
  const Words lexicon{"i", "you", "eat", "see", "the", "apple", "dog", "house", "water", "book"};
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Words> refs(4), hyps(4);
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t len = 4 + rng() % 5;
      for (std::size_t k = 0; k < len; ++k) refs[i].push_back(lexicon[rng() % lexicon.size()]);
      for (const auto& w : refs[i]) {
        const auto r = rng() % 10;
        if (r == 0) continue;
        hyps[i].push_back(r == 1 ? lexicon[rng() % lexicon.size()] : w);
      }
    }
    const auto s = bleu(refs, hyps);
    for (std::size_t n = 1; n < 4; ++n) {
      if (s.precision[n] > s.precision[n - 1]) break;
      EXPECT_LE(s.bleu[n], s.bleu[n - 1] + 1e-9) << "trial " << trial;
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(Bleu, CorpusPrecisionCanRiseWithOrder) {
  // A one-word miss plus an exact two-word match: p1 = 2/3, p2 = 1/1, so the
  // standard corpus formula gives BLEU-2 above BLEU-1.
  const std::vector<Words> refs{{"b"}, {"x", "y"}}, hyps{{"a"}, {"x", "y"}};
  const auto s = bleu(refs, hyps);
  EXPECT_DOUBLE_EQ(s.precision[0], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(s.precision[1], 1.0);
  EXPECT_GT(s.bleu[1], s.bleu[0]);
}

TEST(Bleu, RejectsEmptyCorpus) { EXPECT_THROW(bleu(std::vector<Words>{}, std::vector<Words>{}), ValueError); }

TEST(MetricReportText, StableKeysAndOrder) {
  std::vector<SampleResult> samples{{"s1", {"I", "EAT"}, {"I", "EAT"}, {"i", "eat"}, {"i", "eat"}},
                                    {"s2", {"YOU", "SEE", "DOG"}, {"YOU", "DOG"}, {"you", "see", "the", "dog"},
                                     {"you", "see", "dog"}}};
  const auto a = MetricReport::compute(samples).to_text();
  const auto b = MetricReport::compute(samples).to_text();
  EXPECT_EQ(a, b);
  const auto header = read_report_header(a);
  for (const char* key : {"WER", "BLEU1", "BLEU2", "BLEU3", "BLEU4"}) EXPECT_TRUE(header.count(key)) << key;
  EXPECT_EQ(a.rfind("WER=", 0), 0u);
  EXPECT_LT(a.find("BLEU1="), a.find("BLEU4="));
  EXPECT_EQ(header.at("WER"), "20.0000");  // one deletion in five glosses
  EXPECT_NE(a.find("[sample s2]"), std::string::npos);
}

TEST(GreedyDecode, AlwaysEndGivesEmptySentence) {
  const NextTokenScorer always_end = [](const std::vector<int>&) {
    std::vector<double> lp(6, std::log(0.01));
    lp[kEnd] = std::log(0.95);
    return lp;
  };
  SearchOptions o;
  o.max_len = 8;
  EXPECT_TRUE(greedy_decode(always_end, o).words().empty());
  EXPECT_TRUE(beam_search(always_end, o).words().empty());
}

TEST(GreedyDecode, NeverEmitsBannedTokens) {
  const NextTokenScorer likes_pad = [](const std::vector<int>& prefix) {
    std::vector<double> lp(5, std::log(0.05));
    lp[kPad] = std::log(0.7);
    lp[prefix.size() < 3 ? 4 : kEnd] = std::log(0.15);
    return lp;
  };
  SearchOptions o;
  const auto h = greedy_decode(likes_pad, o);
  EXPECT_EQ(h.tokens, (std::vector<int>{4, 4, kEnd}));
}

TEST(GreedyDecode, DeterministicAcrossRuns) {
  const ToyModel m(6, 5, 42);
  const auto o = generic_options(1, 5);
  EXPECT_EQ(greedy_decode(std::cref(m), o).tokens, greedy_decode(std::cref(m), o).tokens);
}

TEST(BeamSearch, WidthOneEqualsGreedy) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ToyModel m(6, 6, seed);
    const auto o = generic_options(1, 6);
    const auto g = greedy_decode(std::cref(m), o);
    const auto b = beam_search(std::cref(m), o);
    EXPECT_EQ(g.tokens, b.tokens) << "seed " << seed;
    EXPECT_EQ(g.log_prob, b.log_prob);
  }
}

TEST(BeamSearch, ExhaustiveWidthMatchesBruteForce) {
  const std::size_t J = 4, max_len = 3;
  for (std::uint64_t seed = 100; seed < 130; ++seed) {
    const ToyModel m(J, max_len, seed);
    const auto o = generic_options(64, max_len);  // J^max_len >= J * max_len
    // Enumerate every sequence that ends in [end] within max_len, plus the
    // unfinished ones of full length.
    double best_score = -std::numeric_limits<double>::infinity();
    std::vector<int> best_tokens;
    std::vector<std::vector<int>> frontier{{}};
    for (std::size_t len = 1; len <= max_len; ++len) {
      std::vector<std::vector<int>> next;
      for (const auto& seq : frontier)
        for (int t = 0; t < static_cast<int>(J); ++t) {
          auto s = seq;
          s.push_back(t);
          if (t == o.end_token) {
            std::vector<int> prefix{o.start_token};
            double lp = 0;
            for (int tok : s) {
              lp += m(prefix)[static_cast<std::size_t>(tok)];
              prefix.push_back(tok);
            }
            const double score = lp / static_cast<double>(s.size());
            if (score > best_score) {
              best_score = score;
              best_tokens = s;
            }
          } else {
            next.push_back(s);
          }
        }
      frontier = next;
    }
    const auto b = beam_search(std::cref(m), o);
    EXPECT_EQ(b.tokens, best_tokens) << "seed " << seed;
    EXPECT_NEAR(b.score(1.0), best_score, 1e-12);
  }
}

TEST(BeamSearch, NotWorseThanGreedyOnRandomModels) {
  int violations = 0;
  for (std::uint64_t seed = 200; seed < 300; ++seed) {
    const ToyModel m(7, 6, seed);
    auto o = generic_options(5, 6);
    const auto g = greedy_decode(std::cref(m), o);
    const auto b = beam_search(std::cref(m), o);
    if (g.finished && b.score(1.0) < g.score(1.0) - 1e-12) ++violations;
  }
  EXPECT_EQ(violations, 0);
}

TEST(BeamSearch, RejectsZeroWidth) {
  const ToyModel m(4, 3, 1);
  EXPECT_THROW(beam_search(std::cref(m), generic_options(0, 3)), ValueError);
}
