#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <vector>

#include "signflow/autograd/grad_check.hpp"
#include "signflow/model/gloss_ctc.hpp"

using namespace signflow;

namespace {

NdArray<double> random_posterior(std::size_t L, std::size_t K, std::mt19937_64& rng) {
  NdArray<double> p(Shape{L, K});
  std::uniform_real_distribution<double> d(0.01, 1.0);
  for (std::size_t t = 0; t < L; ++t) {
    double z = 0;
    for (std::size_t k = 0; k < K; ++k) z += p(t, k) = d(rng);
    for (std::size_t k = 0; k < K; ++k) p(t, k) /= z;
  }
  return p;
}

std::vector<int> collapse(const std::vector<int>& path) {
  std::vector<int> out;
  int prev = -1;
  for (int k : path) {
    if (k != prev && k != 0) out.push_back(k);
    prev = k;
  }
  return out;
}

// Sum of path products over every one of K^L paths, grouped by collapse.
std::map<std::vector<int>, double> enumerate_paths(const NdArray<double>& p) {
  const std::size_t L = p.dim(0), K = p.dim(1);
  std::map<std::vector<int>, double> totals;
  std::vector<int> path(L, 0);
  while (true) {
    double prod = 1;
    for (std::size_t t = 0; t < L; ++t) prod *= p(t, static_cast<std::size_t>(path[t]));
    totals[collapse(path)] += prod;
    std::size_t t = 0;
    while (t < L && ++path[t] == static_cast<int>(K)) path[t++] = 0;
    if (t == L) break;
  }
  return totals;
}

}  // namespace

TEST(CtcProbability, SingleStepSinglePath) {
  const NdArray<double> p(Shape{1, 3}, {0.2, 0.7, 0.1});
  const std::vector<int> target{1};
  EXPECT_NEAR(ctc_probability(p, target), 0.7, 1e-15);
}

TEST(CtcProbability, TwoStepsThreePaths) {
  const NdArray<double> p(Shape{2, 2}, {0.4, 0.6, 0.3, 0.7});
  const std::vector<int> target{1};
  // (a,a) + (a,blank) + (blank,a)
  const double expected = 0.6 * 0.7 + 0.6 * 0.3 + 0.4 * 0.7;
  EXPECT_NEAR(ctc_probability(p, target), expected, 1e-15);
}

TEST(CtcProbability, MatchesExhaustiveEnumeration) {
  std::mt19937_64 rng(21);
  int cases = 0;
  for (std::size_t L = 1; L <= 5; ++L)
    for (std::size_t G = 1; G <= 3; ++G)
      for (int rep = 0; rep < 4; ++rep) {
        const auto p = random_posterior(L, G + 1, rng);
        for (const auto& [target, expected] : enumerate_paths(p)) {
          EXPECT_NEAR(ctc_probability(p, target), expected, 1e-10);
          ++cases;
        }
      }
  EXPECT_GT(cases, 100);
}

TEST(CtcProbability, FeasibleTargetsSumToAtMostOne) {
  std::mt19937_64 rng(5);
  const auto p = random_posterior(3, 3, rng);  // L = 3, |G| = 2
  double total = 0;
  std::vector<std::vector<int>> targets{{}};
  for (std::size_t len = 1; len <= 3; ++len) {
    const std::size_t count = targets.size();
    for (std::size_t i = 0; i < count; ++i)
      if (targets[i].size() == len - 1)
        for (int g : {1, 2}) {
          auto t = targets[i];
          t.push_back(g);
          targets.push_back(t);
        }
  }
  for (const auto& t : targets)
    if (ctc_min_length(t) <= 3) total += ctc_probability(p, t);
  EXPECT_LE(total, 1.0 + 1e-12);
  EXPECT_NEAR(total, 1.0, 1e-12);  // every path collapses to one of them
}

TEST(CtcProbability, TinyEntriesStayFinite) {
  NdArray<double> p(Shape{4, 3}, 1e-300);
  for (std::size_t t = 0; t < 4; ++t) p(t, t % 2 ? 2 : 0) = 1.0 - 2e-300;
  const std::vector<int> target{1, 2};
  NdArray<double> logp(p.shape());
  for (std::size_t i = 0; i < p.size(); ++i) logp[i] = std::log(p[i]);
  const double lp = ctc_log_probability(logp, target);
  EXPECT_TRUE(std::isfinite(lp));
  EXPECT_LT(lp, -600.0);
}

TEST(CtcProbability, RejectsInfeasibleTargets) {
  const NdArray<double> p(Shape{2, 3}, 1.0 / 3);
  const std::vector<int> repeat{1, 1};  // needs a separating blank: 3 steps
  try {
    ctc_probability(p, repeat);
    FAIL() << "expected ValueError";
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("at least 3"), std::string::npos) << e.what();
  }
  const std::vector<int> blank_in_target{0};
  EXPECT_THROW(ctc_probability(p, blank_in_target), ValueError);
}

TEST(CtcLoss, CertainTargetGivesZeroLoss) {
  const std::vector<int> target{2};
  const NdArray<double> logp(Shape{1, 3}, {-800.0, -800.0, 0.0});
  for (CtcMode mode : {CtcMode::kNll, CtcMode::kOneMinusP})
    EXPECT_EQ(ctc_loss(Tensor<double>(logp), target, mode).item(), 0.0);
}

TEST(CtcLoss, OneMinusPModeLoss) {
  const std::vector<int> target{1};
  const NdArray<double> logp(Shape{1, 3}, {std::log(0.2), std::log(0.7), std::log(0.1)});
  EXPECT_NEAR(ctc_loss(Tensor<double>(logp), target, CtcMode::kOneMinusP).item(), 0.3, 1e-15);
  EXPECT_NEAR(ctc_loss(Tensor<double>(logp), target, CtcMode::kNll).item(), -std::log(0.7), 1e-15);
}

TEST(CtcLoss, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  const std::vector<std::vector<int>> targets{{1, 2}, {3, 3}, {2}, {1, 3, 1}};
  for (const auto& target : targets)
    for (CtcMode mode : {CtcMode::kNll, CtcMode::kOneMinusP}) {
      NdArray<double> logits(Shape{4, 4});
      std::normal_distribution<double> d(0.0, 1.0);
      for (auto& v : logits.values()) v = d(rng);
      const auto report = grad_check_at<double>(
          [&](std::vector<Tensor<double>>& in) { return ctc_loss(log_softmax(in[0]), target, mode); }, {logits});
      EXPECT_TRUE(report.passed) << report.summary();
    }
}

TEST(BestPathDecode, CollapsesRunsAndDropsBlanks) {
  auto one_hot = [](std::vector<int> path) {
    NdArray<double> m(Shape{path.size(), 4}, 0.1);
    for (std::size_t t = 0; t < path.size(); ++t) m(t, static_cast<std::size_t>(path[t])) = 0.7;
    return m;
  };
  EXPECT_EQ(best_path_decode(one_hot({1, 1, 0, 2})), (std::vector<int>{1, 2}));
  EXPECT_TRUE(best_path_decode(one_hot({0, 0, 0})).empty());
  EXPECT_EQ(best_path_decode(one_hot({1, 0, 1})), (std::vector<int>{1, 1}));
  EXPECT_EQ(best_path_decode(one_hot({3, 3, 3, 2, 2})), (std::vector<int>{3, 2}));
}

TEST(GlossHead, ZeroWeightsGiveUniformRows) {
  std::mt19937_64 rng(1);
  GlossHead<double> head(128, 91, rng);
  head.projection.weight.mutable_value().fill(0.0);
  NdArray<double> k(Shape{58, 128});
  std::normal_distribution<double> d(0.0, 1.0);
  for (auto& v : k.values()) v = d(rng);
  const auto p = head.posterior(Tensor<double>(k));
  EXPECT_EQ(p.shape(), (Shape{58, 91}));
  for (double v : p.values()) EXPECT_NEAR(v, 1.0 / 91, 1e-15);
}

TEST(GlossHead, RowsSumToOne) {
  std::mt19937_64 rng(2);
  GlossHead<double> head(16, 6, rng);
  NdArray<double> k(Shape{9, 16});
  std::normal_distribution<double> d(0.0, 3.0);
  for (auto& v : k.values()) v = d(rng);
  const auto p = head.posterior(Tensor<double>(k));
  for (std::size_t t = 0; t < 9; ++t) {
    double s = 0;
    for (std::size_t c = 0; c < 6; ++c) s += p(t, c);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(GlossVocabularyFile, LineNumbersGiveIds) {
  const auto path = std::filesystem::temp_directory_path() / "signflow_glosses.txt";
  {
    std::ofstream out(path);
    out << "# blank\nHELLO\nYOU\nEAT\n";
  }
  const auto v = GlossVocabulary::load(path);
  EXPECT_EQ(v.size(), 4u);
  EXPECT_EQ(v.id("HELLO"), 1);
  EXPECT_EQ(v.id("EAT"), 3);
  EXPECT_EQ(v.token(0), kBlankToken);
  EXPECT_THROW(v.id(kBlankToken), ValueError);
  v.save(path);
  EXPECT_EQ(GlossVocabulary::load(path), v);
  std::filesystem::remove(path);
}

TEST(WordVocabularyFile, SpecialsComeFirst) {
  const auto v = WordVocabulary::from_words({"i", "eat", "the", "apple"});
  EXPECT_EQ(v.id("[pad]"), kPad);
  EXPECT_EQ(v.id("[start]"), kStart);
  EXPECT_EQ(v.id("[end]"), kEnd);
  EXPECT_EQ(v.id("i"), 3);
  EXPECT_EQ(v.accounting(), "J = 4 words + 3 specials = 7");
  const auto path = std::filesystem::temp_directory_path() / "signflow_words.txt";
  v.save(path);
  EXPECT_EQ(WordVocabulary::load(path), v);
  {
    std::ofstream out(path);
    out << "[start]\n[pad]\n[end]\nx\n";
  }
  EXPECT_THROW(WordVocabulary::load(path), FormatError);
  std::filesystem::remove(path);
  EXPECT_EQ(v.decode({kStart, 3, 4, kEnd, 5}), (std::vector<std::string>{"i", "eat"}));
}
