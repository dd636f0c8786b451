#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "signflow/core/error.hpp"
#include "signflow/data/vocabulary.hpp"

namespace signflow {

// Next-token log probabilities (size J) for a prefix that begins with the
// start token.
using NextTokenScorer = std::function<std::vector<double>(const std::vector<int>& prefix)>;

struct SearchOptions {
  std::size_t width = 5;
  std::size_t max_len = 12;       // generated tokens, [end] included
  double length_penalty = 1.0;    // score = logp / len^length_penalty
  int start_token = kStart;
  int end_token = kEnd;
  std::vector<int> banned{kPad, kStart};
};

struct Hypothesis {
  std::vector<int> tokens;  // generated tokens, [start] excluded, [end] included if finished
  double log_prob = 0.0;
  bool finished = false;

  double score(double length_penalty) const {
    if (tokens.empty()) return log_prob;
    return log_prob / std::pow(static_cast<double>(tokens.size()), length_penalty);
  }

  // Tokens without the trailing end marker.
  std::vector<int> words(int end_token = kEnd) const {
    std::vector<int> out = tokens;
    if (!out.empty() && out.back() == end_token) out.pop_back();
    return out;
  }
};

namespace detail {

inline bool is_banned(const SearchOptions& o, int tok) {
  return std::find(o.banned.begin(), o.banned.end(), tok) != o.banned.end();
}

}  // namespace detail

inline Hypothesis greedy_decode(const NextTokenScorer& scorer, const SearchOptions& opts) {
  Hypothesis h;
  std::vector<int> prefix{opts.start_token};
  while (h.tokens.size() < opts.max_len) {
    const auto lp = scorer(prefix);
    int best = -1;
    for (std::size_t k = 0; k < lp.size(); ++k) {
      const int tok = static_cast<int>(k);
      if (detail::is_banned(opts, tok)) continue;
      if (best < 0 || lp[k] > lp[static_cast<std::size_t>(best)]) best = tok;
    }
    if (best < 0) throw ValueError("greedy_decode: every token is banned");
    h.tokens.push_back(best);
    h.log_prob += lp[static_cast<std::size_t>(best)];
    prefix.push_back(best);
    if (best == opts.end_token) {
      h.finished = true;
      break;
    }
  }
  return h;
}

// Each step expands every live hypothesis, keeps the `width` best
// candidates by cumulative log probability, and retires those ending in
// [end]. Returns the finished hypothesis with the best length-normalised
// score, or the best unfinished one when nothing finished by max_len.
inline Hypothesis beam_search(const NextTokenScorer& scorer, const SearchOptions& opts) {
  if (opts.width < 1) throw ValueError("beam_search: width must be at least 1");
  std::vector<Hypothesis> live{Hypothesis{}};
  std::vector<Hypothesis> finished;
  for (std::size_t step = 0; step < opts.max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    for (const auto& h : live) {
      std::vector<int> prefix{opts.start_token};
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const auto lp = scorer(prefix);
      for (std::size_t k = 0; k < lp.size(); ++k) {
        const int tok = static_cast<int>(k);
        if (detail::is_banned(opts, tok)) continue;
        Hypothesis c = h;
        c.tokens.push_back(tok);
        c.log_prob += lp[k];
        c.finished = tok == opts.end_token;
        candidates.push_back(std::move(c));
      }
    }
    // Stable ordering keeps ties deterministic (earlier beam, lower id first).
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.log_prob > b.log_prob; });
    if (candidates.size() > opts.width) candidates.resize(opts.width);
    live.clear();
    for (auto& c : candidates) (c.finished ? finished : live).push_back(std::move(c));
  }
  const std::vector<Hypothesis>& pool = finished.empty() ? live : finished;
  if (pool.empty()) throw ValueError("beam_search: no hypotheses survived");
  const Hypothesis* best = &pool.front();
  for (const auto& h : pool)
    if (h.score(opts.length_penalty) > best->score(opts.length_penalty)) best = &h;
  return *best;
}

}  // namespace signflow
