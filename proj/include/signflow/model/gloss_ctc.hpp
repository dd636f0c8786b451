#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "signflow/autograd/ops.hpp"
#include "signflow/autograd/tensor.hpp"
#include "signflow/core/error.hpp"
#include "signflow/data/vocabulary.hpp"
#include "signflow/nn/layers.hpp"

namespace signflow {

enum class CtcMode {
  kNll,    // -log P
  kOneMinusP,  // 1 - P
};

namespace detail {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(-std::abs(a - b)));
}

// Blank-interleaved target: blank, g1, blank, g2, ..., gN, blank.
inline std::vector<int> interleave_blanks(std::span<const int> target) {
  std::vector<int> ext(2 * target.size() + 1, kBlank);
  for (std::size_t i = 0; i < target.size(); ++i) ext[2 * i + 1] = target[i];
  return ext;
}

}  // namespace detail

// Minimum number of steps that can emit `target`: one per gloss plus a
// separating blank between equal neighbours.
inline std::size_t ctc_min_length(std::span<const int> target) {
  std::size_t need = target.size();
  for (std::size_t i = 1; i < target.size(); ++i)
    if (target[i] == target[i - 1]) ++need;
  return need;
}

struct CtcLattice {
  std::size_t steps = 0;
  std::vector<int> extended;
  std::vector<double> alpha;  // (steps, S): includes the emission at t
  std::vector<double> beta;   // (steps, S): emissions after t only
  double log_prob = detail::kNegInf;
};

// Log-space forward/backward over an (L, K) matrix of log posteriors.
template <typename T>
CtcLattice ctc_lattice(const NdArray<T>& log_probs, std::span<const int> target, bool with_beta = true) {
  if (log_probs.rank() != 2) throw ShapeError("ctc: expected (L, K) log posteriors, got " + shape_string(log_probs.shape()));
  const std::size_t L = log_probs.dim(0), K = log_probs.dim(1);
  for (int g : target)
    if (g <= kBlank || static_cast<std::size_t>(g) >= K)
      throw ValueError(detail::concat("ctc: target id ", g, " outside gloss range [1, ", K - 1, "]"));
  const std::size_t need = ctc_min_length(target);
  if (need > L)
    throw ValueError(detail::concat("ctc: infeasible target, ", target.size(), " glosses need at least ", need,
                                    " steps but the posterior has ", L));
  CtcLattice lat;
  lat.steps = L;
  lat.extended = detail::interleave_blanks(target);
  const auto& ext = lat.extended;
  const std::size_t S = ext.size();
  auto y = [&](std::size_t t, std::size_t s) { return static_cast<double>(log_probs(t, static_cast<std::size_t>(ext[s]))); };
  auto skip_allowed = [&](std::size_t s) { return s >= 2 && ext[s] != kBlank && ext[s] != ext[s - 2]; };

  lat.alpha.assign(L * S, detail::kNegInf);
  auto A = [&](std::size_t t, std::size_t s) -> double& { return lat.alpha[t * S + s]; };
  A(0, 0) = y(0, 0);
  if (S > 1) A(0, 1) = y(0, 1);
  for (std::size_t t = 1; t < L; ++t)
    for (std::size_t s = 0; s < S; ++s) {
      double acc = A(t - 1, s);
      if (s >= 1) acc = detail::log_add(acc, A(t - 1, s - 1));
      if (skip_allowed(s)) acc = detail::log_add(acc, A(t - 1, s - 2));
      A(t, s) = acc == detail::kNegInf ? acc : acc + y(t, s);
    }
  lat.log_prob = A(L - 1, S - 1);
  if (S > 1) lat.log_prob = detail::log_add(lat.log_prob, A(L - 1, S - 2));

  if (with_beta) {
    lat.beta.assign(L * S, detail::kNegInf);
    auto B = [&](std::size_t t, std::size_t s) -> double& { return lat.beta[t * S + s]; };
    B(L - 1, S - 1) = 0.0;
    if (S > 1) B(L - 1, S - 2) = 0.0;
    for (std::size_t t = L - 1; t-- > 0;)
      for (std::size_t s = 0; s < S; ++s) {
        double acc = B(t + 1, s) + y(t + 1, s);
        if (s + 1 < S) acc = detail::log_add(acc, B(t + 1, s + 1) + y(t + 1, s + 1));
        if (s + 2 < S && skip_allowed(s + 2)) acc = detail::log_add(acc, B(t + 1, s + 2) + y(t + 1, s + 2));
        B(t, s) = acc;
      }
  }
  return lat;
}

template <typename T>
double ctc_log_probability(const NdArray<T>& log_probs, std::span<const int> target) {
  return ctc_lattice(log_probs, target, false).log_prob;
}

// P(target | posterior) for a row-stochastic (L, |G|+1) matrix.
template <typename T>
double ctc_probability(const NdArray<T>& posterior, std::span<const int> target) {
  NdArray<double> logp(posterior.shape());
  for (std::size_t i = 0; i < posterior.size(); ++i) logp[i] = std::log(static_cast<double>(posterior[i]));
  return std::exp(ctc_log_probability(logp, target));
}

// Scalar loss over (L, K) log posteriors; gradient flows to `log_probs`.
template <typename T>
Tensor<T> ctc_loss(const Tensor<T>& log_probs, std::span<const int> target, CtcMode mode = CtcMode::kNll) {
  detail::require_finite("ctc_loss", log_probs);
  CtcLattice lat = ctc_lattice(log_probs.value(), target, true);
  const double logp = lat.log_prob;
  const double p = std::exp(logp);
  const double value = mode == CtcMode::kNll ? -logp : 1.0 - p;
  auto node = log_probs.node();
  const std::size_t K = log_probs.dim(1);
  return detail::make_result<T>("ctc_loss", NdArray<T>::scalar(static_cast<T>(value)), {log_probs},
                                [node, lat = std::move(lat), mode, p, K](const NdArray<T>& g) {
    auto* gx = detail::grad_sink(node);
    if (!gx) return;
    // d logP / dy(t, k) = sum over lattice states s with label k of
    // exp(alpha_t(s) + beta_t(s) - logP).
    const double outer = static_cast<double>(g[0]) * (mode == CtcMode::kNll ? -1.0 : -p);
    const std::size_t S = lat.extended.size();
    for (std::size_t t = 0; t < lat.steps; ++t)
      for (std::size_t s = 0; s < S; ++s) {
        const double a = lat.alpha[t * S + s], b = lat.beta[t * S + s];
        if (a == detail::kNegInf || b == detail::kNegInf) continue;
        (*gx)[t * K + static_cast<std::size_t>(lat.extended[s])] +=
            static_cast<T>(outer * std::exp(a + b - lat.log_prob));
      }
  });
}

// Per-step argmax (lowest id on ties), collapse repeats, drop blanks.
template <typename T>
std::vector<int> best_path_decode(const NdArray<T>& scores) {
  if (scores.rank() != 2) throw ShapeError("best_path_decode: expected (L, K), got " + shape_string(scores.shape()));
  std::vector<int> out;
  int prev = -1;
  for (std::size_t t = 0; t < scores.dim(0); ++t) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < scores.dim(1); ++k)
      if (scores(t, k) > scores(t, best)) best = k;
    const int id = static_cast<int>(best);
    if (id != prev && id != kBlank) out.push_back(id);
    prev = id;
  }
  return out;
}

// K_hat (L, d) -> log posteriors (L, |G| + 1).
template <typename T>
struct GlossHead {
  Linear<T> projection;

  GlossHead() = default;
  GlossHead(std::size_t width, std::size_t classes, std::mt19937_64& rng) : projection(width, classes, rng) {}

  std::size_t classes() const { return projection.weight.dim(1); }

  Tensor<T> log_posterior(const Tensor<T>& k_hat) const { return log_softmax(projection(k_hat)); }

  NdArray<T> posterior(const Tensor<T>& k_hat) const {
    NdArray<T> p = log_posterior(k_hat).value();
    for (auto& v : p.values()) v = std::exp(v);
    return p;
  }

  void collect(ParameterList<T>& out, const std::string& prefix) const { projection.collect(out, prefix + ".projection"); }
};

}  // namespace signflow
