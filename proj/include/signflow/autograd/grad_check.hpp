#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "signflow/autograd/ops.hpp"
#include "signflow/autograd/tensor.hpp"

namespace signflow {

struct GradCheckOptions {
  double step = 1e-5;       // central-difference half width
  double tolerance = 1e-4;  // max relative deviation for a pass
  // Denominator floor for the relative error, so coordinates whose true
  // gradient is ~0 are judged against finite-difference round-off.
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded random subset per leaf.
  std::size_t max_coords_per_leaf = 0;
  std::uint64_t seed = 0;
  // Combine steps h and h/2 to cancel the O(h^2) term, so a large step
  // (robust to rounding in f) does not bias the estimate.
  bool richardson = false;
};

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t excluded_kinks = 0;
  bool passed = true;
  std::string worst;  // leaf/coordinate with the largest deviation

  std::string summary() const {
    std::ostringstream oss;
    oss << (passed ? "pass" : "FAIL") << " max_rel=" << max_relative_error
        << " checked=" << checked << " kinks_excluded=" << excluded_kinks;
    if (!worst.empty()) oss << " worst=" << worst;
    return oss.str();
  }

  void merge(const GradCheckReport& other) {
    if (other.max_relative_error > max_relative_error) {
      max_relative_error = other.max_relative_error;
      worst = other.worst;
    }
    checked += other.checked;
    excluded_kinks += other.excluded_kinks;
    passed = passed && other.passed;
  }
};

// Compares reverse-mode gradients of `fn` (nullary, returns a scalar tensor)
// against central finite differences with respect to each tensor in
// `leaves`. Leaves are perturbed in place and restored. Coordinates where
// the +h / -h evaluations take different relu/max-pool branches are
// non-differentiable points and are excluded from the comparison.
template <typename T, typename Fn>
GradCheckReport grad_check(Fn&& fn, std::vector<Tensor<T>> leaves,
                           const GradCheckOptions& opts = {}) {
  GradCheckReport report;
  for (auto& leaf : leaves) {
    leaf.node()->requires_grad = true;
    leaf.zero_grad();
  }
  {
    Graph<T> graph;
    GraphScope<T> scope(graph);
    Tensor<T> out = fn();
    graph.backward(out);
  }

  auto evaluate = [&fn](std::uint64_t& signature) {
    NoGradScope<T> no_grad;
    detail::KinkMonitor monitor;
    detail::kink_monitor = &monitor;
    const T v = fn().item();
    detail::kink_monitor = nullptr;
    signature = monitor.signature;
    return static_cast<double>(v);
  };

  std::mt19937_64 rng(opts.seed);
  const T h = static_cast<T>(opts.step);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& leaf = leaves[li];
    const std::size_t n = leaf.size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (opts.max_coords_per_leaf && opts.max_coords_per_leaf < n) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opts.max_coords_per_leaf);
      std::sort(coords.begin(), coords.end());
    }
    const NdArray<T> analytic = leaf.has_grad() ? leaf.grad() : NdArray<T>(leaf.shape());
    for (std::size_t idx : coords) {
      T& slot = leaf.mutable_value()[idx];
      const T original = slot;
      auto central = [&](T step, bool& kink) {
        std::uint64_t sig_plus = 0, sig_minus = 0;
        slot = original + step;
        const double f_plus = evaluate(sig_plus);
        slot = original - step;
        const double f_minus = evaluate(sig_minus);
        slot = original;
        kink = kink || sig_plus != sig_minus;
        return std::pair{(f_plus - f_minus) / (2.0 * static_cast<double>(step)), sig_plus};
      };
      bool kink = false;
      auto [numeric, sig] = central(h, kink);
      if (opts.richardson && !kink) {
        const auto [half, sig_half] = central(h / 2, kink);
        kink = kink || sig_half != sig;
        numeric = (4.0 * half - numeric) / 3.0;
      }
      if (kink) {
        ++report.excluded_kinks;
        continue;
      }
      const double a = static_cast<double>(analytic[idx]);
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel >= report.max_relative_error) {
        report.max_relative_error = rel;
        std::ostringstream oss;
        oss << "leaf" << li << "[" << idx << "] analytic=" << a << " numeric=" << numeric;
        report.worst = oss.str();
      }
    }
  }
  report.passed = report.max_relative_error <= opts.tolerance;
  return report;
}

// Convenience form: checks `fn(inputs)` at `point`.
template <typename T, typename Fn>
GradCheckReport grad_check_at(Fn&& fn, const std::vector<NdArray<T>>& point,
                              const GradCheckOptions& opts = {}) {
  std::vector<Tensor<T>> leaves;
  for (const auto& p : point) leaves.push_back(Tensor<T>::parameter(p));
  return grad_check<T>([&] { return fn(leaves); }, leaves, opts);
}

}  // namespace signflow
