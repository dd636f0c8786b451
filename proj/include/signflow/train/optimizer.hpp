#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "signflow/core/error.hpp"
#include "signflow/core/ndarray.hpp"
#include "signflow/nn/layers.hpp"

namespace signflow {

template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // One update over `params` with the gradients currently stored on them.
  // Parameters without a gradient keep their moments and value.
  void step(ParameterList<T>& params, double lr) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.tensor.shape());
        v_.emplace_back(p.tensor.shape());
      }
    }
    if (m_.size() != params.size()) throw StateError("adam: parameter list changed between steps");
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].tensor;
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto& w = p.mutable_value();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < w.size(); ++k) {
        const double gk = static_cast<double>(g[k]);
        const double mk = beta1_ * static_cast<double>(m[k]) + (1 - beta1_) * gk;
        const double vk = beta2_ * static_cast<double>(v[k]) + (1 - beta2_) * gk * gk;
        m[k] = static_cast<T>(mk);
        v[k] = static_cast<T>(vk);
        w[k] = static_cast<T>(static_cast<double>(w[k]) - lr * (mk / c1) / (std::sqrt(vk / c2) + eps_));
      }
    }
  }

  std::uint64_t steps() const { return t_; }
  std::vector<NdArray<T>>& first_moments() { return m_; }
  std::vector<NdArray<T>>& second_moments() { return v_; }
  void set_state(std::uint64_t steps, std::vector<NdArray<T>> m, std::vector<NdArray<T>> v) {
    if (m.size() != v.size()) throw StateError("adam: moment lists differ in length");
    t_ = steps;
    m_ = std::move(m);
    v_ = std::move(v);
  }

 private:
  double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::uint64_t t_ = 0;
  std::vector<NdArray<T>> m_, v_;
};

template <typename T>
double gradient_norm(const ParameterList<T>& params) {
  double s = 0;
  for (const auto& p : params)
    if (p.tensor.has_grad())
      for (T g : p.tensor.grad().values()) s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

// Rescales all gradients so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_gradients(ParameterList<T>& params, double max_norm) {
  const double norm = gradient_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const double f = max_norm / norm;
    for (auto& p : params)
      if (p.tensor.has_grad())
        for (auto& g : p.tensor.mutable_grad().values()) g = static_cast<T>(static_cast<double>(g) * f);
  }
  return norm;
}

}  // namespace signflow
