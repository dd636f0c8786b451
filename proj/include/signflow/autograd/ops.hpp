#pragma once

// Differentiable primitives. Each primitive validates operand shapes, rejects
// non-finite inputs, and records itself on the active graph whenever one of
// its inputs requires a gradient.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "signflow/autograd/tensor.hpp"
#include "signflow/core/error.hpp"
#include "signflow/core/ndarray.hpp"

namespace signflow {

namespace detail {

template <typename T>
void require_finite(const char* op, const Tensor<T>& t) {
  if (!t.defined()) throw ValueError(std::string(op) + ": undefined operand");
  if (!t.value().all_finite())
    throw NonFiniteError(std::string(op) + ": non-finite value in operand of shape " +
                     shape_string(t.shape()));
}

template <typename T>
[[noreturn]] void shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(concat(op, ": shape mismatch ", shape_string(a), " vs ",
                          shape_string(b)));
}

// Grad buffer of `node`, or nullptr when the node does not want one.
template <typename T>
NdArray<T>* grad_sink(const std::shared_ptr<Node<T>>& node) {
  return node->requires_grad ? &node->grad_buffer() : nullptr;
}

template <typename T, typename Backward>
Tensor<T> make_result(const char* op, NdArray<T> value,
                      std::initializer_list<Tensor<T>> inputs, Backward&& backward) {
  Tensor<T> out(std::move(value));
  Graph<T>* graph = Graph<T>::active();
  if (!graph) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.node()->requires_grad = true;
  std::vector<std::shared_ptr<Node<T>>> nodes;
  for (const auto& in : inputs) nodes.push_back(in.node());
  graph->record(op, out.node(), std::move(nodes), std::forward<Backward>(backward));
  return out;
}

// While installed, piecewise-linear primitives fold their active branch
// (relu sign pattern, pooling argmax) into `signature`. Two evaluations with
// different signatures straddle a non-differentiable point.
struct KinkMonitor {
  std::uint64_t signature = 1469598103934665603ull;
  void mix(std::uint64_t v) {
    signature ^= v + 0x9e3779b97f4a7c15ull;
    signature *= 1099511628211ull;
  }
};

inline thread_local KinkMonitor* kink_monitor = nullptr;

template <typename T>
void add_into(NdArray<T>& dst, const NdArray<T>& src, T alpha = T{1}) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0, n = src.size(); i < n; ++i) d[i] += alpha * s[i];
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_finite("add", a);
  detail::require_finite("add", b);
  if (a.shape() != b.shape()) detail::shape_mismatch<T>("add", a.shape(), b.shape());
  NdArray<T> out = a.value();
  detail::add_into(out, b.value());
  auto na = a.node(), nb = b.node();
  return detail::make_result<T>("add", std::move(out), {a, b}, [na, nb](const NdArray<T>& g) {
    if (auto* ga = detail::grad_sink(na)) detail::add_into(*ga, g);
    if (auto* gb = detail::grad_sink(nb)) detail::add_into(*gb, g);
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_finite("sub", a);
  detail::require_finite("sub", b);
  if (a.shape() != b.shape()) detail::shape_mismatch<T>("sub", a.shape(), b.shape());
  NdArray<T> out = a.value();
  detail::add_into(out, b.value(), T{-1});
  auto na = a.node(), nb = b.node();
  return detail::make_result<T>("sub", std::move(out), {a, b}, [na, nb](const NdArray<T>& g) {
    if (auto* ga = detail::grad_sink(na)) detail::add_into(*ga, g);
    if (auto* gb = detail::grad_sink(nb)) detail::add_into(*gb, g, T{-1});
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_finite("mul", a);
  detail::require_finite("mul", b);
  if (a.shape() != b.shape()) detail::shape_mismatch<T>("mul", a.shape(), b.shape());
  NdArray<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  auto na = a.node(), nb = b.node();
  return detail::make_result<T>("mul", std::move(out), {a, b}, [na, nb](const NdArray<T>& g) {
    if (auto* ga = detail::grad_sink(na))
      for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] * nb->value[i];
    if (auto* gb = detail::grad_sink(nb))
      for (std::size_t i = 0; i < g.size(); ++i) (*gb)[i] += g[i] * na->value[i];
  });
}

// scale * x + shift
template <typename T>
Tensor<T> affine(const Tensor<T>& x, T scale, T shift = T{0}) {
  detail::require_finite("affine", x);
  NdArray<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x.value()[i] + shift;
  auto nx = x.node();
  return detail::make_result<T>("affine", std::move(out), {x}, [nx, scale](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx)) detail::add_into(*gx, g, scale);
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T factor) {
  return affine(x, factor, T{0});
}

// x[..., n] + bias[n]: the only broadcast the library permits.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::require_finite("add_bias", x);
  detail::require_finite("add_bias", bias);
  if (bias.value().rank() != 1 || bias.size() != x.value().cols())
    detail::shape_mismatch<T>("add_bias", x.shape(), bias.shape());
  const std::size_t n = bias.size(), rows = x.value().rows();
  NdArray<T> out = x.value();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += bias.value()[c];
  auto nx = x.node(), nb = bias.node();
  return detail::make_result<T>("add_bias", std::move(out), {x, bias},
                                [nx, nb, n, rows](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx)) detail::add_into(*gx, g);
    if (auto* gb = detail::grad_sink(nb))
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) (*gb)[c] += g[r * n + c];
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  detail::require_finite("relu", x);
  NdArray<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.value()[i], T{0});
  if (auto* km = detail::kink_monitor)
    for (T v : x.value().values()) km->mix(v > T{0} ? 1u : (v == T{0} ? 2u : 0u));
  auto nx = x.node();
  return detail::make_result<T>("relu", std::move(out), {x}, [nx](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx))
      for (std::size_t i = 0; i < g.size(); ++i)
        if (nx->value[i] > T{0}) (*gx)[i] += g[i];
  });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& x) {
  detail::require_finite("exp", x);
  NdArray<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]);
  auto nx = x.node();
  auto result = detail::make_result<T>("exp", out, {x}, [nx, out](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * out[i];
  });
  return result;
}

template <typename T>
Tensor<T> log(const Tensor<T>& x) {
  detail::require_finite("log", x);
  NdArray<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x.value()[i] > T{0}))
      throw ValueError(detail::concat("log: non-positive input ", x.value()[i]));
    out[i] = std::log(x.value()[i]);
  }
  auto nx = x.node();
  return detail::make_result<T>("log", std::move(out), {x}, [nx](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] / nx->value[i];
  });
}

// ---------------------------------------------------------------- reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  detail::require_finite("sum", x);
  T total{0};
  for (T v : x.value().values()) total += v;
  auto nx = x.node();
  return detail::make_result<T>("sum", NdArray<T>::scalar(total), {x}, [nx](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx))
      for (auto& v : gx->values()) v += g[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

// ---------------------------------------------------------------- linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_finite("matmul", a);
  detail::require_finite("matmul", b);
  if (a.value().rank() != 2 || b.value().rank() != 2 || a.dim(1) != b.dim(0))
    detail::shape_mismatch<T>("matmul", a.shape(), b.shape());
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  NdArray<T> out(Shape{m, n});
  const T* A = a.value().data();
  const T* B = b.value().data();
  T* C = out.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const T av = A[i * k + p];
      if (av == T{0}) continue;
      const T* brow = B + p * n;
      T* crow = C + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  auto na = a.node(), nb = b.node();
  return detail::make_result<T>("matmul", std::move(out), {a, b},
                                [na, nb, m, k, n](const NdArray<T>& g) {
    const T* G = g.data();
    if (auto* ga = detail::grad_sink(na)) {
      // dA = G * B^T
      const T* B = nb->value.data();
      T* dA = ga->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T* brow = B + p * n;
          const T* grow = G + i * n;
          T acc{0};
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          dA[i * k + p] += acc;
        }
    }
    if (auto* gb = detail::grad_sink(nb)) {
      // dB = A^T * G
      const T* A = na->value.data();
      T* dB = gb->data();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const T av = A[i * k + p];
          if (av == T{0}) continue;
          const T* grow = G + i * n;
          T* drow = dB + p * n;
          for (std::size_t j = 0; j < n; ++j) drow[j] += av * grow[j];
        }
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_finite("transpose", x);
  if (x.value().rank() != 2)
    throw ShapeError("transpose: expected rank 2, got " + shape_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  NdArray<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out(j, i) = x.value()(i, j);
  auto nx = x.node();
  return detail::make_result<T>("transpose", std::move(out), {x}, [nx, r, c](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx))
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) (*gx)(i, j) += g(j, i);
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  detail::require_finite("reshape", x);
  NdArray<T> out = x.value().reshaped(std::move(shape));
  auto nx = x.node();
  return detail::make_result<T>("reshape", std::move(out), {x}, [nx](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx)) detail::add_into(*gx, g);
  });
}

// Concatenation along `axis`; all other extents must agree.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size())
    throw ShapeError(detail::concat("concat: axis ", axis, " out of range for ",
                                    shape_string(ref)));
  Shape out_shape = ref;
  out_shape[axis] = 0;
  for (const auto& p : parts) {
    detail::require_finite("concat", p);
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d)
      if (d != axis && s[d] != ref[d]) ok = false;
    if (!ok) detail::shape_mismatch<T>("concat", ref, s);
    out_shape[axis] += s[axis];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= ref[d];
  for (std::size_t d = axis + 1; d < ref.size(); ++d) inner *= ref[d];
  const std::size_t out_stride = out_shape[axis] * inner;

  NdArray<T> out(out_shape);
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    offsets.push_back(offset);
    const std::size_t chunk = p.shape()[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o)
      std::copy_n(p.value().data() + o * chunk, chunk,
                  out.data() + o * out_stride + offset);
    offset += chunk;
  }

  Tensor<T> result(std::move(out));
  Graph<T>* graph = Graph<T>::active();
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (graph && any) {
    result.node()->requires_grad = true;
    std::vector<std::shared_ptr<Node<T>>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    graph->record("concat", result.node(), nodes,
                  [nodes, offsets, outer, out_stride](const NdArray<T>& g) {
      for (std::size_t i = 0; i < nodes.size(); ++i) {
        auto* gp = detail::grad_sink(nodes[i]);
        if (!gp) continue;
        const std::size_t chunk = gp->size() / outer;
        for (std::size_t o = 0; o < outer; ++o) {
          const T* src = g.data() + o * out_stride + offsets[i];
          T* dst = gp->data() + o * chunk;
          for (std::size_t j = 0; j < chunk; ++j) dst[j] += src[j];
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------- softmax family

enum class AttentionMask { kNone, kCausal };

// Softmax over the last axis. With kCausal (rank-2 input), entry (i, j) for
// j > i is excluded and comes out exactly zero.
template <typename T>
Tensor<T> softmax(const Tensor<T>& x, AttentionMask mask = AttentionMask::kNone) {
  detail::require_finite("softmax", x);
  if (mask == AttentionMask::kCausal && x.value().rank() != 2)
    throw ShapeError("softmax: causal mask needs a rank-2 score matrix, got " +
                     shape_string(x.shape()));
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  NdArray<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t visible =
        mask == AttentionMask::kCausal ? std::min(cols, r + 1) : cols;
    const T* in = x.value().data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + visible);
    T total{0};
    for (std::size_t c = 0; c < visible; ++c) total += (o[c] = std::exp(in[c] - mx));
    for (std::size_t c = 0; c < visible; ++c) o[c] /= total;
  }
  auto nx = x.node();
  return detail::make_result<T>("softmax", out, {x}, [nx, out, rows, cols](const NdArray<T>& g) {
    auto* gx = detail::grad_sink(nx);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = out.data() + r * cols;
      const T* gr = g.data() + r * cols;
      T dot{0};
      for (std::size_t c = 0; c < cols; ++c) dot += gr[c] * y[c];
      T* d = gx->data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) d[c] += y[c] * (gr[c] - dot);
    }
  });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x) {
  detail::require_finite("log_softmax", x);
  const std::size_t rows = x.value().rows(), cols = x.value().cols();
  NdArray<T> out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * cols;
    T* o = out.data() + r * cols;
    const T mx = *std::max_element(in, in + cols);
    T total{0};
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(in[c] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) o[c] = in[c] - lse;
  }
  auto nx = x.node();
  return detail::make_result<T>("log_softmax", out, {x}, [nx, out, rows, cols](const NdArray<T>& g) {
    auto* gx = detail::grad_sink(nx);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = out.data() + r * cols;
      const T* gr = g.data() + r * cols;
      T total{0};
      for (std::size_t c = 0; c < cols; ++c) total += gr[c];
      T* d = gx->data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) d[c] += gr[c] - std::exp(y[c]) * total;
    }
  });
}

// Mean of -log_probs[m, targets[m]] over positions whose target != ignore.
template <typename T>
Tensor<T> nll_loss(const Tensor<T>& log_probs, std::span<const int> targets, int ignore) {
  detail::require_finite("nll_loss", log_probs);
  if (log_probs.value().rank() != 2 || log_probs.dim(0) != targets.size())
    throw ShapeError(detail::concat("nll_loss: log-probs ", shape_string(log_probs.shape()),
                                    " vs ", targets.size(), " targets"));
  const std::size_t cols = log_probs.dim(1);
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  for (std::size_t m = 0; m < targets.size(); ++m) {
    if (targets[m] == ignore) continue;
    if (targets[m] < 0 || static_cast<std::size_t>(targets[m]) >= cols)
      throw ValueError(detail::concat("nll_loss: target id ", targets[m],
                                      " outside [0, ", cols, ")"));
    picks.emplace_back(m, static_cast<std::size_t>(targets[m]));
  }
  if (picks.empty()) throw ValueError("nll_loss: every target position is padding");
  T total{0};
  for (auto [m, c] : picks) total -= log_probs.value()(m, c);
  const T inv = T{1} / static_cast<T>(picks.size());
  auto nx = log_probs.node();
  return detail::make_result<T>("nll_loss", NdArray<T>::scalar(total * inv), {log_probs},
                                [nx, picks, inv](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx))
      for (auto [m, c] : picks) (*gx)(m, c) -= g[0] * inv;
  });
}

// ---------------------------------------------------------------- lookup / regularization

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const int> ids) {
  detail::require_finite("embedding", table);
  if (table.value().rank() != 2)
    throw ShapeError("embedding: table must be rank 2, got " + shape_string(table.shape()));
  const std::size_t vocab = table.dim(0), width = table.dim(1);
  if (ids.empty()) throw ShapeError("embedding: empty id sequence");
  NdArray<T> out(Shape{ids.size(), width});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab)
      throw ValueError(detail::concat("embedding: unknown id ", ids[i], " (vocabulary size ",
                                      vocab, ")"));
    std::copy_n(table.value().data() + ids[i] * width, width, out.data() + i * width);
  }
  auto nt = table.node();
  std::vector<int> rows(ids.begin(), ids.end());
  return detail::make_result<T>("embedding", std::move(out), {table},
                                [nt, rows, width](const NdArray<T>& g) {
    if (auto* gt = detail::grad_sink(nt))
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < width; ++c) (*gt)(rows[i], c) += g(i, c);
  });
}

// Inverted dropout: kept entries are scaled by 1/(1-p) so inference is a no-op.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, T p, std::mt19937_64& rng, bool training) {
  detail::require_finite("dropout", x);
  if (!(p >= T{0} && p < T{1})) throw ValueError(detail::concat("dropout: rate ", p, " not in [0,1)"));
  if (!training || p == T{0}) return x;
  NdArray<T> mask(x.shape());
  std::bernoulli_distribution keep(1.0 - static_cast<double>(p));
  const T s = T{1} / (T{1} - p);
  for (auto& m : mask.values()) m = keep(rng) ? s : T{0};
  NdArray<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * mask[i];
  auto nx = x.node();
  return detail::make_result<T>("dropout", std::move(out), {x}, [nx, mask](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
  });
}

// ---------------------------------------------------------------- normalization

// Normalization over the last axis of every row.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  detail::require_finite("layer_norm", x);
  detail::require_finite("layer_norm", gamma);
  detail::require_finite("layer_norm", beta);
  const std::size_t n = x.value().cols(), rows = x.value().rows();
  if (gamma.value().rank() != 1 || gamma.size() != n) detail::shape_mismatch<T>("layer_norm", x.shape(), gamma.shape());
  if (beta.shape() != gamma.shape()) detail::shape_mismatch<T>("layer_norm", gamma.shape(), beta.shape());
  NdArray<T> xhat(x.shape()), out(x.shape());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = x.value().data() + r * n;
    T mu{0};
    for (std::size_t c = 0; c < n; ++c) mu += in[c];
    mu /= static_cast<T>(n);
    T var{0};
    for (std::size_t c = 0; c < n; ++c) var += (in[c] - mu) * (in[c] - mu);
    var /= static_cast<T>(n);
    inv_std[r] = T{1} / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      xhat[r * n + c] = (in[c] - mu) * inv_std[r];
      out[r * n + c] = gamma.value()[c] * xhat[r * n + c] + beta.value()[c];
    }
  }
  auto nx = x.node(), ng = gamma.node(), nb = beta.node();
  return detail::make_result<T>("layer_norm", std::move(out), {x, gamma, beta},
                                [nx, ng, nb, xhat, inv_std, n, rows](const NdArray<T>& g) {
    auto* gx = detail::grad_sink(nx);
    auto* gg = detail::grad_sink(ng);
    auto* gb = detail::grad_sink(nb);
    std::vector<T> gxhat(n);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* gr = g.data() + r * n;
      const T* xh = xhat.data() + r * n;
      if (gg) for (std::size_t c = 0; c < n; ++c) (*gg)[c] += gr[c] * xh[c];
      if (gb) for (std::size_t c = 0; c < n; ++c) (*gb)[c] += gr[c];
      if (!gx) continue;
      T s1{0}, s2{0};
      for (std::size_t c = 0; c < n; ++c) {
        gxhat[c] = gr[c] * ng->value[c];
        s1 += gxhat[c];
        s2 += gxhat[c] * xh[c];
      }
      T* d = gx->data() + r * n;
      const T invn = T{1} / static_cast<T>(n);
      for (std::size_t c = 0; c < n; ++c)
        d[c] += inv_std[r] * (gxhat[c] - invn * s1 - xh[c] * invn * s2);
    }
  });
}

template <typename T>
struct BatchNormStats {
  NdArray<T> running_mean;
  NdArray<T> running_var;

  explicit BatchNormStats(std::size_t channels = 1)
      : running_mean(Shape{channels}, T{0}), running_var(Shape{channels}, T{1}) {}
};

// Per-channel normalization over every leading position of a single sample.
// Training mode uses the sample's own statistics (and updates the running
// estimates); inference mode uses the running estimates.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     BatchNormStats<T>& stats, bool training, T momentum = T(0.1),
                     T eps = T(1e-5)) {
  detail::require_finite("batch_norm", x);
  detail::require_finite("batch_norm", gamma);
  detail::require_finite("batch_norm", beta);
  const std::size_t ch = x.value().cols(), count = x.value().rows();
  if (gamma.value().rank() != 1 || gamma.size() != ch) detail::shape_mismatch<T>("batch_norm", x.shape(), gamma.shape());
  if (beta.shape() != gamma.shape()) detail::shape_mismatch<T>("batch_norm", gamma.shape(), beta.shape());
  if (stats.running_mean.size() != ch) detail::shape_mismatch<T>("batch_norm", x.shape(), stats.running_mean.shape());

  std::vector<T> mu(ch, T{0}), var(ch, T{0}), inv_std(ch);
  const T* in = x.value().data();
  if (training) {
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < ch; ++c) mu[c] += in[i * ch + c];
    for (auto& m : mu) m /= static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < ch; ++c) {
        const T d = in[i * ch + c] - mu[c];
        var[c] += d * d;
      }
    for (auto& v : var) v /= static_cast<T>(count);
    const T unbias = count > 1 ? static_cast<T>(count) / static_cast<T>(count - 1) : T{1};
    for (std::size_t c = 0; c < ch; ++c) {
      stats.running_mean[c] = (T{1} - momentum) * stats.running_mean[c] + momentum * mu[c];
      stats.running_var[c] = (T{1} - momentum) * stats.running_var[c] + momentum * var[c] * unbias;
    }
  } else {
    for (std::size_t c = 0; c < ch; ++c) {
      mu[c] = stats.running_mean[c];
      var[c] = stats.running_var[c];
    }
  }
  for (std::size_t c = 0; c < ch; ++c) inv_std[c] = T{1} / std::sqrt(var[c] + eps);

  NdArray<T> xhat(x.shape()), out(x.shape());
  for (std::size_t i = 0; i < count; ++i)
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t k = i * ch + c;
      xhat[k] = (in[k] - mu[c]) * inv_std[c];
      out[k] = gamma.value()[c] * xhat[k] + beta.value()[c];
    }

  auto nx = x.node(), ng = gamma.node(), nb = beta.node();
  return detail::make_result<T>("batch_norm", std::move(out), {x, gamma, beta},
                                [nx, ng, nb, xhat, inv_std, ch, count, training](const NdArray<T>& g) {
    auto* gx = detail::grad_sink(nx);
    auto* gg = detail::grad_sink(ng);
    auto* gb = detail::grad_sink(nb);
    std::vector<T> s1(ch, T{0}), s2(ch, T{0});
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t k = i * ch + c;
        s1[c] += g[k];
        s2[c] += g[k] * xhat[k];
      }
    if (gg) for (std::size_t c = 0; c < ch; ++c) (*gg)[c] += s2[c];
    if (gb) for (std::size_t c = 0; c < ch; ++c) (*gb)[c] += s1[c];
    if (!gx) return;
    const T invn = T{1} / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i)
      for (std::size_t c = 0; c < ch; ++c) {
        const std::size_t k = i * ch + c;
        const T gamma_c = ng->value[c];
        if (training)
          (*gx)[k] += gamma_c * inv_std[c] * (g[k] - invn * s1[c] - xhat[k] * invn * s2[c]);
        else
          (*gx)[k] += gamma_c * inv_std[c] * g[k];
      }
  });
}

// ---------------------------------------------------------------- volumetric

using Triple = std::array<std::size_t, 3>;

inline std::size_t window_output(std::size_t in, std::size_t kernel, std::size_t stride,
                                 std::size_t pad) {
  if (in + 2 * pad < kernel || stride == 0) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

// x: (T, H, W, Cin), weight: (kT, kH, kW, Cin, Cout), bias: (Cout) or undefined.
// Zero padding. Output (T', H', W', Cout).
template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                 Triple stride, Triple pad) {
  detail::require_finite("conv3d", x);
  detail::require_finite("conv3d", weight);
  const bool has_bias = bias.defined();
  if (has_bias) detail::require_finite("conv3d", bias);
  if (x.value().rank() != 4 || weight.value().rank() != 5 || weight.dim(3) != x.dim(3))
    detail::shape_mismatch<T>("conv3d", x.shape(), weight.shape());
  const std::size_t ci = x.dim(3), co = weight.dim(4);
  if (has_bias && (bias.value().rank() != 1 || bias.size() != co))
    detail::shape_mismatch<T>("conv3d", weight.shape(), bias.shape());
  const Triple in{x.dim(0), x.dim(1), x.dim(2)};
  const Triple k{weight.dim(0), weight.dim(1), weight.dim(2)};
  Triple out;
  for (int d = 0; d < 3; ++d) {
    out[d] = window_output(in[d], k[d], stride[d], pad[d]);
    if (out[d] == 0)
      throw ShapeError(detail::concat("conv3d: kernel ", shape_string(weight.shape()),
                                      " does not fit input ", shape_string(x.shape())));
  }

  // Visit every (output voxel, kernel tap) pair that lands inside the input.
  auto for_each_tap = [in, k, out, stride, pad, ci, co](auto&& fn) {
    for (std::size_t ot = 0; ot < out[0]; ++ot)
      for (std::size_t oh = 0; oh < out[1]; ++oh)
        for (std::size_t ow = 0; ow < out[2]; ++ow) {
          const std::size_t o_idx = ((ot * out[1] + oh) * out[2] + ow) * co;
          for (std::size_t a = 0; a < k[0]; ++a) {
            const std::ptrdiff_t it = static_cast<std::ptrdiff_t>(ot * stride[0] + a) - static_cast<std::ptrdiff_t>(pad[0]);
            if (it < 0 || it >= static_cast<std::ptrdiff_t>(in[0])) continue;
            for (std::size_t b = 0; b < k[1]; ++b) {
              const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * stride[1] + b) - static_cast<std::ptrdiff_t>(pad[1]);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(in[1])) continue;
              for (std::size_t c = 0; c < k[2]; ++c) {
                const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * stride[2] + c) - static_cast<std::ptrdiff_t>(pad[2]);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(in[2])) continue;
                const std::size_t i_idx = ((static_cast<std::size_t>(it) * in[1] + static_cast<std::size_t>(ih)) * in[2] +
                                           static_cast<std::size_t>(iw)) * ci;
                const std::size_t w_idx = ((a * k[1] + b) * k[2] + c) * ci * co;
                fn(o_idx, i_idx, w_idx);
              }
            }
          }
        }
  };

  NdArray<T> result(Shape{out[0], out[1], out[2], co});
  {
    const T* X = x.value().data();
    const T* Wt = weight.value().data();
    T* Y = result.data();
    if (has_bias) {
      const std::size_t voxels = out[0] * out[1] * out[2];
      for (std::size_t v = 0; v < voxels; ++v)
        std::copy_n(bias.value().data(), co, Y + v * co);
    }
    for_each_tap([X, Wt, Y, ci, co](std::size_t o_idx, std::size_t i_idx, std::size_t w_idx) {
      T* y = Y + o_idx;
      for (std::size_t p = 0; p < ci; ++p) {
        const T v = X[i_idx + p];
        if (v == T{0}) continue;
        const T* w = Wt + w_idx + p * co;
        for (std::size_t q = 0; q < co; ++q) y[q] += v * w[q];
      }
    });
  }

  auto nx = x.node(), nw = weight.node();
  auto nb = has_bias ? bias.node() : nullptr;
  auto backward = [nx, nw, nb, for_each_tap, ci, co](const NdArray<T>& g) {
    const T* G = g.data();
    if (auto* gx = detail::grad_sink(nx)) {
      const T* Wt = nw->value.data();
      T* DX = gx->data();
      for_each_tap([G, Wt, DX, ci, co](std::size_t o_idx, std::size_t i_idx, std::size_t w_idx) {
        const T* gy = G + o_idx;
        for (std::size_t p = 0; p < ci; ++p) {
          const T* w = Wt + w_idx + p * co;
          T acc{0};
          for (std::size_t q = 0; q < co; ++q) acc += w[q] * gy[q];
          DX[i_idx + p] += acc;
        }
      });
    }
    if (auto* gw = detail::grad_sink(nw)) {
      const T* X = nx->value.data();
      T* DW = gw->data();
      for_each_tap([G, X, DW, ci, co](std::size_t o_idx, std::size_t i_idx, std::size_t w_idx) {
        const T* gy = G + o_idx;
        for (std::size_t p = 0; p < ci; ++p) {
          const T v = X[i_idx + p];
          if (v == T{0}) continue;
          T* dw = DW + w_idx + p * co;
          for (std::size_t q = 0; q < co; ++q) dw[q] += v * gy[q];
        }
      });
    }
    if (nb) {
      if (auto* gb = detail::grad_sink(nb)) {
        const std::size_t voxels = g.size() / co;
        for (std::size_t v = 0; v < voxels; ++v)
          for (std::size_t q = 0; q < co; ++q) (*gb)[q] += G[v * co + q];
      }
    }
  };
  if (has_bias) return detail::make_result<T>("conv3d", std::move(result), {x, weight, bias}, backward);
  return detail::make_result<T>("conv3d", std::move(result), {x, weight}, backward);
}

// Max pooling over (T, H, W, C) windows; padded positions never win.
template <typename T>
Tensor<T> max_pool3d(const Tensor<T>& x, Triple kernel, Triple stride, Triple pad) {
  detail::require_finite("max_pool3d", x);
  if (x.value().rank() != 4)
    throw ShapeError("max_pool3d: expected (T, H, W, C), got " + shape_string(x.shape()));
  const std::size_t ch = x.dim(3);
  const Triple in{x.dim(0), x.dim(1), x.dim(2)};
  Triple out;
  for (int d = 0; d < 3; ++d) {
    if (pad[d] * 2 > kernel[d])
      throw ShapeError(detail::concat("max_pool3d: padding ", pad[d], " exceeds half kernel ", kernel[d]));
    out[d] = window_output(in[d], kernel[d], stride[d], pad[d]);
    if (out[d] == 0)
      throw ShapeError(detail::concat("max_pool3d: window does not fit input ", shape_string(x.shape())));
  }
  NdArray<T> result(Shape{out[0], out[1], out[2], ch});
  std::vector<std::size_t> argmax(result.size());
  const T* X = x.value().data();
  auto clamp_range = [](std::size_t o, std::size_t s, std::size_t p, std::size_t kk, std::size_t n) {
    const std::ptrdiff_t lo = static_cast<std::ptrdiff_t>(o * s) - static_cast<std::ptrdiff_t>(p);
    const std::ptrdiff_t hi = lo + static_cast<std::ptrdiff_t>(kk);
    return std::pair<std::size_t, std::size_t>{static_cast<std::size_t>(std::max<std::ptrdiff_t>(lo, 0)),
                                               static_cast<std::size_t>(std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(n)))};
  };
  for (std::size_t ot = 0; ot < out[0]; ++ot) {
    const auto [t0, t1] = clamp_range(ot, stride[0], pad[0], kernel[0], in[0]);
    for (std::size_t oh = 0; oh < out[1]; ++oh) {
      const auto [h0, h1] = clamp_range(oh, stride[1], pad[1], kernel[1], in[1]);
      for (std::size_t ow = 0; ow < out[2]; ++ow) {
        const auto [w0, w1] = clamp_range(ow, stride[2], pad[2], kernel[2], in[2]);
        const std::size_t o_idx = ((ot * out[1] + oh) * out[2] + ow) * ch;
        for (std::size_t c = 0; c < ch; ++c) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t arg = 0;
          for (std::size_t t = t0; t < t1; ++t)
            for (std::size_t h = h0; h < h1; ++h)
              for (std::size_t w = w0; w < w1; ++w) {
                const std::size_t i_idx = ((t * in[1] + h) * in[2] + w) * ch + c;
                if (X[i_idx] > best) {
                  best = X[i_idx];
                  arg = i_idx;
                }
              }
          result[o_idx + c] = best;
          argmax[o_idx + c] = arg;
        }
      }
    }
  }
  if (auto* km = detail::kink_monitor)
    for (std::size_t a : argmax) km->mix(a);
  auto nx = x.node();
  return detail::make_result<T>("max_pool3d", std::move(result), {x}, [nx, argmax](const NdArray<T>& g) {
    if (auto* gx = detail::grad_sink(nx))
      for (std::size_t i = 0; i < g.size(); ++i) (*gx)[argmax[i]] += g[i];
  });
}

}  // namespace signflow
