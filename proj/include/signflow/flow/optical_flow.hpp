#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "signflow/core/error.hpp"
#include "signflow/flow/image.hpp"

namespace signflow::flow {

struct FlowParams {
  double alpha = 0.02;          // smoothness weight
  double gamma = 0.5;           // gradient-constancy weight
  double epsilon = 1e-3;        // robust penalizer: sqrt(s^2 + eps^2)
  double scale_factor = 0.5;    // pyramid downsampling ratio
  int levels = 4;
  int warp_iterations = 5;
  int inner_iterations = 10;    // lagged-nonlinearity fixed-point steps
  int sor_iterations = 10;      // linear solver sweeps per fixed-point step
  double sor_omega = 1.8;
  double presmooth_sigma = 0.8;
  int min_level_size = 8;       // coarser levels than this are dropped
  // Block matching to seed large displacements. It runs on the coarsest
  // pyramid level at least match_min_size pixels across; coarser levels
  // are then skipped.
  bool descriptor_matching = false;
  int match_radius = 6;
  int match_patch = 3;
  int match_min_size = 24;
};

// Dense velocity field (dx, dy) in pixels per frame.
struct FlowField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> u, v;
  bool degenerate = false;  // set when a frame had no intensity variation

  FlowField() = default;
  FlowField(std::size_t w, std::size_t h) : width(w), height(h), u(w * h, 0.0), v(w * h, 0.0) {}
};

namespace detail {

inline bool is_constant(const Image& img) {
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  return *hi - *lo < 1e-9;
}

// Central differences with replicated borders.
inline void gradient(const Image& img, Image& gx, Image& gy) {
  gx = Image(img.width, img.height);
  gy = Image(img.width, img.height);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const long xi = static_cast<long>(x), yi = static_cast<long>(y);
      gx.at(x, y) = 0.5 * (img.clamped(xi + 1, yi) - img.clamped(xi - 1, yi));
      gy.at(x, y) = 0.5 * (img.clamped(xi, yi + 1) - img.clamped(xi, yi - 1));
    }
}

inline Image warp(const Image& img, const std::vector<double>& u, const std::vector<double>& v,
                  std::vector<unsigned char>* inside = nullptr) {
  Image out(img.width, img.height);
  if (inside) inside->assign(img.width * img.height, 1);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      const std::size_t i = y * img.width + x;
      const double px = x + u[i], py = y + v[i];
      out.pixels[i] = img.bilinear(px, py);
      if (inside && (px < 0 || py < 0 || px > img.width - 1.0 || py > img.height - 1.0))
        (*inside)[i] = 0;
    }
  return out;
}

inline std::vector<double> resize_field(const std::vector<double>& f, std::size_t w, std::size_t h,
                                        std::size_t nw, std::size_t nh, double gain) {
  Image src(w, h);
  src.pixels = f;
  Image dst(nw, nh);
  const double sx = static_cast<double>(w) / nw, sy = static_cast<double>(h) / nh;
  for (std::size_t y = 0; y < nh; ++y)
    for (std::size_t x = 0; x < nw; ++x)
      dst.at(x, y) = gain * src.bilinear((x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return dst.pixels;
}

inline double median(std::vector<double> values) {
  const auto mid = values.begin() + static_cast<long>(values.size() / 2);
  std::nth_element(values.begin(), mid, values.end());
  return *mid;
}

// Integer block matching on the coarsest level, median-filtered.
inline void block_match(const Image& a, const Image& b, const FlowParams& p, FlowField& out) {
  const long r = p.match_radius, half = p.match_patch;
  const long w = static_cast<long>(a.width), h = static_cast<long>(a.height);
  std::vector<double> u(a.pixels.size()), v(a.pixels.size());
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      double best = std::numeric_limits<double>::infinity();
      long bu = 0, bv = 0;
      for (long dy = -r; dy <= r; ++dy)
        for (long dx = -r; dx <= r; ++dx) {
          double ssd = 0;
          for (long py = -half; py <= half; ++py)
            for (long px = -half; px <= half; ++px) {
              const double d = a.clamped(x + px, y + py) - b.clamped(x + px + dx, y + py + dy);
              ssd += d * d;
            }
          ssd += 1e-9 * static_cast<double>(dx * dx + dy * dy);  // prefer small motion on ties
          if (ssd < best) {
            best = ssd;
            bu = dx;
            bv = dy;
          }
        }
      u[static_cast<std::size_t>(y * w + x)] = static_cast<double>(bu);
      v[static_cast<std::size_t>(y * w + x)] = static_cast<double>(bv);
    }
  for (long y = 0; y < h; ++y)
    for (long x = 0; x < w; ++x) {
      std::vector<double> nu, nv;
      for (long py = -1; py <= 1; ++py)
        for (long px = -1; px <= 1; ++px) {
          const long cx = std::clamp(x + px, 0L, w - 1), cy = std::clamp(y + py, 0L, h - 1);
          nu.push_back(u[static_cast<std::size_t>(cy * w + cx)]);
          nv.push_back(v[static_cast<std::size_t>(cy * w + cx)]);
        }
      out.u[static_cast<std::size_t>(y * w + x)] = median(nu);
      out.v[static_cast<std::size_t>(y * w + x)] = median(nv);
    }
}

// Warping iterations at one pyramid level; refines `flow` in place.
inline void refine_level(const Image& a, const Image& b, const FlowParams& p, FlowField& flow) {
  const std::size_t w = a.width, h = a.height, n = w * h;
  const double eps2 = p.epsilon * p.epsilon;
  Image ax, ay, bx, by, bxx, bxy, byx, byy;
  gradient(a, ax, ay);
  gradient(b, bx, by);
  gradient(bx, bxx, bxy);
  gradient(by, byx, byy);

  std::vector<double> du(n), dv(n), psi_d(n), psi_s(n);
  std::vector<double> j11(n), j12(n), j22(n), j13(n), j23(n);
  std::vector<unsigned char> inside;
  for (int warp_it = 0; warp_it < p.warp_iterations; ++warp_it) {
    const Image bw = detail::warp(b, flow.u, flow.v, &inside);
    const Image bwx = detail::warp(bx, flow.u, flow.v), bwy = detail::warp(by, flow.u, flow.v);
    const Image bwxx = detail::warp(bxx, flow.u, flow.v), bwyy = detail::warp(byy, flow.u, flow.v);
    const Image bwxy = detail::warp(bxy, flow.u, flow.v);

    // Linearised residuals: r0 = Iz + Ix du + Iy dv, r1/r2 likewise for
    // the x / y gradient components.
    std::vector<double> Ix(n), Iy(n), Iz(n), Ixx(n), Ixy(n), Iyy(n), Ixz(n), Iyz(n);
    for (std::size_t i = 0; i < n; ++i) {
      Ix[i] = 0.5 * (bwx.pixels[i] + ax.pixels[i]);
      Iy[i] = 0.5 * (bwy.pixels[i] + ay.pixels[i]);
      Iz[i] = bw.pixels[i] - a.pixels[i];
      Ixx[i] = bwxx.pixels[i];
      Ixy[i] = bwxy.pixels[i];
      Iyy[i] = bwyy.pixels[i];
      Ixz[i] = bwx.pixels[i] - ax.pixels[i];
      Iyz[i] = bwy.pixels[i] - ay.pixels[i];
    }
    std::fill(du.begin(), du.end(), 0.0);
    std::fill(dv.begin(), dv.end(), 0.0);

    for (int fp = 0; fp < p.inner_iterations; ++fp) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!inside[i]) {
          psi_d[i] = 0.0;
          continue;
        }
        const double r0 = Iz[i] + Ix[i] * du[i] + Iy[i] * dv[i];
        const double r1 = Ixz[i] + Ixx[i] * du[i] + Ixy[i] * dv[i];
        const double r2 = Iyz[i] + Ixy[i] * du[i] + Iyy[i] * dv[i];
        psi_d[i] = 0.5 / std::sqrt(r0 * r0 + p.gamma * (r1 * r1 + r2 * r2) + eps2);
      }
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t i = y * w + x;
          const std::size_t xr = std::min(x + 1, w - 1), xl = x ? x - 1 : 0;
          const std::size_t yd = std::min(y + 1, h - 1), yu = y ? y - 1 : 0;
          auto grad2 = [&](const std::vector<double>& f, const std::vector<double>& d) {
            const double gx = 0.5 * ((f[y * w + xr] + d[y * w + xr]) - (f[y * w + xl] + d[y * w + xl]));
            const double gy = 0.5 * ((f[yd * w + x] + d[yd * w + x]) - (f[yu * w + x] + d[yu * w + x]));
            return gx * gx + gy * gy;
          };
          psi_s[i] = 0.5 / std::sqrt(grad2(flow.u, du) + grad2(flow.v, dv) + eps2);
        }
      for (std::size_t i = 0; i < n; ++i) {
        const double pd = psi_d[i];
        j11[i] = pd * (Ix[i] * Ix[i] + p.gamma * (Ixx[i] * Ixx[i] + Ixy[i] * Ixy[i]));
        j12[i] = pd * (Ix[i] * Iy[i] + p.gamma * (Ixx[i] * Ixy[i] + Ixy[i] * Iyy[i]));
        j22[i] = pd * (Iy[i] * Iy[i] + p.gamma * (Ixy[i] * Ixy[i] + Iyy[i] * Iyy[i]));
        j13[i] = pd * (Ix[i] * Iz[i] + p.gamma * (Ixx[i] * Ixz[i] + Ixy[i] * Iyz[i]));
        j23[i] = pd * (Iy[i] * Iz[i] + p.gamma * (Ixy[i] * Ixz[i] + Iyy[i] * Iyz[i]));
      }
      for (int sweep = 0; sweep < p.sor_iterations; ++sweep) {
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            const std::size_t i = y * w + x;
            double wsum = 0, su = 0, sv = 0;
            auto neighbour = [&](std::size_t k) {
              const double wk = p.alpha * 0.5 * (psi_s[i] + psi_s[k]);
              wsum += wk;
              su += wk * (flow.u[k] + du[k] - flow.u[i]);
              sv += wk * (flow.v[k] + dv[k] - flow.v[i]);
            };
            if (x > 0) neighbour(i - 1);
            if (x + 1 < w) neighbour(i + 1);
            if (y > 0) neighbour(i - w);
            if (y + 1 < h) neighbour(i + w);
            const double du_new = (su - j12[i] * dv[i] - j13[i]) / (j11[i] + wsum + 1e-12);
            du[i] += p.sor_omega * (du_new - du[i]);
            const double dv_new = (sv - j12[i] * du[i] - j23[i]) / (j22[i] + wsum + 1e-12);
            dv[i] += p.sor_omega * (dv_new - dv[i]);
          }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      flow.u[i] += du[i];
      flow.v[i] += dv[i];
    }
  }
}

}  // namespace detail

// Dense flow from `first` to `second`: second(x + w(x)) ~ first(x).
inline FlowField compute_flow(const Image& first, const Image& second, const FlowParams& params = {}) {
  if (!first.same_extent(second))
    throw ShapeError(signflow::detail::concat("compute_flow: frame extents differ (", first.width, "x",
                                    first.height, " vs ", second.width, "x", second.height, ")"));
  if (first.pixels.empty()) throw ShapeError("compute_flow: empty frame");
  for (const Image* img : {&first, &second})
    for (double v : img->pixels)
      if (!std::isfinite(v)) throw ValueError("compute_flow: non-finite pixel value");
  if (params.levels < 1 || params.scale_factor <= 0 || params.scale_factor >= 1)
    throw ValueError("compute_flow: need levels >= 1 and scale factor in (0, 1)");

  FlowField flow(first.width, first.height);
  if (detail::is_constant(first) || detail::is_constant(second)) {
    flow.degenerate = true;
    return flow;
  }

  std::vector<Image> pa{gaussian_blur(first, params.presmooth_sigma)};
  std::vector<Image> pb{gaussian_blur(second, params.presmooth_sigma)};
  for (int l = 1; l < params.levels; ++l) {
    const auto nw = static_cast<std::size_t>(std::lround(pa.back().width * params.scale_factor));
    const auto nh = static_cast<std::size_t>(std::lround(pa.back().height * params.scale_factor));
    if (static_cast<int>(std::min(nw, nh)) < params.min_level_size) break;
    pa.push_back(resize(pa.back(), nw, nh));
    pb.push_back(resize(pb.back(), nw, nh));
  }

  std::size_t start = pa.size() - 1;
  if (params.descriptor_matching) {
    while (start > 0 && static_cast<int>(std::min(pa[start].width, pa[start].height)) < params.match_min_size)
      --start;
  }
  FlowField cur(pa[start].width, pa[start].height);
  if (params.descriptor_matching) detail::block_match(pa[start], pb[start], params, cur);
  for (std::size_t l = start + 1; l-- > 0;) {
    const Image& a = pa[l];
    if (cur.width != a.width || cur.height != a.height) {
      FlowField up(a.width, a.height);
      const double gain = static_cast<double>(a.width) / cur.width;
      up.u = detail::resize_field(cur.u, cur.width, cur.height, a.width, a.height, gain);
      up.v = detail::resize_field(cur.v, cur.width, cur.height, a.width, a.height,
                                  static_cast<double>(a.height) / cur.height);
      cur = std::move(up);
    }
    detail::refine_level(a, pb[l], params, cur);
  }
  return cur;
}

// --------------------------------------------------------------- encoding

// Channel 0/1: dx, dy mapped [-m_max, m_max] -> [0, 1]; channel 2: |v| / m_max.
// Values are clipped and quantised to k/255.
inline unsigned char quantize(double unit) {
  return static_cast<unsigned char>(std::lround(std::clamp(unit, 0.0, 1.0) * 255.0));
}

inline std::vector<unsigned char> encode_flow(const FlowField& field, double m_max) {
  if (!(m_max > 0) || !std::isfinite(m_max)) throw ValueError("encode_flow: m_max must be positive");
  std::vector<unsigned char> out(field.u.size() * 3);
  for (std::size_t i = 0; i < field.u.size(); ++i) {
    const double dx = field.u[i], dy = field.v[i];
    if (!std::isfinite(dx) || !std::isfinite(dy)) throw ValueError("encode_flow: non-finite velocity");
    out[3 * i] = quantize((dx / m_max + 1.0) / 2.0);
    out[3 * i + 1] = quantize((dy / m_max + 1.0) / 2.0);
    out[3 * i + 2] = quantize(std::hypot(dx, dy) / m_max);
  }
  return out;
}

inline FlowField decode_flow(const std::vector<unsigned char>& codes, std::size_t width,
                             std::size_t height, double m_max) {
  if (codes.size() != width * height * 3)
    throw ShapeError(signflow::detail::concat("decode_flow: expected ", width * height * 3, " codes, got ",
                                    codes.size()));
  FlowField f(width, height);
  for (std::size_t i = 0; i < width * height; ++i) {
    f.u[i] = (2.0 * codes[3 * i] / 255.0 - 1.0) * m_max;
    f.v[i] = (2.0 * codes[3 * i + 1] / 255.0 - 1.0) * m_max;
  }
  return f;
}

}  // namespace signflow::flow
