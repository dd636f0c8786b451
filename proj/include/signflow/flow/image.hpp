#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "signflow/core/error.hpp"

namespace signflow::flow {

// Single-channel image, row-major, values nominally in [0, 1].
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, double fill = 0.0)
      : width(w), height(h), pixels(w * h, fill) {}

  double& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  double at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  // Border-replicated access.
  double clamped(long x, long y) const {
    x = std::clamp<long>(x, 0, static_cast<long>(width) - 1);
    y = std::clamp<long>(y, 0, static_cast<long>(height) - 1);
    return pixels[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)];
  }

  double bilinear(double x, double y) const {
    const double fx = std::floor(x), fy = std::floor(y);
    const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
    const double ax = x - fx, ay = y - fy;
    return (1 - ay) * ((1 - ax) * clamped(x0, y0) + ax * clamped(x0 + 1, y0)) +
           ay * ((1 - ax) * clamped(x0, y0 + 1) + ax * clamped(x0 + 1, y0 + 1));
  }

  bool same_extent(const Image& o) const { return width == o.width && height == o.height; }
};

// Multi-channel frame as read from disk: interleaved (H, W, C).
struct Frame {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 1;
  std::vector<double> pixels;

  Image luminance() const {
    Image out(width, height);
    for (std::size_t i = 0; i < width * height; ++i) {
      if (channels == 1) {
        out.pixels[i] = pixels[i];
      } else {
        const double* p = &pixels[i * channels];
        out.pixels[i] = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
      }
    }
    return out;
  }
};

inline Image gaussian_blur(const Image& in, double sigma) {
  if (sigma <= 0) return in;
  const int radius = std::max(1, static_cast<int>(std::ceil(2.5 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i)
    total += kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& k : kernel) k /= total;
  Image tmp(in.width, in.height), out(in.width, in.height);
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < in.width; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * in.clamped(static_cast<long>(x) + i, static_cast<long>(y));
      tmp.at(x, y) = acc;
    }
  for (std::size_t y = 0; y < in.height; ++y)
    for (std::size_t x = 0; x < in.width; ++x) {
      double acc = 0;
      for (int i = -radius; i <= radius; ++i)
        acc += kernel[i + radius] * tmp.clamped(static_cast<long>(x), static_cast<long>(y) + i);
      out.at(x, y) = acc;
    }
  return out;
}

// Bilinear resampling with pixel-centre alignment.
inline Image resize(const Image& in, std::size_t width, std::size_t height) {
  if (in.width == width && in.height == height) return in;
  Image src = in;
  const double shrink = std::max(static_cast<double>(in.width) / width,
                                 static_cast<double>(in.height) / height);
  if (shrink > 1.0) src = gaussian_blur(in, 0.5 * std::sqrt(shrink * shrink - 1.0));
  Image out(width, height);
  const double sx = static_cast<double>(in.width) / width;
  const double sy = static_cast<double>(in.height) / height;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      out.at(x, y) = src.bilinear((x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
  return out;
}

// ---------------------------------------------------------------- netpbm I/O

inline Frame read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image " + path.string());
  auto token = [&in]() {
    std::string t;
    char c;
    while (in.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t.push_back(c);
    }
    return t;
  };
  const std::string magic = token();
  if (magic != "P5" && magic != "P6")
    throw FormatError(path.string() + ": only binary PGM (P5) / PPM (P6) frames are supported");
  Frame f;
  f.channels = magic == "P6" ? 3 : 1;
  f.width = std::stoul(token());
  f.height = std::stoul(token());
  const unsigned long maxval = std::stoul(token());
  if (maxval == 0 || maxval > 255) throw FormatError(path.string() + ": maxval must be 1..255");
  std::vector<unsigned char> raw(f.width * f.height * f.channels);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size()))
    throw FormatError(path.string() + ": truncated pixel data");
  f.pixels.resize(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) f.pixels[i] = raw[i] / static_cast<double>(maxval);
  return f;
}

inline void write_pgm(const std::filesystem::path& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write image " + path.string());
  out << "P5\n" << img.width << " " << img.height << "\n255\n";
  for (double v : img.pixels)
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
}

// All .pgm/.ppm files in `dir`, sorted by file name.
inline std::vector<Frame> read_frame_directory(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension().string();
    if (ext == ".pgm" || ext == ".ppm" || ext == ".pnm") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Frame> frames;
  for (const auto& f : files) frames.push_back(read_pnm(f));
  return frames;
}

}  // namespace signflow::flow
