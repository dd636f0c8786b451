#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "signflow/core/error.hpp"
#include "signflow/data/manifest.hpp"
#include "signflow/data/vocabulary.hpp"
#include "signflow/flow/flow_sequence.hpp"
#include "signflow/flow/image.hpp"

namespace signflow {

struct MotionPrimitive {
  double angle = 0.0;   // radians, image coordinates (y down)
  double speed = 2.0;   // pixels per frame
  double radius = 8.0;  // blob radius in pixels

  double dx() const { return speed * std::cos(angle); }
  double dy() const { return speed * std::sin(angle); }
};

// Toy subject-verb-object sign language. Gloss k (in subjects, verbs,
// objects order) moves a blob out and back along angle pi * k / |G|.
struct SyntheticSpec {
  std::vector<std::string> subjects{"I", "YOU", "HE", "SHE", "WE"};
  std::vector<std::string> verbs{"EAT", "WANT", "SEE", "HAVE"};
  std::vector<std::string> objects{"APPLE", "BOOK", "HOUSE", "DOG", "WATER"};
  std::vector<std::string> third_person{"HE", "SHE"};
  double radius = 8.0;

  std::size_t capacity() const { return subjects.size() * verbs.size() * objects.size(); }

  std::vector<std::string> glosses() const {
    std::vector<std::string> g = subjects;
    g.insert(g.end(), verbs.begin(), verbs.end());
    g.insert(g.end(), objects.begin(), objects.end());
    return g;
  }

  void validate() const {
    if (subjects.empty() || verbs.empty() || objects.empty())
      throw ValueError("synthetic spec: subjects, verbs and objects must be non-empty");
    auto g = glosses();
    std::sort(g.begin(), g.end());
    if (std::adjacent_find(g.begin(), g.end()) != g.end()) throw ValueError("synthetic spec: duplicate gloss");
    if (!(radius > 0)) throw ValueError("synthetic spec: radius must be positive");
  }

  MotionPrimitive primitive(const std::string& gloss) const {
    const auto g = glosses();
    const auto it = std::find(g.begin(), g.end(), gloss);
    if (it == g.end()) throw ValueError("synthetic spec: unknown gloss '" + gloss + "'");
    const auto k = static_cast<std::size_t>(it - g.begin());
    return {std::numbers::pi * static_cast<double>(k) / static_cast<double>(g.size()),
            2.0 + static_cast<double>(k % 2), radius};
  }

  static std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
  }

  static std::string conjugate(const std::string& verb) {
    if (verb == "have") return "has";
    return verb + "s";
  }

  // SUBJECT VERB OBJECT -> subject verb[s] the object
  std::vector<std::string> sentence(const std::vector<std::string>& svo) const {
    if (svo.size() != 3) throw ValueError("synthetic spec: expected subject, verb, object");
    const bool third = std::find(third_person.begin(), third_person.end(), svo[0]) != third_person.end();
    const std::string verb = lower(svo[1]);
    return {lower(svo[0]), third ? conjugate(verb) : verb, "the", lower(svo[2])};
  }

  // Every word the grammar can produce, in first-use order.
  std::vector<std::string> words() const {
    std::vector<std::string> out;
    auto add = [&](const std::string& w) {
      if (std::find(out.begin(), out.end(), w) == out.end()) out.push_back(w);
    };
    for (const auto& s : subjects) add(lower(s));
    for (const auto& v : verbs) add(lower(v));
    for (const auto& v : verbs) add(conjugate(lower(v)));
    add("the");
    for (const auto& o : objects) add(lower(o));
    return out;
  }
};

struct SyntheticOptions {
  std::size_t sentences = 30;
  std::uint64_t seed = 1;
  std::size_t fields = 16;  // flow fields per sample
  std::size_t width = 65;
  std::size_t height = 65;
  double m_max = 6.0;
  double test_fraction = 0.0;
  bool rendered = false;  // render frames and run the flow estimator instead of analytic fields
  flow::FlowParams flow_params{};
};

// Flow from frame t to t + 1 of a rigid disc: the disc velocity on the
// pixels it covers at frame t, zero elsewhere.
inline flow::FlowField analytic_blob_field(double cx, double cy, double vx, double vy, double radius,
                                           std::size_t width, std::size_t height) {
  flow::FlowField f(width, height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double ddx = static_cast<double>(x) - cx, ddy = static_cast<double>(y) - cy;
      if (ddx * ddx + ddy * ddy <= radius * radius) {
        f.u[y * width + x] = vx;
        f.v[y * width + x] = vy;
      }
    }
  return f;
}

// Textured disc with an antialiased rim over a static background.
inline flow::Image render_blob_frame(double cx, double cy, double radius, std::size_t width, std::size_t height) {
  flow::Image img(width, height);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      const double px = static_cast<double>(x), py = static_cast<double>(y);
      const double bg = 0.15 + 0.05 * std::sin(0.3 * px) * std::cos(0.25 * py);
      const double rx = px - cx, ry = py - cy;
      const double d = std::hypot(rx, ry);
      const double w = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      const double tex = 0.6 + 0.2 * std::sin(0.9 * rx + 0.4 * ry) + 0.15 * std::cos(0.7 * ry - 0.3 * rx);
      img.at(x, y) = (1 - w) * bg + w * tex;
    }
  return img;
}

struct SyntheticSample {
  std::vector<std::string> glosses;
  std::vector<double> cx, cy;  // blob centre at each frame (fields + 1 entries)
  std::vector<double> vx, vy;  // velocity of each field
};

namespace detail {

// Even split of n fields over k glosses with a +-1 boundary jitter; every
// span keeps at least two fields.
inline std::vector<std::size_t> gloss_spans(std::size_t n, std::size_t k, std::mt19937_64& rng) {
  std::vector<std::size_t> span(k, n / k);
  for (std::size_t i = 0; i < n % k; ++i) ++span[i];
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const int shift = static_cast<int>(rng() % 3) - 1;
    if (shift > 0 && span[i + 1] > 2) --span[i + 1], ++span[i];
    if (shift < 0 && span[i] > 2) --span[i], ++span[i + 1];
  }
  return span;
}

}  // namespace detail

// Motion script for one sentence: each gloss moves out for floor(s/2)
// fields, back for floor(s/2), and rests on an odd remainder, so the blob
// returns to its start after every gloss.
inline SyntheticSample script_sample(const SyntheticSpec& spec, const std::vector<std::string>& glosses,
                                     const SyntheticOptions& opts, std::mt19937_64& rng) {
  if (opts.fields < 2 * glosses.size())
    throw ValueError(detail::concat("synthetic: ", opts.fields, " fields cannot hold ", glosses.size(), " glosses"));
  std::uniform_real_distribution<double> offset(-3.0, 3.0), gain(0.85, 1.15);
  SyntheticSample s;
  s.glosses = glosses;
  double cx = (static_cast<double>(opts.width) - 1) / 2 + offset(rng);
  double cy = (static_cast<double>(opts.height) - 1) / 2 + offset(rng);
  s.cx.push_back(cx);
  s.cy.push_back(cy);
  const auto spans = detail::gloss_spans(opts.fields, glosses.size(), rng);
  for (std::size_t g = 0; g < glosses.size(); ++g) {
    const MotionPrimitive p = spec.primitive(glosses[g]);
    const double k = gain(rng);
    const std::size_t half = spans[g] / 2;
    for (std::size_t t = 0; t < spans[g]; ++t) {
      const double sign = t < half ? 1.0 : (t < 2 * half ? -1.0 : 0.0);
      const double vx = sign * k * p.dx(), vy = sign * k * p.dy();
      s.vx.push_back(vx);
      s.vy.push_back(vy);
      cx += vx;
      cy += vy;
      s.cx.push_back(cx);
      s.cy.push_back(cy);
    }
  }
  return s;
}

inline flow::FlowSequence render_sample_flow(const SyntheticSpec& spec, const SyntheticSample& s,
                                             const SyntheticOptions& opts) {
  if (opts.rendered) {
    std::vector<flow::Image> frames;
    for (std::size_t t = 0; t < s.cx.size(); ++t)
      frames.push_back(render_blob_frame(s.cx[t], s.cy[t], spec.radius, opts.width, opts.height));
    flow::VideoToFlowOptions vo;
    vo.params = opts.flow_params;
    vo.out_width = opts.width;
    vo.out_height = opts.height;
    vo.m_max = opts.m_max;
    return flow::video_to_flow(frames, vo);
  }
  flow::FlowSequence seq;
  seq.frames = s.vx.size();
  seq.width = opts.width;
  seq.height = opts.height;
  seq.m_max = opts.m_max;
  for (std::size_t t = 0; t < seq.frames; ++t) {
    const auto f = analytic_blob_field(s.cx[t], s.cy[t], s.vx[t], s.vy[t], spec.radius, opts.width, opts.height);
    const auto enc = flow::encode_flow(f, opts.m_max);
    seq.codes.insert(seq.codes.end(), enc.begin(), enc.end());
  }
  return seq;
}

struct SyntheticCorpus {
  DatasetManifest manifest;
  std::vector<flow::FlowSequence> flows;  // parallel to manifest.samples

  // Writes flow caches under dir/flow, vocabularies and dir/manifest.tsv.
  std::filesystem::path write(const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "flow");
    for (std::size_t i = 0; i < flows.size(); ++i)
      flow::write_flow_cache(dir / manifest.samples[i].flow_path, flows[i]);
    manifest.base_dir = dir;
    const auto path = dir / "manifest.tsv";
    manifest.save(path);
    return path;
  }
};

// Pure function of (spec, options). Sentences are distinct SVO triples
// drawn without replacement.
inline SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, const SyntheticOptions& opts) {
  spec.validate();
  if (opts.sentences == 0) throw ValueError("synthetic: need at least one sentence");
  if (opts.sentences > spec.capacity())
    throw ValueError(detail::concat("synthetic: requested ", opts.sentences, " sentences but the grammar holds only ",
                                    spec.capacity()));
  if (!(opts.test_fraction >= 0 && opts.test_fraction < 1))
    throw ValueError("synthetic: test_fraction must lie in [0, 1)");

  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(spec.capacity());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (std::size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng() % (i + 1)]);

  SyntheticCorpus c;
  auto& m = c.manifest;
  m.m_max = opts.m_max;
  m.frames = opts.fields;
  m.gloss_vocab = GlossVocabulary::from_glosses(spec.glosses());
  m.word_vocab = WordVocabulary::from_words(spec.words());
  const auto n_train = static_cast<std::size_t>(
      std::llround(static_cast<double>(opts.sentences) * (1.0 - opts.test_fraction)));
  const std::size_t nv = spec.verbs.size(), no = spec.objects.size();
  for (std::size_t i = 0; i < opts.sentences; ++i) {
    const std::size_t k = order[i];
    const std::vector<std::string> svo{spec.subjects[k / (nv * no)], spec.verbs[(k / no) % nv], spec.objects[k % no]};
    std::seed_seq seq{opts.seed, static_cast<std::uint64_t>(i)};
    std::mt19937_64 sample_rng(seq);
    const auto script = script_sample(spec, svo, opts, sample_rng);
    char id[32];
    std::snprintf(id, sizeof id, "syn%04zu", i);
    m.samples.push_back({id, std::string("flow/") + id + ".sflw", svo, spec.sentence(svo),
                         i < n_train ? "train" : "test"});
    c.flows.push_back(render_sample_flow(spec, script, opts));
  }
  return c;
}

}  // namespace signflow
