#pragma once

#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "signflow/core/error.hpp"
#include "signflow/data/augment.hpp"
#include "signflow/data/vocabulary.hpp"
#include "signflow/flow/flow_sequence.hpp"

namespace signflow {

struct ManifestSample {
  std::string id;
  std::string flow_path;  // relative to the manifest directory unless absolute
  std::vector<std::string> glosses;
  std::vector<std::string> words;
  std::string split;  // train, dev or test

  bool operator==(const ManifestSample&) const = default;
};

// Line-oriented, tab-separated:
//   #m_max<TAB>6
//   #frames<TAB>16
//   #gloss_vocab<TAB>glosses.txt
//   #word_vocab<TAB>words.txt
//   id<TAB>flow_cache_path<TAB>GLOSS GLOSS<TAB>word word<TAB>split
// Other lines starting with '#' are comments.
struct DatasetManifest {
  double m_max = 8.0;
  std::size_t frames = 128;
  std::string gloss_vocab_path = "glosses.txt";
  std::string word_vocab_path = "words.txt";
  std::vector<ManifestSample> samples;
  GlossVocabulary gloss_vocab;
  WordVocabulary word_vocab;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& relative) const {
    const std::filesystem::path p(relative);
    return p.is_absolute() ? p : base_dir / p;
  }

  std::vector<const ManifestSample*> split(const std::string& tag) const {
    std::vector<const ManifestSample*> out;
    for (const auto& s : samples)
      if (s.split == tag) out.push_back(&s);
    return out;
  }

  std::map<std::string, std::size_t> split_counts() const {
    std::map<std::string, std::size_t> out;
    for (const auto& s : samples) ++out[s.split];
    return out;
  }

  const ManifestSample& sample(const std::string& id) const {
    for (const auto& s : samples)
      if (s.id == id) return s;
    throw ValueError("manifest: unknown sample id '" + id + "'");
  }

  // Cached flow for a sample, resampled to `frames` fields.
  flow::FlowSequence load_flow(const ManifestSample& s) const {
    flow::FlowSequence seq = flow::read_flow_cache(resolve(s.flow_path));
    if (seq.m_max != m_max)
      throw FormatError(detail::concat("manifest: sample '", s.id, "' flow cache has m_max ", seq.m_max,
                                       ", manifest declares ", m_max));
    return resample_temporal(seq, frames);
  }

  void validate(bool check_files = true) const {
    if (!(m_max > 0)) throw ValueError("manifest: m_max must be positive");
    if (frames == 0) throw ValueError("manifest: frame count must be positive");
    std::set<std::string> ids;
    for (const auto& s : samples) {
      if (!ids.insert(s.id).second) throw ValueError("manifest: duplicate sample id '" + s.id + "'");
      if (s.split != "train" && s.split != "dev" && s.split != "test")
        throw ValueError("manifest: sample '" + s.id + "' has unknown split '" + s.split + "'");
      if (s.glosses.empty()) throw ValueError("manifest: sample '" + s.id + "' has no glosses");
      if (s.words.empty()) throw ValueError("manifest: sample '" + s.id + "' has no words");
      for (const auto& g : s.glosses)
        if (!gloss_vocab.contains(g))
          throw ValueError("manifest: sample '" + s.id + "' uses gloss '" + g + "' absent from the gloss vocabulary");
      for (const auto& w : s.words)
        if (!word_vocab.contains(w))
          throw ValueError("manifest: sample '" + s.id + "' uses word '" + w + "' absent from the word vocabulary");
      if (check_files && !std::filesystem::exists(resolve(s.flow_path)))
        throw ValueError("manifest: sample '" + s.id + "' flow file " + resolve(s.flow_path).string() +
                         " does not exist");
    }
  }

  std::string to_text() const {
    std::ostringstream o;
    o.precision(17);
    o << "#m_max\t" << m_max << "\n";
    o << "#frames\t" << frames << "\n";
    o << "#gloss_vocab\t" << gloss_vocab_path << "\n";
    o << "#word_vocab\t" << word_vocab_path << "\n";
    for (const auto& s : samples)
      o << s.id << "\t" << s.flow_path << "\t" << join_tokens(s.glosses) << "\t" << join_tokens(s.words) << "\t"
        << s.split << "\n";
    return o.str();
  }

  // Writes the manifest and both vocabulary files next to it.
  void save(const std::filesystem::path& path) const {
    const auto dir = path.parent_path();
    if (!dir.empty()) std::filesystem::create_directories(dir);
    gloss_vocab.save(dir / gloss_vocab_path);
    word_vocab.save(dir / word_vocab_path);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write manifest " + path.string());
    out << to_text();
  }

  static DatasetManifest parse(const std::string& text, const std::filesystem::path& base_dir,
                               const std::string& origin = "manifest") {
    DatasetManifest m;
    m.base_dir = base_dir;
    std::istringstream in(text);
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) continue;
      std::vector<std::string> f;
      for (std::size_t start = 0;;) {
        const auto tab = line.find('\t', start);
        f.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
      }
      if (line.front() == '#') {
        if (f.size() != 2) continue;
        try {
          if (f[0] == "#m_max") m.m_max = std::stod(f[1]);
          else if (f[0] == "#frames") m.frames = std::stoul(f[1]);
          else if (f[0] == "#gloss_vocab") m.gloss_vocab_path = f[1];
          else if (f[0] == "#word_vocab") m.word_vocab_path = f[1];
        } catch (const std::logic_error&) {
          throw FormatError(detail::concat(origin, ":", lineno, ": bad value for ", f[0].substr(1)));
        }
        continue;
      }
      if (f.size() != 5)
        throw FormatError(detail::concat(origin, ":", lineno, ": expected 5 tab-separated fields, got ", f.size()));
      m.samples.push_back({f[0], f[1], split_tokens(f[2]), split_tokens(f[3]), f[4]});
    }
    return m;
  }

  static DatasetManifest load(const std::filesystem::path& path, bool check_files = true) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open manifest " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    DatasetManifest m = parse(buf.str(), path.parent_path(), path.string());
    m.gloss_vocab = GlossVocabulary::load(m.resolve(m.gloss_vocab_path));
    m.word_vocab = WordVocabulary::load(m.resolve(m.word_vocab_path));
    m.validate(check_files);
    return m;
  }
};

}  // namespace signflow
