#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "signflow/core/error.hpp"

namespace signflow {

// Whitespace tokenisation, tokens kept verbatim (case and punctuation).
inline std::vector<std::string> split_tokens(const std::string& text) {
  std::istringstream iss(text);
  std::vector<std::string> out;
  for (std::string tok; iss >> tok;) out.push_back(tok);
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += tokens[i];
  }
  return out;
}

// Dense token <-> id table.
class Vocabulary {
 public:
  Vocabulary() = default;

  int add(const std::string& token) {
    if (token.empty() || token.find_first_of(" \t\r\n") != std::string::npos)
      throw ValueError("vocabulary: invalid token '" + token + "'");
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    const int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_.emplace(token, id);
    return id;
  }

  bool contains(const std::string& token) const { return ids_.count(token) != 0; }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    if (it == ids_.end()) throw ValueError("vocabulary: unknown token '" + token + "'");
    return it->second;
  }

  const std::string& token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw ValueError(detail::concat("vocabulary: id ", id, " out of range [0, ", tokens_.size(), ")"));
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::vector<int> encode(const std::vector<std::string>& tokens) const {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
  }

  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int i : ids) out.push_back(token(i));
    return out;
  }

  // FNV-1a over the ordered token list.
  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : tokens_) {
      for (unsigned char c : t) {
        h ^= c;
        h *= 1099511628211ULL;
      }
      h ^= 0x0A;
      h *= 1099511628211ULL;
    }
    return h;
  }

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

inline constexpr int kBlank = 0;
inline constexpr const char* kBlankToken = "<blank>";

// Gloss ids: 0 is the CTC blank, glosses follow from 1.
// File: a first comment line naming the blank, then one gloss per line;
// the gloss on line n (counting the comment as line 0) gets id n.
class GlossVocabulary {
 public:
  GlossVocabulary() { vocab_.add(kBlankToken); }

  static GlossVocabulary from_glosses(const std::vector<std::string>& glosses) {
    GlossVocabulary v;
    for (const auto& g : glosses) v.add(g);
    return v;
  }

  int add(const std::string& gloss) {
    if (gloss == kBlankToken) throw ValueError("gloss vocabulary: the blank token is reserved");
    return vocab_.add(gloss);
  }

  std::size_t gloss_count() const { return vocab_.size() - 1; }
  std::size_t size() const { return vocab_.size(); }  // |G| + 1
  bool contains(const std::string& g) const { return g != kBlankToken && vocab_.contains(g); }
  int id(const std::string& g) const {
    if (g == kBlankToken) throw ValueError("gloss vocabulary: blank may not appear in a gloss sequence");
    return vocab_.id(g);
  }
  const std::string& token(int id) const { return vocab_.token(id); }
  std::vector<int> encode(const std::vector<std::string>& g) const {
    std::vector<int> out;
    for (const auto& t : g) out.push_back(id(t));
    return out;
  }
  std::vector<std::string> decode(const std::vector<int>& ids) const { return vocab_.decode(ids); }
  std::uint64_t hash() const { return vocab_.hash(); }
  const Vocabulary& table() const { return vocab_; }
  bool operator==(const GlossVocabulary& o) const { return vocab_ == o.vocab_; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write gloss vocabulary " + path.string());
    out << "# id 0 = " << kBlankToken << " (CTC blank)\n";
    for (std::size_t i = 1; i < vocab_.size(); ++i) out << vocab_.tokens()[i] << "\n";
  }

  static GlossVocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open gloss vocabulary " + path.string());
    std::string line;
    if (!std::getline(in, line) || line.rfind("#", 0) != 0)
      throw FormatError(path.string() + ": first line must be a comment naming the blank");
    GlossVocabulary v;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      if (line.empty()) throw FormatError(detail::concat(path.string(), ": empty gloss on line ", lineno));
      if (v.contains(line)) throw FormatError(detail::concat(path.string(), ": duplicate gloss '", line, "'"));
      v.add(line);
    }
    return v;
  }

 private:
  Vocabulary vocab_;
};

inline constexpr int kPad = 0;
inline constexpr int kStart = 1;
inline constexpr int kEnd = 2;

// Word ids: [pad]=0, [start]=1, [end]=2, then words. File: one token per
// line, specials first in that order; id = line index.
class WordVocabulary {
 public:
  WordVocabulary() {
    vocab_.add("[pad]");
    vocab_.add("[start]");
    vocab_.add("[end]");
  }

  static constexpr std::size_t kSpecials = 3;

  static WordVocabulary from_words(const std::vector<std::string>& words) {
    WordVocabulary v;
    for (const auto& w : words) v.add(w);
    return v;
  }

  int add(const std::string& word) {
    if (is_special(word)) throw ValueError("word vocabulary: '" + word + "' is reserved");
    return vocab_.add(word);
  }

  static bool is_special(const std::string& w) { return w == "[pad]" || w == "[start]" || w == "[end]"; }

  std::size_t size() const { return vocab_.size(); }  // J
  std::size_t word_count() const { return vocab_.size() - kSpecials; }
  bool contains(const std::string& w) const { return !is_special(w) && vocab_.contains(w); }
  int id(const std::string& w) const { return vocab_.id(w); }
  const std::string& token(int id) const { return vocab_.token(id); }
  std::vector<int> encode(const std::vector<std::string>& w) const { return vocab_.encode(w); }
  std::uint64_t hash() const { return vocab_.hash(); }
  const Vocabulary& table() const { return vocab_; }
  bool operator==(const WordVocabulary& o) const { return vocab_ == o.vocab_; }

  // Words for ids, stopping at [end] and skipping [pad]/[start].
  std::vector<std::string> decode(const std::vector<int>& ids) const {
    std::vector<std::string> out;
    for (int i : ids) {
      if (i == kEnd) break;
      if (i == kPad || i == kStart) continue;
      out.push_back(vocab_.token(i));
    }
    return out;
  }

  std::string accounting() const {
    return detail::concat("J = ", word_count(), " words + ", kSpecials, " specials = ", size());
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write word vocabulary " + path.string());
    for (const auto& t : vocab_.tokens()) out << t << "\n";
  }

  static WordVocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open word vocabulary " + path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
      if (!line.empty() && line.back() == '\r') line.pop_back();
      lines.push_back(line);
    }
    if (lines.size() < kSpecials || lines[0] != "[pad]" || lines[1] != "[start]" || lines[2] != "[end]")
      throw FormatError(path.string() + ": must begin with [pad], [start], [end] on separate lines");
    WordVocabulary v;
    for (std::size_t i = kSpecials; i < lines.size(); ++i) {
      if (lines[i].empty()) throw FormatError(detail::concat(path.string(), ": empty word on line ", i));
      if (v.vocab_.contains(lines[i]))
        throw FormatError(detail::concat(path.string(), ": duplicate token '", lines[i], "'"));
      v.add(lines[i]);
    }
    return v;
  }

 private:
  Vocabulary vocab_;
};

}  // namespace signflow
