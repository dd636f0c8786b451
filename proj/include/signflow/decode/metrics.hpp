#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "signflow/core/error.hpp"
#include "signflow/data/vocabulary.hpp"

namespace signflow {

// Levenshtein distance with unit substitution/insertion/deletion costs.
template <typename Tok>
std::size_t edit_distance(const std::vector<Tok>& ref, const std::vector<Tok>& hyp) {
  std::vector<std::size_t> prev(hyp.size() + 1), cur(hyp.size() + 1);
  for (std::size_t j = 0; j <= hyp.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= hyp.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ref[i - 1] == hyp[j - 1] ? 0 : 1)});
    std::swap(prev, cur);
  }
  return prev[hyp.size()];
}

template <typename Tok>
double wer(const std::vector<Tok>& ref, const std::vector<Tok>& hyp) {
  if (ref.empty()) throw ValueError("wer: empty reference");
  return 100.0 * static_cast<double>(edit_distance(ref, hyp)) / static_cast<double>(ref.size());
}

// Corpus WER: total edits over total reference length.
template <typename Tok>
double corpus_wer(const std::vector<std::vector<Tok>>& refs, const std::vector<std::vector<Tok>>& hyps) {
  if (refs.size() != hyps.size()) throw ValueError("corpus_wer: reference/hypothesis counts differ");
  std::size_t edits = 0, total = 0;
  for (std::size_t i = 0; i < refs.size(); ++i) {
    edits += edit_distance(refs[i], hyps[i]);
    total += refs[i].size();
  }
  if (total == 0) throw ValueError("corpus_wer: empty references");
  return 100.0 * static_cast<double>(edits) / static_cast<double>(total);
}

struct BleuScores {
  std::array<double, 4> bleu{};      // percent, BLEU-1..4
  std::array<double, 4> precision{}; // modified n-gram precision actually used
  std::array<bool, 4> smoothed{};    // add-one applied at this order
  double brevity_penalty = 0.0;
  std::size_t hyp_length = 0;
  std::size_t ref_length = 0;
};

// Corpus BLEU with one reference per hypothesis. Orders n >= 2 whose
// clipped match count is zero use (0 + 1) / (count + 1).
template <typename Tok>
BleuScores bleu(const std::vector<std::vector<Tok>>& refs, const std::vector<std::vector<Tok>>& hyps) {
  if (hyps.empty()) throw ValueError("bleu: empty hypothesis corpus");
  if (refs.size() != hyps.size()) throw ValueError("bleu: reference/hypothesis counts differ");
  BleuScores s;
  std::array<std::size_t, 4> matches{}, totals{};
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    s.hyp_length += hyps[i].size();
    s.ref_length += refs[i].size();
    for (std::size_t n = 1; n <= 4; ++n) {
      std::map<std::vector<Tok>, std::size_t> ref_counts, hyp_counts;
      for (std::size_t k = 0; k + n <= refs[i].size(); ++k)
        ++ref_counts[std::vector<Tok>(refs[i].begin() + static_cast<long>(k), refs[i].begin() + static_cast<long>(k + n))];
      for (std::size_t k = 0; k + n <= hyps[i].size(); ++k)
        ++hyp_counts[std::vector<Tok>(hyps[i].begin() + static_cast<long>(k), hyps[i].begin() + static_cast<long>(k + n))];
      for (const auto& [gram, c] : hyp_counts) {
        auto it = ref_counts.find(gram);
        matches[n - 1] += std::min(c, it == ref_counts.end() ? std::size_t{0} : it->second);
        totals[n - 1] += c;
      }
    }
  }
  for (std::size_t n = 0; n < 4; ++n) {
    if (n > 0 && matches[n] == 0) {
      s.smoothed[n] = true;
      s.precision[n] = 1.0 / static_cast<double>(totals[n] + 1);
    } else {
      s.precision[n] = totals[n] ? static_cast<double>(matches[n]) / static_cast<double>(totals[n]) : 0.0;
    }
  }
  if (s.hyp_length == 0) {
    s.brevity_penalty = 0.0;
  } else if (s.hyp_length > s.ref_length) {
    s.brevity_penalty = 1.0;
  } else {
    s.brevity_penalty = std::exp(1.0 - static_cast<double>(s.ref_length) / static_cast<double>(s.hyp_length));
  }
  for (std::size_t n = 0; n < 4; ++n) {
    if (s.precision[0] == 0.0 || s.brevity_penalty == 0.0) {
      s.bleu[n] = 0.0;
      continue;
    }
    double log_sum = 0;
    for (std::size_t k = 0; k <= n; ++k) log_sum += std::log(s.precision[k]);
    s.bleu[n] = 100.0 * s.brevity_penalty * std::exp(log_sum / static_cast<double>(n + 1));
  }
  return s;
}

struct SampleResult {
  std::string id;
  std::vector<std::string> gloss_ref, gloss_hyp;
  std::vector<std::string> text_ref, text_hyp;
};

struct MetricReport {
  double wer = 0.0;
  BleuScores bleu;
  std::vector<SampleResult> samples;

  static MetricReport compute(std::vector<SampleResult> samples) {
    MetricReport r;
    std::vector<std::vector<std::string>> gr, gh, tr, th;
    for (const auto& s : samples) {
      gr.push_back(s.gloss_ref);
      gh.push_back(s.gloss_hyp);
      tr.push_back(s.text_ref);
      th.push_back(s.text_hyp);
    }
    r.wer = signflow::corpus_wer(gr, gh);
    r.bleu = signflow::bleu(tr, th);
    r.samples = std::move(samples);
    return r;
  }

  // key=value header, then one section per sample in input order.
  std::string to_text() const {
    std::ostringstream o;
    o << std::fixed << std::setprecision(4);
    o << "WER=" << wer << "\n";
    for (std::size_t n = 0; n < 4; ++n) o << "BLEU" << n + 1 << "=" << bleu.bleu[n] << "\n";
    o << "BLEU_SMOOTHED=";
    bool any = false;
    for (std::size_t n = 0; n < 4; ++n)
      if (bleu.smoothed[n]) {
        o << (any ? "," : "") << n + 1;
        any = true;
      }
    if (!any) o << "none";
    o << "\nBREVITY_PENALTY=" << bleu.brevity_penalty << "\n";
    o << "SAMPLES=" << samples.size() << "\n";
    for (const auto& s : samples) {
      o << "\n[sample " << s.id << "]\n";
      o << "gloss_ref=" << join_tokens(s.gloss_ref) << "\n";
      o << "gloss_hyp=" << join_tokens(s.gloss_hyp) << "\n";
      o << "gloss_wer=" << (s.gloss_ref.empty() ? 0.0 : signflow::wer(s.gloss_ref, s.gloss_hyp)) << "\n";
      o << "text_ref=" << join_tokens(s.text_ref) << "\n";
      o << "text_hyp=" << join_tokens(s.text_hyp) << "\n";
    }
    return o.str();
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw FormatError("cannot write report " + path.string());
    out << to_text();
  }
};

// Header keys of a report file (everything before the first section).
inline std::map<std::string, std::string> read_report_header(const std::string& text) {
  std::map<std::string, std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (line.empty() || line.front() == '[') break;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("report: malformed line '" + line + "'");
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace signflow
