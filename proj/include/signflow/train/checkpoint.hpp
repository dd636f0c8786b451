#pragma once

#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "signflow/core/binary.hpp"
#include "signflow/core/error.hpp"
#include "signflow/core/ndarray.hpp"
#include "signflow/model/translator.hpp"
#include "signflow/train/config.hpp"
#include "signflow/train/optimizer.hpp"

namespace signflow {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  NdArray<double> value;
};

struct CheckpointSection {
  std::string name;
  std::vector<CheckpointEntry> entries;
};

// File layout, little-endian:
//   "SGCK" u32 version
//   string config snapshot (JSON text)
//   u64 gloss vocab hash, u64 word vocab hash
//   u32 epoch, u64 optimizer steps
//   u32 section count, then per section:
//     string name, u32 entry count, per entry:
//       string name, u32 rank, u64 dims..., f64 values...
// Strings are a u32 byte length followed by the bytes.
struct Checkpoint {
  TrainConfig config;
  std::size_t gloss_classes = 0;
  std::size_t vocab = 0;
  std::uint64_t gloss_hash = 0;
  std::uint64_t word_hash = 0;
  std::uint32_t epoch = 0;
  std::uint64_t optimizer_steps = 0;
  std::vector<CheckpointSection> sections;

  const CheckpointSection& section(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return s;
    throw FormatError("checkpoint: missing section '" + name + "'");
  }

  bool has_section(const std::string& name) const {
    for (const auto& s : sections)
      if (s.name == name) return true;
    return false;
  }

  std::string config_text() const {
    nlohmann::json j = config.to_json();
    j["gloss_classes"] = gloss_classes;
    j["vocab"] = vocab;
    return j.dump(2);
  }

  // Written to a sibling temporary first, so an interrupted save leaves the
  // previous file intact.
  void save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = std::filesystem::path(path.string() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw FormatError("cannot write checkpoint " + tmp.string());
      out.write("SGCK", 4);
      binary::put_u32(out, kCheckpointVersion);
      binary::put_string(out, config_text());
      binary::put_u64(out, gloss_hash);
      binary::put_u64(out, word_hash);
      binary::put_u32(out, epoch);
      binary::put_u64(out, optimizer_steps);
      binary::put_u32(out, static_cast<std::uint32_t>(sections.size()));
      for (const auto& s : sections) {
        binary::put_string(out, s.name);
        binary::put_u32(out, static_cast<std::uint32_t>(s.entries.size()));
        for (const auto& e : s.entries) {
          binary::put_string(out, e.name);
          binary::put_u32(out, static_cast<std::uint32_t>(e.value.rank()));
          for (std::size_t d : e.value.shape()) binary::put_u64(out, d);
          for (double v : e.value.values()) binary::put_f64(out, v);
        }
      }
      if (!out) throw FormatError("checkpoint: write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
  }

  static Checkpoint load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open checkpoint " + path.string());
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SGCK", 4) != 0) throw FormatError(path.string() + ": not a checkpoint (bad magic)");
    const char* what = "checkpoint";
    const auto version = binary::get_u32(in, what);
    if (version != kCheckpointVersion)
      throw FormatError(detail::concat(path.string(), ": unsupported checkpoint version ", version));
    Checkpoint c;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(binary::get_string(in, what));
      c.gloss_classes = j.at("gloss_classes").get<std::size_t>();
      c.vocab = j.at("vocab").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path.string() + ": bad config snapshot: " + e.what());
    }
    j.erase("gloss_classes");
    j.erase("vocab");
    c.config = TrainConfig::from_json(j);
    c.gloss_hash = binary::get_u64(in, what);
    c.word_hash = binary::get_u64(in, what);
    c.epoch = binary::get_u32(in, what);
    c.optimizer_steps = binary::get_u64(in, what);
    const auto n_sections = binary::get_u32(in, what);
    for (std::uint32_t s = 0; s < n_sections; ++s) {
      CheckpointSection sec;
      sec.name = binary::get_string(in, what);
      const auto n_entries = binary::get_u32(in, what);
      for (std::uint32_t e = 0; e < n_entries; ++e) {
        CheckpointEntry entry;
        entry.name = binary::get_string(in, what);
        const auto rank = binary::get_u32(in, what);
        if (rank > 8) throw FormatError(path.string() + ": implausible tensor rank for " + entry.name);
        Shape shape(rank);
        std::size_t count = 1;
        for (auto& d : shape) {
          d = binary::get_u64(in, what);
          count *= d;
        }
        if (count > (std::size_t{1} << 32)) throw FormatError(path.string() + ": implausible tensor size for " + entry.name);
        entry.value = NdArray<double>(shape);
        for (auto& v : entry.value.values()) v = binary::get_f64(in, what);
        sec.entries.push_back(std::move(entry));
      }
      c.sections.push_back(std::move(sec));
    }
    return c;
  }
};

namespace detail {

template <typename T>
NdArray<double> to_double(const NdArray<T>& a) {
  NdArray<double> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<double>(a[i]);
  return out;
}

template <typename T>
void copy_into(NdArray<T>& dst, const CheckpointEntry& e) {
  if (dst.shape() != e.value.shape())
    throw FormatError("checkpoint: " + e.name + " has shape " + shape_string(e.value.shape()) + ", model expects " +
                      shape_string(dst.shape()));
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(e.value[i]);
}

inline const CheckpointEntry& find_entry(const CheckpointSection& s, const std::string& name) {
  for (const auto& e : s.entries)
    if (e.name == name) return e;
  throw FormatError("checkpoint: section '" + s.name + "' lacks '" + name + "'");
}

}  // namespace detail

template <typename T>
Checkpoint capture_checkpoint(Translator<T>& model, Adam<T>& optimizer, const TrainConfig& config,
                              std::uint64_t gloss_hash, std::uint64_t word_hash, std::uint32_t epoch) {
  Checkpoint c;
  c.config = config;
  c.gloss_classes = model.config().gloss_classes;
  c.vocab = model.config().vocab;
  c.gloss_hash = gloss_hash;
  c.word_hash = word_hash;
  c.epoch = epoch;
  c.optimizer_steps = optimizer.steps();
  for (const auto& name : Translator<T>::sections()) {
    CheckpointSection s{name, {}};
    for (const auto& p : model.parameters(name)) s.entries.push_back({p.name, detail::to_double(p.tensor.value())});
    c.sections.push_back(std::move(s));
  }
  CheckpointSection buffers{"buffers", {}};
  for (const auto& b : model.buffers()) buffers.entries.push_back({b.name, detail::to_double(*b.array)});
  c.sections.push_back(std::move(buffers));
  const auto params = model.parameters();
  if (!optimizer.first_moments().empty()) {
    CheckpointSection m{"adam.m", {}}, v{"adam.v", {}};
    for (std::size_t i = 0; i < params.size(); ++i) {
      m.entries.push_back({params[i].name, detail::to_double(optimizer.first_moments()[i])});
      v.entries.push_back({params[i].name, detail::to_double(optimizer.second_moments()[i])});
    }
    c.sections.push_back(std::move(m));
    c.sections.push_back(std::move(v));
  }
  return c;
}

// Overwrites model weights, batch-norm buffers and (when given) optimizer
// state. The model must have been built with the checkpoint's dimensions.
template <typename T>
void restore_checkpoint(const Checkpoint& c, Translator<T>& model, Adam<T>* optimizer = nullptr) {
  for (const auto& name : Translator<T>::sections()) {
    const auto& sec = c.section(name);
    auto params = model.parameters(name);
    if (params.size() != sec.entries.size())
      throw FormatError(detail::concat("checkpoint: section '", name, "' holds ", sec.entries.size(),
                                       " tensors, model has ", params.size()));
    for (auto& p : params) detail::copy_into(p.tensor.mutable_value(), detail::find_entry(sec, p.name));
  }
  const auto& buffers = c.section("buffers");
  for (auto& b : model.buffers()) detail::copy_into(*b.array, detail::find_entry(buffers, b.name));
  if (!optimizer) return;
  if (!c.has_section("adam.m")) {
    optimizer->set_state(c.optimizer_steps, {}, {});
    return;
  }
  const auto params = model.parameters();
  std::vector<NdArray<T>> m, v;
  for (const auto& p : params) {
    m.emplace_back(p.tensor.shape());
    v.emplace_back(p.tensor.shape());
    detail::copy_into(m.back(), detail::find_entry(c.section("adam.m"), p.name));
    detail::copy_into(v.back(), detail::find_entry(c.section("adam.v"), p.name));
  }
  optimizer->set_state(c.optimizer_steps, std::move(m), std::move(v));
}

template <typename T>
Translator<T> model_from_checkpoint(const Checkpoint& c) {
  std::mt19937_64 rng(c.config.seed);
  Translator<T> model(c.config.model_config(c.gloss_classes, c.vocab), rng);
  restore_checkpoint(c, model);
  return model;
}

}  // namespace signflow
