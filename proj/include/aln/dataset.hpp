// SPDX-License-Identifier: Apache-2.0
/**
 * @file   dataset.hpp
 * @brief  Utterance/Dataset schema, the synthetic paired-embedding generator
 *         and the line-delimited dataset file format.
 *
 * File layout (UTF-8, one JSON object per line):
 *
 *   line 1   {"format_version":1,"d_acoustic":A,"d_linguistic":L,
 *             "num_classes":K,"split":"train"|"test","count":N
 *             [,"generator":{...GeneratorConfig...}]}
 *   line 2.. {"id":S,"label":k,"frames":T,"acoustic":[T*A values, row-major],
 *             "teacher":[L values]}
 *
 * Every record ends with '\n'.
 */
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "aln/errors.hpp"
#include "aln/matrix.hpp"
#include "aln/rng.hpp"
#include "aln/textio.hpp"

namespace aln {

enum class Split { train, test };

inline std::string_view to_string(Split s) noexcept { return s == Split::train ? "train" : "test"; }

inline Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + std::string(s) + "'");
}

struct Utterance {
  std::string id;
  Matrix acoustic;  // T x d_acoustic frame embeddings
  Matrix teacher;   // 1 x d_linguistic pooled teacher embedding
  std::size_t label = 0;

  std::size_t frames() const noexcept { return acoustic.rows(); }

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct GeneratorConfig {
  std::uint64_t seed = 42;
  std::size_t num_classes = 8;
  std::size_t train_count = 1000;
  std::size_t test_count = 250;
  std::size_t d_acoustic = 256;
  std::size_t d_linguistic = 768;
  std::size_t min_len = 5;
  std::size_t max_len = 20;
  double teacher_noise = 0.3;
  double acoustic_noise = 0.5;
  double keyword_prob = 0.6;
  double centroid_scale = 1.0;

  /// The desk-scale profile used by the acceptance runs.
  static GeneratorConfig small_profile() {
    GeneratorConfig c;
    c.d_acoustic = 32;
    c.d_linguistic = 96;
    return c;
  }

  void validate() const {
    auto fail = [](const std::string& what) { throw ValidationError("generator: " + what); };
    if (num_classes < 1) fail("num_classes must be >= 1");
    if (d_acoustic < 1) fail("d_acoustic must be >= 1");
    if (d_linguistic < 1) fail("d_linguistic must be >= 1");
    if (min_len < 1) fail("min_len must be >= 1");
    if (max_len < min_len) fail("max_len must be >= min_len");
    if (train_count < num_classes) fail("train_count must be >= num_classes");
    if (test_count < num_classes) fail("test_count must be >= num_classes");
    if (!(teacher_noise >= 0.0) || !std::isfinite(teacher_noise))
      fail("teacher_noise must be >= 0");
    if (!(acoustic_noise >= 0.0) || !std::isfinite(acoustic_noise))
      fail("acoustic_noise must be >= 0");
    if (!(keyword_prob >= 0.0 && keyword_prob <= 1.0)) fail("keyword_prob must lie in [0,1]");
    if (!(centroid_scale > 0.0) || !std::isfinite(centroid_scale))
      fail("centroid_scale must be positive");
  }

  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

inline void to_json(textio::ordered_json& j, const GeneratorConfig& c) {
  j = textio::ordered_json{{"seed", c.seed},
                           {"num_classes", c.num_classes},
                           {"train_count", c.train_count},
                           {"test_count", c.test_count},
                           {"d_acoustic", c.d_acoustic},
                           {"d_linguistic", c.d_linguistic},
                           {"min_len", c.min_len},
                           {"max_len", c.max_len},
                           {"teacher_noise", c.teacher_noise},
                           {"acoustic_noise", c.acoustic_noise},
                           {"keyword_prob", c.keyword_prob},
                           {"centroid_scale", c.centroid_scale}};
}

inline void from_json(const textio::json& j, GeneratorConfig& c) {
  j.at("seed").get_to(c.seed);
  j.at("num_classes").get_to(c.num_classes);
  j.at("train_count").get_to(c.train_count);
  j.at("test_count").get_to(c.test_count);
  j.at("d_acoustic").get_to(c.d_acoustic);
  j.at("d_linguistic").get_to(c.d_linguistic);
  j.at("min_len").get_to(c.min_len);
  j.at("max_len").get_to(c.max_len);
  j.at("teacher_noise").get_to(c.teacher_noise);
  j.at("acoustic_noise").get_to(c.acoustic_noise);
  j.at("keyword_prob").get_to(c.keyword_prob);
  j.at("centroid_scale").get_to(c.centroid_scale);
}

struct Dataset {
  std::size_t d_acoustic = 0;
  std::size_t d_linguistic = 0;
  std::size_t num_classes = 0;
  Split split = Split::train;
  std::vector<Utterance> utterances;
  std::optional<GeneratorConfig> generator;  // provenance, when synthetic

  std::size_t size() const noexcept { return utterances.size(); }

  /// Checks every invariant; errors name the offending utterance id.
  void validate() const {
    if (d_acoustic < 1 || d_linguistic < 1 || num_classes < 1)
      throw ValidationError("dataset: dimensions and class count must be >= 1");
    std::unordered_set<std::string_view> ids;
    for (const auto& u : utterances) {
      if (!ids.insert(u.id).second) throw ValidationError("dataset: duplicate id '" + u.id + "'");
      if (u.acoustic.rows() < 1)
        throw ValidationError("utterance '" + u.id + "': no acoustic frames");
      if (u.acoustic.cols() != d_acoustic)
        throw ValidationError("utterance '" + u.id + "': acoustic width " +
                              std::to_string(u.acoustic.cols()) + " != d_acoustic " +
                              std::to_string(d_acoustic));
      if (u.teacher.rows() != 1 || u.teacher.cols() != d_linguistic)
        throw ValidationError("utterance '" + u.id + "': teacher length " +
                              std::to_string(u.teacher.size()) + " != d_linguistic " +
                              std::to_string(d_linguistic));
      if (u.label >= num_classes)
        throw ValidationError("utterance '" + u.id + "': label " + std::to_string(u.label) +
                              " outside [0, " + std::to_string(num_classes) + ")");
      if (!u.acoustic.all_finite())
        throw ValidationError("utterance '" + u.id + "': acoustic matrix has non-finite values");
      if (!u.teacher.all_finite())
        throw ValidationError("utterance '" + u.id + "': teacher embedding has non-finite values");
    }
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

// --- generator --------------------------------------------------------------

namespace detail {

inline constexpr std::uint64_t kCentroidTag = fnv1a("centroids");
inline constexpr std::uint64_t kProjectionTag = fnv1a("projection");
inline constexpr std::uint64_t kKeywordTag = fnv1a("keywords");
inline constexpr std::uint64_t kUtteranceTag = fnv1a("utterance");

/// Shared latent structure: class centroids, hidden projection, keywords.
struct Latent {
  Matrix centroids;   // K x d_linguistic
  Matrix projection;  // d_linguistic x d_acoustic (applied to rows)
  Matrix keywords;    // K x d_acoustic
};

inline Latent draw_latent(const GeneratorConfig& cfg) {
  Latent l{Matrix(cfg.num_classes, cfg.d_linguistic), Matrix(cfg.d_linguistic, cfg.d_acoustic),
           Matrix(cfg.num_classes, cfg.d_acoustic)};
  Stream cs = Stream::keyed(cfg.seed, kCentroidTag);
  for (auto& v : l.centroids.values()) v = cfg.centroid_scale * cs.normal();
  Stream ps = Stream::keyed(cfg.seed, kProjectionTag);
  for (auto& v : l.projection.values()) v = ps.normal();
  Stream ks = Stream::keyed(cfg.seed, kKeywordTag);
  for (auto& v : l.keywords.values()) v = cfg.centroid_scale * ks.normal();
  return l;
}

inline Utterance draw_utterance(const GeneratorConfig& cfg, const Latent& latent, Split split,
                                std::size_t index) {
  Stream s = Stream::keyed(cfg.seed, kUtteranceTag, static_cast<std::uint64_t>(split), index);
  const std::size_t dl = cfg.d_linguistic;
  const std::size_t da = cfg.d_acoustic;
  const std::size_t label = index % cfg.num_classes;
  const auto centroid = latent.centroids.row(label);

  Utterance u;
  char id[48];
  std::snprintf(id, sizeof id, "%s-%06zu", split == Split::train ? "train" : "test", index);
  u.id = id;
  u.label = label;

  u.teacher = Matrix(1, dl);
  for (std::size_t j = 0; j < dl; ++j) u.teacher[j] = centroid[j] + cfg.teacher_noise * s.normal();

  const auto frames = static_cast<std::size_t>(s.uniform_int(cfg.min_len, cfg.max_len));
  const double norm = 1.0 / std::sqrt(static_cast<double>(dl));
  u.acoustic = Matrix(frames, da);
  Matrix latent_frame(1, dl);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t j = 0; j < dl; ++j)
      latent_frame[j] = centroid[j] + cfg.teacher_noise * s.normal();
    auto out = u.acoustic.row(t);
    for (std::size_t k = 0; k < da; ++k) out[k] = 0.0;
    for (std::size_t j = 0; j < dl; ++j) {
      const double lj = latent_frame[j];
      const auto prow = latent.projection.row(j);
      for (std::size_t k = 0; k < da; ++k) out[k] += lj * prow[k];
    }
    for (std::size_t k = 0; k < da; ++k) out[k] = out[k] * norm + cfg.acoustic_noise * s.normal();
  }

  // Both draws are always consumed so keyword_prob never shifts later values.
  const double keyword_draw = s.uniform();
  const auto keyword_frame = static_cast<std::size_t>(s.uniform_int(0, frames - 1));
  if (keyword_draw < cfg.keyword_prob) {
    const auto kw = latent.keywords.row(label);
    auto out = u.acoustic.row(keyword_frame);
    for (std::size_t k = 0; k < da; ++k) out[k] = kw[k];
  }
  return u;
}

inline Dataset draw_split(const GeneratorConfig& cfg, const Latent& latent, Split split,
                          std::size_t count) {
  Dataset ds;
  ds.d_acoustic = cfg.d_acoustic;
  ds.d_linguistic = cfg.d_linguistic;
  ds.num_classes = cfg.num_classes;
  ds.split = split;
  ds.generator = cfg;
  ds.utterances.reserve(count);
  for (std::size_t i = 0; i < count; ++i) ds.utterances.push_back(draw_utterance(cfg, latent, split, i));
  return ds;
}

}  // namespace detail

struct DatasetPair {
  Dataset train;
  Dataset test;
};

/// Synthetic paired acoustic/teacher data. Labels cycle 0..K-1 so both
/// splits are class-balanced. Per utterance of class y:
///   teacher  = c_y + teacher_noise * n
///   frame_t  = (c_y + teacher_noise * n_t) P / sqrt(d_linguistic)
///              + acoustic_noise * m_t
/// and with probability keyword_prob one random frame is replaced by the
/// class keyword vector. Centroids, P and keywords are shared between the
/// splits; every utterance draws from its own (seed, split, index) stream.
inline DatasetPair generate(const GeneratorConfig& cfg) {
  cfg.validate();
  const detail::Latent latent = detail::draw_latent(cfg);
  return {detail::draw_split(cfg, latent, Split::train, cfg.train_count),
          detail::draw_split(cfg, latent, Split::test, cfg.test_count)};
}

// --- file format ------------------------------------------------------------

inline std::string serialize_dataset(const Dataset& ds) {
  textio::ordered_json header{{"format_version", 1},
                              {"d_acoustic", ds.d_acoustic},
                              {"d_linguistic", ds.d_linguistic},
                              {"num_classes", ds.num_classes},
                              {"split", to_string(ds.split)},
                              {"count", ds.utterances.size()}};
  if (ds.generator) header["generator"] = *ds.generator;
  std::string out = header.dump();
  out += '\n';
  for (const auto& u : ds.utterances) {
    out += "{\"id\":";
    out += textio::json(u.id).dump();
    out += ",\"label\":" + std::to_string(u.label);
    out += ",\"frames\":" + std::to_string(u.frames());
    out += ",\"acoustic\":";
    textio::append_array(out, u.acoustic.values());
    out += ",\"teacher\":";
    textio::append_array(out, u.teacher.values());
    out += "}\n";
  }
  return out;
}

/// Validates first; nothing is written when validation fails.
inline void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  textio::write_file_atomic(path, serialize_dataset(ds));
}

inline Dataset parse_dataset(std::string_view text, std::string_view name = "<dataset>") {
  using textio::field;
  Dataset ds;
  std::size_t expected = 0;
  bool have_header = false;
  bool unterminated = false;
  textio::for_each_line(
      text,
      [&](std::string_view line, std::size_t no) {
        const auto rec = textio::parse_record(line, no, name);
        if (!have_header) {
          const auto version = field<int>(rec, "format_version", no, name);
          if (version != 1)
            throw ParseError(std::string(name) + ":1: unsupported format_version " +
                             std::to_string(version));
          ds.d_acoustic = field<std::size_t>(rec, "d_acoustic", no, name);
          ds.d_linguistic = field<std::size_t>(rec, "d_linguistic", no, name);
          ds.num_classes = field<std::size_t>(rec, "num_classes", no, name);
          ds.split = parse_split(field<std::string>(rec, "split", no, name));
          expected = field<std::size_t>(rec, "count", no, name);
          if (auto g = rec.find("generator"); g != rec.end()) {
            try {
              ds.generator = g->get<GeneratorConfig>();
            } catch (const std::exception&) {
              throw ParseError(std::string(name) + ":1: malformed generator block");
            }
          }
          have_header = true;
          return;
        }
        Utterance u;
        u.id = field<std::string>(rec, "id", no, name);
        u.label = field<std::size_t>(rec, "label", no, name);
        const auto frames = field<std::size_t>(rec, "frames", no, name);
        auto acoustic = field<std::vector<double>>(rec, "acoustic", no, name);
        auto teacher = field<std::vector<double>>(rec, "teacher", no, name);
        if (acoustic.size() != frames * ds.d_acoustic)
          throw ValidationError("utterance '" + u.id + "': acoustic has " +
                                std::to_string(acoustic.size()) + " values, expected frames*d_acoustic = " +
                                std::to_string(frames * ds.d_acoustic));
        if (teacher.size() != ds.d_linguistic)
          throw ValidationError("utterance '" + u.id + "': teacher length " +
                                std::to_string(teacher.size()) + " != d_linguistic " +
                                std::to_string(ds.d_linguistic));
        u.acoustic = Matrix(frames, ds.d_acoustic, std::move(acoustic));
        u.teacher = Matrix(1, ds.d_linguistic, std::move(teacher));
        ds.utterances.push_back(std::move(u));
      },
      &unterminated);
  if (!have_header) throw ParseError(std::string(name) + ":1: missing header record");
  if (unterminated) {
    std::size_t lines = 1 + ds.utterances.size();
    throw ParseError(std::string(name) + ":" + std::to_string(lines) +
                     ": truncated record (no terminating newline)");
  }
  if (ds.utterances.size() != expected)
    throw ParseError(std::string(name) + ": header promises " + std::to_string(expected) +
                     " records, found " + std::to_string(ds.utterances.size()));
  ds.validate();
  return ds;
}

inline Dataset load_dataset(const std::filesystem::path& path) {
  return parse_dataset(textio::read_file(path), path.string());
}

}  // namespace aln
