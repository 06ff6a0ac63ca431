// SPDX-License-Identifier: Apache-2.0
/**
 * @file   checkpoint.hpp
 * @brief  Model checkpoint file: same line-delimited conventions as the
 *         dataset format.
 *
 *   line 1   {"format_version":1,"variant":...,"d_acoustic":...,
 *             "d_linguistic":...,"d_attn":...,"gru_hidden":...,
 *             "num_classes":...,"init_seed":...}
 *   line 2.. {"name":...,"rows":r,"cols":c,"values":[r*c values]}
 *
 * Tensors appear in parameter_layout() order. Adam moments are not stored;
 * a checkpoint is for inference and evaluation, and a loaded model starts
 * with zero moments and zero gradients.
 */
#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "aln/errors.hpp"
#include "aln/model.hpp"
#include "aln/textio.hpp"

namespace aln {

inline std::string serialize_checkpoint(const ModelParams& p) {
  const auto& c = p.config();
  textio::ordered_json header{{"format_version", 1},
                              {"variant", to_string(c.variant)},
                              {"d_acoustic", c.d_acoustic},
                              {"d_linguistic", c.d_linguistic},
                              {"d_attn", c.d_attn},
                              {"gru_hidden", c.gru_hidden},
                              {"num_classes", c.num_classes},
                              {"init_seed", c.init_seed}};
  std::string out = header.dump();
  out += '\n';
  for (const auto& t : p.tensors()) {
    out += "{\"name\":";
    out += textio::json(t.name).dump();
    out += ",\"rows\":" + std::to_string(t.value.rows());
    out += ",\"cols\":" + std::to_string(t.value.cols());
    out += ",\"values\":";
    textio::append_array(out, t.value.values());
    out += "}\n";
  }
  return out;
}

inline void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  for (const auto& t : p.tensors()) require_finite(t.value, "parameter '" + t.name + "'");
  textio::write_file_atomic(path, serialize_checkpoint(p));
}

inline ModelParams parse_checkpoint(std::string_view text, std::string_view name = "<checkpoint>") {
  using textio::field;
  ModelConfig cfg;
  bool have_header = false;
  bool unterminated = false;
  std::vector<ParamTensor> tensors;
  textio::for_each_line(
      text,
      [&](std::string_view line, std::size_t no) {
        const auto rec = textio::parse_record(line, no, name);
        if (!have_header) {
          const auto version = field<int>(rec, "format_version", no, name);
          if (version != 1)
            throw ParseError(std::string(name) + ":1: unsupported format_version " +
                             std::to_string(version));
          cfg.variant = parse_variant(field<std::string>(rec, "variant", no, name));
          cfg.d_acoustic = field<std::size_t>(rec, "d_acoustic", no, name);
          cfg.d_linguistic = field<std::size_t>(rec, "d_linguistic", no, name);
          cfg.d_attn = field<std::size_t>(rec, "d_attn", no, name);
          cfg.gru_hidden = field<std::size_t>(rec, "gru_hidden", no, name);
          cfg.num_classes = field<std::size_t>(rec, "num_classes", no, name);
          cfg.init_seed = field<std::uint64_t>(rec, "init_seed", no, name);
          cfg.validate();
          have_header = true;
          return;
        }
        auto tname = field<std::string>(rec, "name", no, name);
        const auto rows = field<std::size_t>(rec, "rows", no, name);
        const auto cols = field<std::size_t>(rec, "cols", no, name);
        auto values = field<std::vector<double>>(rec, "values", no, name);
        if (values.size() != rows * cols)
          throw ValidationError("checkpoint tensor '" + tname + "': " +
                                std::to_string(values.size()) + " values for shape " +
                                std::to_string(rows) + "x" + std::to_string(cols));
        tensors.emplace_back(std::move(tname), Matrix(rows, cols, std::move(values)));
      },
      &unterminated);
  if (!have_header) throw ParseError(std::string(name) + ":1: missing header record");
  if (unterminated)
    throw ParseError(std::string(name) + ":" + std::to_string(tensors.size() + 1) +
                     ": truncated record (no terminating newline)");
  return ModelParams(cfg, std::move(tensors));
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(textio::read_file(path), path.string());
}

}  // namespace aln
