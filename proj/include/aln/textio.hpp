// SPDX-License-Identifier: Apache-2.0
/**
 * @file   textio.hpp
 * @brief  Shared helpers for the line-delimited record files.
 *
 * Records are one JSON object per line, UTF-8. Floating-point arrays are
 * written by hand with 17 significant digits ("%.17g") so every double
 * survives a text roundtrip exactly; negative zero is written as "-0.0" so
 * the parser keeps its sign.
 */
#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <system_error>

#include <nlohmann/json.hpp>

#include "aln/errors.hpp"

namespace aln::textio {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

inline void append_double(std::string& out, double v) {
  if (v == 0.0 && std::signbit(v)) {
    out += "-0.0";
    return;
  }
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  out.append(buf, static_cast<std::size_t>(n));
}

inline void append_array(std::string& out, std::span<const double> values) {
  out += '[';
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i) out += ',';
    append_double(out, values[i]);
  }
  out += ']';
}

inline std::string format_double(double v) {
  std::string s;
  append_double(s, v);
  return s;
}

/// Writes `content` to a sibling temp file and renames it over `path`, so a
/// reader never observes a half-written file.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + tmp.string() + "' for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write to '" + tmp.string() + "' failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "'");
  }
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read from '" + path.string() + "' failed");
  return s;
}

/// Parses one record; `line_no` is 1-based and lands in the error message.
inline json parse_record(std::string_view line, std::size_t line_no, std::string_view file) {
  try {
    json j = json::parse(line);
    if (!j.is_object()) throw ParseError("");
    return j;
  } catch (const std::exception&) {
    throw ParseError(std::string(file) + ":" + std::to_string(line_no) +
                     ": malformed record");
  }
}

/// Typed field access that reports the line on a missing or mistyped key.
template <typename T>
T field(const json& j, const char* key, std::size_t line_no, std::string_view file) {
  auto it = j.find(key);
  if (it == j.end())
    throw ParseError(std::string(file) + ":" + std::to_string(line_no) + ": missing field '" +
                     key + "'");
  try {
    return it->get<T>();
  } catch (const std::exception&) {
    throw ParseError(std::string(file) + ":" + std::to_string(line_no) + ": field '" + key +
                     "' has the wrong type");
  }
}

/// Splits on '\n'. A final line with no terminating newline is reported
/// through `unterminated` so loaders can reject truncated files.
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn, bool* unterminated = nullptr) {
  std::size_t pos = 0;
  std::size_t line_no = 0;
  if (unterminated) *unterminated = false;
  while (pos < text.size()) {
    const std::size_t nl = text.find('\n', pos);
    ++line_no;
    if (nl == std::string_view::npos) {
      if (unterminated) *unterminated = true;
      fn(text.substr(pos), line_no);
      return;
    }
    fn(text.substr(pos, nl - pos), line_no);
    pos = nl + 1;
  }
}

}  // namespace aln::textio
