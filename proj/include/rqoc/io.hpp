/* Copyright 2026 The rqoc Authors. All Rights Reserved.
Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at
    http://www.apache.org/licenses/LICENSE-2.0
Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

// Pulse files and CSV tables.
//
// A pulse file is plain text: a versioned header of `key value` lines, then
// one sample per line after the `samples` marker. Doubles are written in the
// shortest form that parses back to the same bits, so write/read round-trips
// exactly. Samples are u / omega_r; physical units never enter the file.

#ifndef RQOC_IO_HPP
#define RQOC_IO_HPP

#include "rqoc/propagator.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rqoc {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view text) {
  if (text == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (text == "inf") return std::numeric_limits<double>::infinity();
  if (text == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw IoError("cannot parse number '" + std::string(text) + "'");
  return v;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  for (int i = 15; i >= 0; --i) {
    buf[i] = "0123456789abcdef"[v & 0xF];
    v >>= 4;
  }
  buf[16] = '\0';
  return buf;
}

inline constexpr int kPulseFileVersion = 1;

struct PulseFile {
  int version = kPulseFileVersion;
  std::string fingerprint;  // hash of the design configuration, hex
  ControlPulse pulse;
};

inline void write_pulse(std::ostream& out, const PulseFile& file) {
  const auto& p = file.pulse;
  out << "rqoc-pulse\n";
  out << "version " << file.version << '\n';
  out << "horizon " << format_double(p.grid().horizon) << '\n';
  out << "steps " << p.steps() << '\n';
  out << "channels " << p.channels() << '\n';
  out << "lower";
  for (Index c = 0; c < p.channels(); ++c) out << ' ' << format_double(p.lower()(c));
  out << "\nupper";
  for (Index c = 0; c < p.channels(); ++c) out << ' ' << format_double(p.upper()(c));
  out << "\nfingerprint " << (file.fingerprint.empty() ? "-" : file.fingerprint) << '\n';
  out << "samples\n";
  for (Index k = 0; k < p.steps(); ++k) {
    for (Index c = 0; c < p.channels(); ++c) out << (c ? " " : "") << format_double(p.value(k, c));
    out << '\n';
  }
}

inline PulseFile read_pulse(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "rqoc-pulse") throw IoError("pulse file: missing magic line");
  std::map<std::string, std::vector<std::string>> header;
  while (std::getline(in, line) && line != "samples") {
    std::istringstream fields(line);
    std::string key, word;
    fields >> key;
    if (key.empty()) continue;
    auto& values = header[key];
    while (fields >> word) values.push_back(word);
  }
  if (line != "samples") throw IoError("pulse file: missing samples section");
  auto field = [&](const std::string& key) -> const std::vector<std::string>& {
    const auto it = header.find(key);
    if (it == header.end() || it->second.empty()) throw IoError("pulse file: missing '" + key + "'");
    return it->second;
  };
  PulseFile file;
  file.version = static_cast<int>(parse_double(field("version").front()));
  if (file.version != kPulseFileVersion)
    throw IoError("pulse file: unsupported version " + std::to_string(file.version));
  const double horizon = parse_double(field("horizon").front());
  const auto steps = static_cast<Index>(parse_double(field("steps").front()));
  const auto channels = static_cast<Index>(parse_double(field("channels").front()));
  if (steps < 1 || channels < 1) throw IoError("pulse file: bad dimensions");
  const auto& lo = field("lower");
  const auto& hi = field("upper");
  if (static_cast<Index>(lo.size()) != channels || static_cast<Index>(hi.size()) != channels)
    throw IoError("pulse file: bound count does not match channels");
  RVector lower(channels), upper(channels);
  for (Index c = 0; c < channels; ++c) {
    lower(c) = parse_double(lo[static_cast<std::size_t>(c)]);
    upper(c) = parse_double(hi[static_cast<std::size_t>(c)]);
  }
  file.fingerprint = field("fingerprint").front();
  if (file.fingerprint == "-") file.fingerprint.clear();
  RMatrix values(steps, channels);
  for (Index k = 0; k < steps; ++k) {
    if (!std::getline(in, line)) throw IoError("pulse file: truncated samples");
    std::istringstream fields(line);
    std::string word;
    for (Index c = 0; c < channels; ++c) {
      if (!(fields >> word)) throw IoError("pulse file: short sample row " + std::to_string(k));
      values(k, c) = parse_double(word);
    }
  }
  try {
    file.pulse = ControlPulse(TimeGrid{horizon, static_cast<int>(steps)}, std::move(values), lower, upper);
  } catch (const std::invalid_argument& e) {
    throw IoError(std::string("pulse file: ") + e.what());
  }
  return file;
}

inline void save_pulse(const std::filesystem::path& path, const PulseFile& file) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  write_pulse(out, file);
  if (!out) throw IoError("write failed: " + path.string());
}

inline PulseFile load_pulse(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return read_pulse(in);
}

/// Rectangular table with a header row, written as comma-separated values.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  CsvTable& row(std::vector<std::string> cells) {
    if (cells.size() != columns_.size()) throw std::invalid_argument("CsvTable: row width mismatch");
    rows_.push_back(std::move(cells));
    return *this;
  }
  CsvTable& row(const std::vector<double>& cells) {
    std::vector<std::string> text;
    text.reserve(cells.size());
    for (double v : cells) text.push_back(format_double(v));
    return row(std::move(text));
  }

  const std::vector<std::string>& columns() const { return columns_; }
  std::size_t size() const { return rows_.size(); }

  void write(std::ostream& out) const {
    auto emit = [&out](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
      out << '\n';
    };
    emit(columns_);
    for (const auto& r : rows_) emit(r);
  }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    write(out);
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace rqoc

#endif  // RQOC_IO_HPP
