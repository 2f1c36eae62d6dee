// Copyright (c) 2026 The tinytts Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinytts/tensor.hpp"

namespace tinytts {

// File layouts (all integers and doubles little-endian):
//   MEL1: magic "MEL1", u32 F, u32 n_mels, F*n_mels f64 row-major
//   SUP1: magic "SUP1", u32 T, T u32 durations, T f64 pitch, T f64 energy
//   SPK1: magic "SPK1", u32 S, u32 d_spk, S*d_spk f64, then S (u32 len, bytes) ids

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw FormatError(std::string("truncated file while reading ") + what);
}

}  // namespace detail

inline void write_u32(std::ostream& os, std::uint32_t v) { detail::put_bytes(os, &v, 4); }
inline void write_u64(std::ostream& os, std::uint64_t v) { detail::put_bytes(os, &v, 8); }
inline void write_f64(std::ostream& os, double v) { detail::put_bytes(os, &v, 8); }

inline std::uint32_t read_u32(std::istream& is, const char* what = "u32") {
  std::uint32_t v;
  detail::get_bytes(is, &v, 4, what);
  return v;
}
inline std::uint64_t read_u64(std::istream& is, const char* what = "u64") {
  std::uint64_t v;
  detail::get_bytes(is, &v, 8, what);
  return v;
}
inline double read_f64(std::istream& is, const char* what = "f64") {
  double v;
  detail::get_bytes(is, &v, 8, what);
  return v;
}

inline void write_f64_array(std::ostream& os, const std::vector<double>& v) {
  detail::put_bytes(os, v.data(), v.size() * 8);
}
inline void read_f64_array(std::istream& is, std::vector<double>& v, const char* what) {
  detail::get_bytes(is, v.data(), v.size() * 8, what);
}

inline void write_magic(std::ostream& os, const char magic[5]) { detail::put_bytes(os, magic, 4); }

inline void expect_magic(std::istream& is, const char magic[5], const char* what) {
  char buf[4];
  detail::get_bytes(is, buf, 4, what);
  if (std::memcmp(buf, magic, 4) != 0)
    throw FormatError(std::string("bad magic in ") + what + " (expected " + magic + ")");
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

// ---- MEL1 ----

inline void write_mel(const std::string& path, const Tensor& frames) {
  if (frames.rank() != 2) throw std::invalid_argument("write_mel: frames must be rank-2");
  auto os = open_out(path);
  write_magic(os, "MEL1");
  write_u32(os, static_cast<std::uint32_t>(frames.rows()));
  write_u32(os, static_cast<std::uint32_t>(frames.cols()));
  write_f64_array(os, frames.data);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline Tensor read_mel(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "MEL1", "mel file");
  const std::uint32_t f = read_u32(is, "mel frame count");
  const std::uint32_t m = read_u32(is, "mel channel count");
  Tensor t = Tensor::zeros({f, m});
  read_f64_array(is, t.data, "mel frames");
  return t;
}

// ---- SUP1 ----

struct TokenSupervision {
  std::vector<std::uint32_t> durations;  // frames per token
  std::vector<double> pitch;
  std::vector<double> energy;

  std::size_t tokens() const { return durations.size(); }
  std::size_t total_frames() const {
    std::size_t s = 0;
    for (auto d : durations) s += d;
    return s;
  }
  void validate() const {
    if (pitch.size() != durations.size() || energy.size() != durations.size())
      throw std::invalid_argument("supervision: per-token array length mismatch");
  }
};

inline void write_sup(const std::string& path, const TokenSupervision& sup) {
  sup.validate();
  auto os = open_out(path);
  write_magic(os, "SUP1");
  write_u32(os, static_cast<std::uint32_t>(sup.tokens()));
  for (auto d : sup.durations) write_u32(os, d);
  write_f64_array(os, sup.pitch);
  write_f64_array(os, sup.energy);
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline TokenSupervision read_sup(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "SUP1", "supervision file");
  const std::uint32_t t = read_u32(is, "token count");
  TokenSupervision sup;
  sup.durations.resize(t);
  for (auto& d : sup.durations) d = read_u32(is, "duration");
  sup.pitch.resize(t);
  sup.energy.resize(t);
  read_f64_array(is, sup.pitch, "pitch");
  read_f64_array(is, sup.energy, "energy");
  return sup;
}

// ---- SPK1 ----

struct SpeakerFile {
  std::size_t d_spk = 0;
  std::vector<std::vector<double>> rows;
  std::vector<std::string> ids;
};

inline void write_spk(const std::string& path, const SpeakerFile& f) {
  if (f.rows.size() != f.ids.size())
    throw std::invalid_argument("write_spk: rows/ids length mismatch");
  auto os = open_out(path);
  write_magic(os, "SPK1");
  write_u32(os, static_cast<std::uint32_t>(f.rows.size()));
  write_u32(os, static_cast<std::uint32_t>(f.d_spk));
  for (const auto& r : f.rows) {
    if (r.size() != f.d_spk) throw std::invalid_argument("write_spk: row dimension mismatch");
    write_f64_array(os, r);
  }
  for (const auto& id : f.ids) {
    write_u32(os, static_cast<std::uint32_t>(id.size()));
    detail::put_bytes(os, id.data(), id.size());
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline SpeakerFile read_spk(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "SPK1", "speaker file");
  SpeakerFile f;
  const std::uint32_t s = read_u32(is, "speaker count");
  f.d_spk = read_u32(is, "embedding dim");
  f.rows.assign(s, std::vector<double>(f.d_spk));
  for (auto& r : f.rows) read_f64_array(is, r, "embedding row");
  f.ids.resize(s);
  for (auto& id : f.ids) {
    const std::uint32_t n = read_u32(is, "id length");
    id.resize(n);
    if (n) detail::get_bytes(is, id.data(), n, "id string");
  }
  return f;
}

// ---- manifests: "relpath.mel|tok1 tok2 ...|speakerID" ----

struct ManifestEntry {
  std::string relpath;
  std::vector<std::string> tokens;
  std::string speaker_id;
};

inline std::string manifest_line(const ManifestEntry& e) {
  std::string toks;
  for (std::size_t i = 0; i < e.tokens.size(); ++i) {
    if (i) toks += ' ';
    toks += e.tokens[i];
  }
  return e.relpath + "|" + toks + "|" + e.speaker_id;
}

inline ManifestEntry parse_manifest_line(const std::string& line) {
  const std::size_t a = line.find('|');
  const std::size_t b = line.rfind('|');
  if (a == std::string::npos || b == a)
    throw FormatError("malformed manifest line: " + line);
  ManifestEntry e;
  e.relpath = line.substr(0, a);
  e.speaker_id = line.substr(b + 1);
  std::istringstream toks(line.substr(a + 1, b - a - 1));
  std::string tok;
  while (toks >> tok) e.tokens.push_back(tok);
  return e;
}

inline void write_manifest(const std::string& path, const std::vector<ManifestEntry>& entries) {
  auto os = open_out(path);
  for (const auto& e : entries) os << manifest_line(e) << "\n";
  if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<ManifestEntry> read_manifest(const std::string& path) {
  auto is = open_in(path);
  std::vector<ManifestEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    out.push_back(parse_manifest_line(line));
  }
  return out;
}

// ---- flat key=value config text ----

using KeyValues = std::map<std::string, std::string>;

inline KeyValues parse_key_values(const std::string& text) {
  KeyValues kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("malformed config line: " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline std::string read_text_file(const std::string& path) {
  auto is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  auto os = open_out(path);
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path);
}

}  // namespace tinytts
