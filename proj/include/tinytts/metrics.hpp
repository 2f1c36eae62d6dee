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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinytts/io.hpp"

namespace tinytts {

struct AlignmentCounts {
  std::size_t hits = 0;
  std::size_t substitutions = 0;
  std::size_t deletions = 0;
  std::size_t insertions = 0;

  std::size_t edits() const { return substitutions + deletions + insertions; }
};

// Minimal edit alignment with unit costs. Among cost-minimal alignments the
// operation sequence is resolved front-to-back with the fixed preference
// match > substitution > deletion > insertion, so counts are deterministic.
template <class T>
AlignmentCounts align(const std::vector<T>& ref, const std::vector<T>& hyp) {
  if (ref.empty()) throw std::invalid_argument("align: empty reference");
  const std::size_t R = ref.size(), H = hyp.size();
  // d[i][j]: minimal edits aligning ref[i:] with hyp[j:]
  std::vector<std::vector<std::size_t>> d(R + 1, std::vector<std::size_t>(H + 1, 0));
  for (std::size_t j = 0; j <= H; ++j) d[R][j] = H - j;
  for (std::size_t i = R; i-- > 0;) {
    d[i][H] = R - i;
    for (std::size_t j = H; j-- > 0;) {
      const std::size_t diag = d[i + 1][j + 1] + (ref[i] == hyp[j] ? 0 : 1);
      d[i][j] = std::min({diag, d[i + 1][j] + 1, d[i][j + 1] + 1});
    }
  }
  AlignmentCounts c;
  std::size_t i = 0, j = 0;
  while (i < R || j < H) {
    if (i < R && j < H && ref[i] == hyp[j] && d[i][j] == d[i + 1][j + 1]) {
      ++c.hits;
      ++i;
      ++j;
    } else if (i < R && j < H && d[i][j] == d[i + 1][j + 1] + 1 && !(ref[i] == hyp[j])) {
      ++c.substitutions;
      ++i;
      ++j;
    } else if (i < R && d[i][j] == d[i + 1][j] + 1) {
      ++c.deletions;
      ++i;
    } else {
      ++c.insertions;
      ++j;
    }
  }
  return c;
}

struct Rates {
  double wer = 0;
  double mer = 0;
  double wil = 0;
  double wip = 0;
};

// WER = (S+D+I)/n_ref, MER = (S+D+I)/(H+S+D+I), WIP = (H/n_ref)*(H/n_hyp),
// WIL = 1 - WIP. WIP is 0 for an empty hypothesis.
inline Rates rates(const AlignmentCounts& c, std::size_t n_ref, std::size_t n_hyp) {
  if (n_ref == 0) throw std::invalid_argument("rates: empty reference");
  if (c.hits + c.substitutions + c.deletions != n_ref ||
      c.hits + c.substitutions + c.insertions != n_hyp)
    throw std::invalid_argument("rates: inconsistent alignment counts");
  Rates r;
  const double edits = static_cast<double>(c.edits());
  r.wer = edits / static_cast<double>(n_ref);
  r.mer = edits / static_cast<double>(c.hits + c.edits());
  r.wip = n_hyp == 0 ? 0.0
                     : (static_cast<double>(c.hits) / static_cast<double>(n_ref)) *
                           (static_cast<double>(c.hits) / static_cast<double>(n_hyp));
  r.wil = 1.0 - r.wip;
  return r;
}

template <class T>
Rates error_rates(const std::vector<T>& ref, const std::vector<T>& hyp) {
  return rates(align(ref, hyp), ref.size(), hyp.size());
}

inline double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("cosine_similarity: dim mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0)
    throw std::invalid_argument("cosine_similarity: zero-norm input");
  return std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
}

// ---- report tables ----

struct EvalRow {
  std::string config;
  double wer = 0;  // fractions; written as percentages
  double mer = 0;
  double wil = 0;
  double wip = 0;
  double cos_sim = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

inline constexpr const char* kReportHeader = "config\tWER\tMER\tWIL\tWIP\tCosSim";

// Rates as percentages with two decimals, similarity with two decimals,
// matching the usual table formatting.
inline std::string write_report_tsv(const EvalReport& report) {
  std::string out = std::string(kReportHeader) + "\n";
  char buf[256];
  for (const EvalRow& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%s\t%.2f\t%.2f\t%.2f\t%.2f\t%.2f\n", r.config.c_str(),
                  100.0 * r.wer, 100.0 * r.mer, 100.0 * r.wil, 100.0 * r.wip, r.cos_sim);
    out += buf;
  }
  return out;
}

inline EvalReport parse_report_tsv(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != kReportHeader)
    throw FormatError("report: missing or malformed header");
  EvalReport rep;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    EvalRow r;
    std::string field;
    if (!std::getline(ls, r.config, '\t')) throw FormatError("report: bad row: " + line);
    auto next = [&ls, &field, &line]() {
      if (!std::getline(ls, field, '\t')) throw FormatError("report: bad row: " + line);
      return std::stod(field);
    };
    r.wer = next() / 100.0;
    r.mer = next() / 100.0;
    r.wil = next() / 100.0;
    r.wip = next() / 100.0;
    r.cos_sim = next();
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

inline void write_report_file(const std::string& path, const EvalReport& report) {
  write_text_file(path, write_report_tsv(report));
}

inline EvalReport read_report_file(const std::string& path) {
  return parse_report_tsv(read_text_file(path));
}

}  // namespace tinytts
