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
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinytts/io.hpp"
#include "tinytts/model.hpp"
#include "tinytts/rng.hpp"
#include "tinytts/tensor.hpp"

namespace tinytts {

// Deterministic synthetic "speech". Each phoneme token owns a prototype frame
// vector; a speaker is an additive offset on top of it. Utterance frames are
//
//   frame = prototype[token] + speaker.offset + gauss(noise_scale)
//
// with every token repeated for its fixed per-token duration. Pitch is the
// projection of a token's mean frame onto a fixed probe direction, so pitch,
// energy and durations are all exactly re-measurable from the frames alone --
// which is what the adaptation pre-processing relies on.
//
// Speaker offsets are constructed zero-sum with probe-aligned components, so
// base pitches are evenly spread and the "average voice" sits away from every
// individual speaker.

struct CorpusSpec {
  std::size_t n_phonemes = 12;
  std::size_t n_mels = 20;
  std::size_t n_speakers = 3;
  std::size_t utts_per_speaker = 20;
  std::size_t min_len = 11;  // token-count bounds
  std::size_t max_len = 13;
  double speaker_offset_scale = 0.3;  // sigma_spk
  double noise_scale = 0.01;          // sigma_n
  std::size_t d_spk = 192;            // dimension of the exported embedding table
  std::uint64_t seed = 1;

  void validate() const {
    if (n_phonemes < 1 || n_mels < 1 || n_speakers < 1 || utts_per_speaker < 1 || d_spk < 1)
      throw std::invalid_argument("corpus spec: counts must be >= 1");
    if (min_len < 1 || max_len < min_len)
      throw std::invalid_argument("corpus spec: need 1 <= min_len <= max_len");
    if (speaker_offset_scale < 0 || noise_scale < 0)
      throw std::invalid_argument("corpus spec: scales must be >= 0");
  }

  KeyValues to_key_values() const {
    KeyValues kv;
    char buf[64];
    auto fmt = [&buf](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    kv["n_phonemes"] = std::to_string(n_phonemes);
    kv["n_mels"] = std::to_string(n_mels);
    kv["n_speakers"] = std::to_string(n_speakers);
    kv["utts_per_speaker"] = std::to_string(utts_per_speaker);
    kv["min_len"] = std::to_string(min_len);
    kv["max_len"] = std::to_string(max_len);
    kv["speaker_offset_scale"] = fmt(speaker_offset_scale);
    kv["noise_scale"] = fmt(noise_scale);
    kv["d_spk"] = std::to_string(d_spk);
    kv["corpus_seed"] = std::to_string(seed);
    return kv;
  }

  static CorpusSpec from_key_values(const KeyValues& kv) {
    CorpusSpec c;
    auto geti = [&kv](const char* k, std::size_t& out) {
      if (auto it = kv.find(k); it != kv.end()) out = std::stoull(it->second);
    };
    geti("n_phonemes", c.n_phonemes);
    geti("n_mels", c.n_mels);
    geti("n_speakers", c.n_speakers);
    geti("utts_per_speaker", c.utts_per_speaker);
    geti("min_len", c.min_len);
    geti("max_len", c.max_len);
    geti("d_spk", c.d_spk);
    if (auto it = kv.find("speaker_offset_scale"); it != kv.end())
      c.speaker_offset_scale = std::stod(it->second);
    if (auto it = kv.find("noise_scale"); it != kv.end()) c.noise_scale = std::stod(it->second);
    if (auto it = kv.find("corpus_seed"); it != kv.end()) c.seed = std::stoull(it->second);
    c.validate();
    return c;
  }
};

struct SpeakerProfile {
  std::vector<double> offset;  // [n_mels], norm <= sigma_spk * sqrt(n_mels)
  double base_pitch = 0.0;     // probe . offset
  std::string id;
};

inline std::string token_name(std::size_t id) { return "p" + std::to_string(id); }

inline std::size_t parse_token(const std::string& name, std::size_t vocab) {
  if (name.size() < 2 || name[0] != 'p') throw FormatError("bad token name: " + name);
  const std::size_t id = std::stoull(name.substr(1));
  if (id >= vocab)
    throw FormatError("token " + name + " out of range (vocab " + std::to_string(vocab) + ")");
  return id;
}

namespace oracle_detail {

constexpr std::uint64_t kEmbedderSeed = 0x7a3f9b2c15d84e61ULL;
constexpr std::uint64_t kProbeSeed = 0x4c1d9e8f2b6a3705ULL;

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace oracle_detail

// Stand-in for the external speaker-embedding extractor: time-mean of the
// frames through a fixed seeded projection, L2-normalized. The projection
// depends only on (n_mels, d_spk), like a fixed pretrained model would.
class ToyEmbedder {
 public:
  ToyEmbedder(std::size_t n_mels, std::size_t d_spk) : n_mels_(n_mels), d_spk_(d_spk) {
    Rng rng = derived_rng(mix_u64(oracle_detail::kEmbedderSeed, n_mels * 131071 + d_spk),
                          "toy-embedder");
    proj_ = rng.gauss_vec(d_spk * n_mels, 1.0 / std::sqrt(static_cast<double>(n_mels)));
  }

  std::size_t d_spk() const { return d_spk_; }

  std::vector<double> embed(const Tensor& mel) const {
    if (mel.rank() != 2 || mel.rows() == 0) throw std::invalid_argument("toy_embed: empty input");
    if (mel.cols() != n_mels_) throw std::invalid_argument("toy_embed: channel count mismatch");
    const std::size_t F = mel.rows();
    std::vector<double> mean(n_mels_, 0.0);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t c = 0; c < n_mels_; ++c) mean[c] += mel.data[f * n_mels_ + c];
    for (auto& v : mean) v /= static_cast<double>(F);
    std::vector<double> e(d_spk_, 0.0);
    for (std::size_t r = 0; r < d_spk_; ++r)
      for (std::size_t c = 0; c < n_mels_; ++c) e[r] += proj_[r * n_mels_ + c] * mean[c];
    const double n = oracle_detail::norm(e);
    if (n == 0.0) throw std::runtime_error("toy_embed: zero-norm embedding");
    for (auto& v : e) v /= n;
    return e;
  }

 private:
  std::size_t n_mels_;
  std::size_t d_spk_;
  std::vector<double> proj_;  // [d_spk x n_mels]
};

// Fixed unit probe direction; pitch is the projection of frames onto it.
inline std::vector<double> pitch_probe(std::size_t n_mels) {
  Rng rng = derived_rng(mix_u64(oracle_detail::kProbeSeed, n_mels), "pitch-probe");
  std::vector<double> q = rng.gauss_vec(n_mels);
  const double n = oracle_detail::norm(q);
  for (auto& v : q) v /= n;
  return q;
}

// Prototype inventory plus the fixed oracles that stand in for the paper's
// external ASR / feature tooling. Fully reconstructible from a CorpusSpec.
class CorpusOracle {
 public:
  static CorpusOracle build(const CorpusSpec& spec) {
    spec.validate();
    CorpusOracle o;
    o.spec_ = spec;
    o.probe_ = pitch_probe(spec.n_mels);

    // Fixed per-token durations in 1..4.
    o.durations_.resize(spec.n_phonemes);
    for (std::size_t t = 0; t < spec.n_phonemes; ++t)
      o.durations_[t] =
          1 + static_cast<std::uint32_t>(mix_u64(mix_u64(spec.seed, fnv1a("dur")), t) % 4);

    // Prototypes: seeded rejection sampling under the pairwise separation
    // constraint. The probe component is shrunk so token jitter stays small
    // against the speaker base pitches, and the duration-weighted mean is
    // removed (a common shift, distance-preserving) so that frame averages of
    // balanced utterances isolate the speaker offset.
    const double sep =
        (4.0 * spec.speaker_offset_scale + 6.0 * spec.noise_scale) *
        std::sqrt(static_cast<double>(spec.n_mels));
    const double rho =
        std::max(1.0, 1.1 * (4.0 * spec.speaker_offset_scale + 6.0 * spec.noise_scale));
    const int kMaxAttempts = 200;
    Rng rng = derived_rng(spec.seed, "prototypes");
    bool ok = false;
    for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
      o.protos_.assign(spec.n_phonemes, std::vector<double>(spec.n_mels));
      for (auto& p : o.protos_) {
        p = rng.gauss_vec(spec.n_mels, rho);
        const double qc = oracle_detail::dot(p, o.probe_);
        for (std::size_t c = 0; c < spec.n_mels; ++c) p[c] -= 0.9 * qc * o.probe_[c];
      }
      std::vector<double> wmean(spec.n_mels, 0.0);
      double wsum = 0.0;
      for (std::size_t t = 0; t < spec.n_phonemes; ++t) {
        const double w = static_cast<double>(o.durations_[t]);
        wsum += w;
        for (std::size_t c = 0; c < spec.n_mels; ++c) wmean[c] += w * o.protos_[t][c];
      }
      for (auto& v : wmean) v /= wsum;
      for (auto& p : o.protos_)
        for (std::size_t c = 0; c < spec.n_mels; ++c) p[c] -= wmean[c];
      ok = true;
      for (std::size_t a = 0; a < spec.n_phonemes && ok; ++a)
        for (std::size_t b = a + 1; b < spec.n_phonemes && ok; ++b) {
          double d2 = 0.0;
          for (std::size_t c = 0; c < spec.n_mels; ++c) {
            const double d = o.protos_[a][c] - o.protos_[b][c];
            d2 += d * d;
          }
          if (!(std::sqrt(d2) > sep)) ok = false;
        }
    }
    if (!ok)
      throw std::runtime_error(
          "corpus: prototype separation constraint unsatisfiable after bounded attempts "
          "(reduce n_phonemes or scales, or raise n_mels)");
    return o;
  }

  const CorpusSpec& spec() const { return spec_; }
  std::size_t vocab() const { return spec_.n_phonemes; }
  std::uint32_t token_duration(std::size_t tok) const { return durations_.at(tok); }
  const std::vector<double>& prototype(std::size_t tok) const { return protos_.at(tok); }
  const std::vector<double>& probe() const { return probe_; }

  // ---- rendering ----

  // pitch_shift is the utterance-level prosody term, a common displacement of
  // every frame along the pitch probe.
  Tensor render(const SpeakerProfile& prof, const std::vector<std::size_t>& tokens,
                Rng& noise_rng, double pitch_shift = 0.0) const {
    if (tokens.empty()) throw std::invalid_argument("render: empty token sequence");
    std::size_t frames = 0;
    for (std::size_t t : tokens) frames += token_duration(t);
    const std::size_t n = spec_.n_mels;
    Tensor mel = Tensor::zeros({frames, n});
    std::size_t f = 0;
    for (std::size_t t : tokens) {
      const auto& proto = prototype(t);
      for (std::uint32_t r = 0; r < token_duration(t); ++r, ++f)
        for (std::size_t c = 0; c < n; ++c)
          mel.data[f * n + c] = proto[c] + prof.offset[c] + pitch_shift * probe_[c] +
                                spec_.noise_scale * noise_rng.gauss();
    }
    return mel;
  }

  // Labels measured from actual frames, given run lengths. The generator and
  // the adaptation pre-processing share this path, so re-derived supervision
  // is bit-identical to generated supervision.
  TokenSupervision measure_labels(const Tensor& mel,
                                  const std::vector<std::uint32_t>& run_lengths) const {
    TokenSupervision sup;
    sup.durations = run_lengths;
    const std::size_t n = spec_.n_mels;
    std::size_t f = 0;
    for (std::uint32_t d : run_lengths) {
      std::vector<double> mean(n, 0.0);
      double energy = 0.0;
      for (std::uint32_t r = 0; r < d; ++r, ++f) {
        double sq = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          mean[c] += mel.data[f * n + c];
          sq += mel.data[f * n + c] * mel.data[f * n + c];
        }
        energy += std::sqrt(sq);
      }
      for (auto& v : mean) v /= static_cast<double>(d);
      sup.pitch.push_back(oracle_detail::dot(mean, probe_));
      sup.energy.push_back(energy / static_cast<double>(d));
    }
    if (f != mel.rows()) throw std::invalid_argument("measure_labels: run lengths do not cover mel");
    return sup;
  }

  // ---- oracle ASR ----

  struct Decoded {
    std::vector<std::size_t> tokens;
    std::vector<std::uint32_t> run_lengths;
    std::vector<double> offset_estimate;
  };

  // Nearest prototype per frame after subtracting the frame-mean-estimated
  // speaker offset, then collapsing consecutive repeats.
  Decoded oracle_asr(const Tensor& mel) const {
    if (mel.rank() != 2 || mel.rows() == 0) throw std::invalid_argument("oracle_asr: empty input");
    if (mel.cols() != spec_.n_mels)
      throw std::invalid_argument("oracle_asr: channel count mismatch");
    const std::size_t F = mel.rows(), n = spec_.n_mels;

    auto assign = [&](const std::vector<double>& offset) {
      std::vector<std::size_t> a(F);
      for (std::size_t f = 0; f < F; ++f) {
        double best = 0.0;
        std::size_t best_tok = 0;
        for (std::size_t t = 0; t < protos_.size(); ++t) {
          double d2 = 0.0;
          for (std::size_t c = 0; c < n; ++c) {
            const double d = mel.data[f * n + c] - offset[c] - protos_[t][c];
            d2 += d * d;
          }
          if (t == 0 || d2 < best) {
            best = d2;
            best_tok = t;
          }
        }
        a[f] = best_tok;
      }
      return a;
    };

    Decoded out;
    out.offset_estimate.assign(n, 0.0);
    std::vector<std::size_t> a = assign(out.offset_estimate);
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t c = 0; c < n; ++c)
        out.offset_estimate[c] += mel.data[f * n + c] - protos_[a[f]][c];
    for (auto& v : out.offset_estimate) v /= static_cast<double>(F);
    a = assign(out.offset_estimate);

    for (std::size_t f = 0; f < F; ++f) {
      if (f == 0 || a[f] != a[f - 1]) {
        out.tokens.push_back(a[f]);
        out.run_lengths.push_back(1);
      } else {
        ++out.run_lengths.back();
      }
    }
    return out;
  }

  // Full re-derivation for a reference feature file: transcription via the
  // ASR oracle, supervision re-measured from the frames.
  std::pair<std::vector<std::size_t>, TokenSupervision> transcribe_and_measure(
      const Tensor& mel) const {
    Decoded d = oracle_asr(mel);
    return {d.tokens, measure_labels(mel, d.run_lengths)};
  }

 private:
  CorpusSpec spec_;
  std::vector<std::vector<double>> protos_;
  std::vector<std::uint32_t> durations_;
  std::vector<double> probe_;
};

// ---- speaker profiles ----

namespace corpus_detail {

inline std::vector<double> perp_component(const std::vector<double>& v,
                                          const std::vector<double>& unit) {
  std::vector<double> out = v;
  const double c = oracle_detail::dot(v, unit);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= c * unit[i];
  return out;
}

inline void rescale(std::vector<double>& v, double target_norm) {
  const double n = oracle_detail::norm(v);
  if (target_norm == 0.0 || n == 0.0) {
    std::fill(v.begin(), v.end(), 0.0);
    return;
  }
  for (auto& x : v) x *= target_norm / n;
}

// offset norm and the pair base pitch, in units fixed by the corpus spec
inline double offset_norm(const CorpusSpec& spec) {
  return 0.8 * spec.speaker_offset_scale * std::sqrt(static_cast<double>(spec.n_mels));
}
inline double pair_pitch(const CorpusSpec& spec) { return 0.26 * offset_norm(spec); }

// The corpus is parallel and each speaker records every text several times.
// Distinct texts and recording variants per text:
inline std::size_t corpus_text_count(const CorpusSpec& spec) {
  return std::max<std::size_t>(1, spec.utts_per_speaker / 4);
}
inline std::size_t text_of_utterance(const CorpusSpec& spec, std::size_t utterance_index) {
  return utterance_index % corpus_text_count(spec);
}

// Prosody is quantized: in one recording variant per text the +beta pair
// member shifts down by beta and the -beta member up by beta. Those two
// recordings collide on literally identical conditioning (same text, same
// pitch contour, same energies) with opposite identity targets, which anchors
// the zero-identity rendering the anonymous voice relies on text-by-text.
// The remaining native-prosody recordings anchor each member's own identity
// on the same texts.
inline double prosody_shift(const CorpusSpec& spec, std::size_t speaker_index,
                            std::size_t utterance_index) {
  const std::size_t variant = utterance_index / corpus_text_count(spec);
  if (variant != 3) return 0.0;
  if (speaker_index == 0) return -pair_pitch(spec);
  if (speaker_index == 1) return pair_pitch(spec);
  return 0.0;
}

}  // namespace corpus_detail

// Speaker offsets of equal norm r. The first two speakers are an exact
// antipodal pair at base pitches +/-beta whose perpendicular part is
// orthogonal to the entire prototype span, so the two share identical
// per-token energies and differ only in pitch. Utterance-level prosody (a
// pitch shift up to 1.2*beta) makes their pitch distributions overlap at the
// midpoint, where their targets cancel -- the zeroed speaker embedding sits
// exactly on the segment between their antipodal table embeddings, lands on
// that midpoint, and renders no identity at all. Remaining speakers each own
// an exclusive higher pitch zone.
inline std::vector<SpeakerProfile> make_speaker_profiles(const CorpusSpec& spec,
                                                         const CorpusOracle& oracle) {
  const std::vector<double>& probe = oracle.probe();
  const std::size_t S = spec.n_speakers;
  const std::size_t n = spec.n_mels;
  const double bound = spec.speaker_offset_scale * std::sqrt(static_cast<double>(n));
  const double r = corpus_detail::offset_norm(spec);
  const double beta = corpus_detail::pair_pitch(spec);

  Rng rng = derived_rng(spec.seed, "profiles");
  std::vector<SpeakerProfile> profiles(S);
  for (std::size_t s = 0; s < S; ++s) profiles[s].id = "spk" + std::to_string(s);

  // Orthonormal basis of span{probe, prototypes}; the pair direction is a
  // random vector with that span projected out. Needs n_mels to exceed
  // n_phonemes + 1; otherwise fall back to probe-orthogonal only.
  std::vector<std::vector<double>> basis;
  auto add_to_basis = [&basis, n](std::vector<double> cand) {
    for (const auto& b : basis) {
      const double c = oracle_detail::dot(cand, b);
      for (std::size_t i = 0; i < n; ++i) cand[i] -= c * b[i];
    }
    const double norm = oracle_detail::norm(cand);
    if (norm > 1e-9) {
      for (auto& x : cand) x /= norm;
      basis.push_back(std::move(cand));
    }
  };
  add_to_basis(probe);
  for (std::size_t t = 0; t < spec.n_phonemes; ++t) add_to_basis(oracle.prototype(t));

  std::vector<double> w = rng.gauss_vec(n);
  if (basis.size() < n) {
    for (const auto& b : basis) {
      const double c = oracle_detail::dot(w, b);
      for (std::size_t i = 0; i < n; ++i) w[i] -= c * b[i];
    }
  } else {
    w = corpus_detail::perp_component(w, probe);
  }
  corpus_detail::rescale(w, S == 1 ? 0.75 * bound
                                   : std::sqrt(std::max(0.0, r * r - beta * beta)));

  profiles[0].base_pitch = S == 1 ? 0.0 : beta;
  profiles[0].offset.assign(n, 0.0);
  for (std::size_t c = 0; c < n; ++c)
    profiles[0].offset[c] = profiles[0].base_pitch * probe[c] + w[c];
  if (S == 1) return profiles;

  profiles[1].base_pitch = -beta;
  profiles[1].offset.assign(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) profiles[1].offset[c] = -profiles[0].offset[c];

  for (std::size_t s = 2; s < S; ++s) {
    const double base =
        r * (0.55 + 0.25 * static_cast<double>(s - 1) / static_cast<double>(S - 2));
    std::vector<double> ws = corpus_detail::perp_component(rng.gauss_vec(n), probe);
    const double wn = oracle_detail::norm(w);
    if (wn > 0) {
      const double cw = oracle_detail::dot(ws, w) / (wn * wn);
      for (std::size_t c = 0; c < n; ++c) ws[c] -= cw * w[c];
    }
    corpus_detail::rescale(ws, std::sqrt(std::max(0.0, r * r - base * base)));
    profiles[s].base_pitch = base;
    profiles[s].offset.assign(n, 0.0);
    for (std::size_t c = 0; c < n; ++c) profiles[s].offset[c] = base * probe[c] + ws[c];
  }
  return profiles;
}

// A speaker outside the training set, with a base pitch inside the trained
// range. Used for the adaptation experiments.
inline SpeakerProfile make_held_out_profile(const CorpusSpec& spec, const std::vector<double>& probe,
                                            const std::string& id, std::uint64_t profile_seed) {
  const std::size_t n = spec.n_mels;
  const double r = corpus_detail::offset_norm(spec);
  Rng rng = derived_rng(mix_u64(spec.seed, profile_seed), "held-out-profile");
  SpeakerProfile p;
  p.id = id;
  // a pitch zone of its own, clear of the pair's prosody range and of the
  // lone speakers' zones
  const double base = rng.uniform(0.40, 0.50) * r;
  std::vector<double> g = rng.gauss_vec(n);
  std::vector<double> w = corpus_detail::perp_component(g, probe);
  corpus_detail::rescale(w, std::sqrt(std::max(0.0, r * r - base * base)));
  p.offset.assign(n, 0.0);
  for (std::size_t c = 0; c < n; ++c) p.offset[c] = base * probe[c] + w[c];
  p.base_pitch = base;
  return p;
}

// ---- utterance text ----

// Random token string with near-balanced coverage: concatenated seeded
// shuffles of the full inventory, truncated to the sampled length, with
// immediate repeats at chunk seams swapped away (the ASR oracle collapses
// repeated frames, so adjacent duplicate tokens would be unrecoverable).
// Lengths that are exact multiples of the inventory are nudged away when the
// bounds allow: a perfectly balanced text has a zero prototype residual,
// which would leave the toy embedding of a near-neutral voice pointing along
// whatever tiny identity residue remains.
inline std::vector<std::size_t> sample_text(const CorpusSpec& spec, Rng& rng) {
  std::size_t L = spec.min_len + static_cast<std::size_t>(
                                     rng.below(spec.max_len - spec.min_len + 1));
  if (L % spec.n_phonemes == 0) {
    if (L > spec.min_len)
      --L;
    else if (L < spec.max_len)
      ++L;
  }
  const std::size_t V = spec.n_phonemes;
  std::vector<std::size_t> tokens;
  while (tokens.size() < L) {
    std::vector<std::size_t> perm(V);
    for (std::size_t i = 0; i < V; ++i) perm[i] = i;
    for (std::size_t i = V; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    if (!tokens.empty() && V > 1 && perm.front() == tokens.back()) std::swap(perm[0], perm[1]);
    for (std::size_t t : perm) {
      if (tokens.size() >= L) break;
      tokens.push_back(t);
    }
  }
  return tokens;
}

// ---- generation ----

struct GeneratedCorpus {
  CorpusSpec spec;
  std::vector<SpeakerProfile> profiles;
  std::vector<Utterance> utterances;  // speaker-major order
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  SpeakerFile table;
};

// Embedding file rows: toy embedding of each speaker's concatenated reference
// features, ordered by id.
inline SpeakerFile export_speaker_table(
    const std::vector<std::pair<std::string, Tensor>>& concat_frames_by_speaker,
    const ToyEmbedder& embedder) {
  SpeakerFile f;
  f.d_spk = embedder.d_spk();
  for (const auto& [id, frames] : concat_frames_by_speaker) {
    for (const auto& seen : f.ids)
      if (seen == id) throw std::invalid_argument("export_speaker_table: duplicate speaker " + id);
    f.ids.push_back(id);
    f.rows.push_back(embedder.embed(frames));
  }
  return f;
}

inline GeneratedCorpus generate_corpus(const CorpusSpec& spec) {
  CorpusOracle oracle = CorpusOracle::build(spec);
  GeneratedCorpus out;
  out.spec = spec;
  out.profiles = make_speaker_profiles(spec, oracle);

  ToyEmbedder embedder(spec.n_mels, spec.d_spk);
  std::vector<std::pair<std::string, Tensor>> concat(spec.n_speakers);

  // Parallel texts: every speaker records the same text list, several
  // recording variants per text.
  const std::size_t n_texts = corpus_detail::corpus_text_count(spec);
  std::vector<std::vector<std::size_t>> texts(n_texts);
  for (std::size_t i = 0; i < n_texts; ++i) {
    Rng text_rng = derived_rng(spec.seed, "text", i);
    texts[i] = sample_text(spec, text_rng);
  }

  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    std::vector<double> all_frames;
    for (std::size_t i = 0; i < spec.utts_per_speaker; ++i) {
      const std::uint64_t tag = s * 1000003ULL + i;
      Rng noise_rng = derived_rng(spec.seed, "noise", tag);
      Utterance utt;
      utt.tokens = texts[corpus_detail::text_of_utterance(spec, i)];
      utt.mel = oracle.render(out.profiles[s], utt.tokens, noise_rng,
                              corpus_detail::prosody_shift(spec, s, i));
      std::vector<std::uint32_t> runs;
      for (std::size_t t : utt.tokens) runs.push_back(oracle.token_duration(t));
      utt.sup = oracle.measure_labels(utt.mel, runs);
      utt.speaker_index = s;
      utt.speaker_id = out.profiles[s].id;
      char name[64];
      std::snprintf(name, sizeof name, "utt_%s_%03zu.mel", out.profiles[s].id.c_str(), i);
      utt.relpath = name;
      all_frames.insert(all_frames.end(), utt.mel.data.begin(), utt.mel.data.end());
      out.utterances.push_back(std::move(utt));
    }
    const std::size_t total_frames = all_frames.size() / spec.n_mels;
    concat[s] = {out.profiles[s].id,
                 Tensor({total_frames, spec.n_mels}, std::move(all_frames))};
  }

  out.table = export_speaker_table(concat, embedder);

  // 90/10 split by seeded utterance-index permutation. Collision-variant
  // recordings always stay in the training split: they are the data that
  // anchors the anonymous voice, one pair per text.
  const std::size_t total = out.utterances.size();
  std::vector<std::size_t> perm = seeded_permutation(spec.seed, "split", 0, total);
  const std::size_t n_val = total - std::max<std::size_t>(1, total * 9 / 10);
  std::vector<bool> in_val(total, false);
  std::size_t taken = 0;
  for (std::size_t p : perm) {
    if (taken == n_val) break;
    const std::size_t s = p / spec.utts_per_speaker;
    const std::size_t i = p % spec.utts_per_speaker;
    if (s < 2 && corpus_detail::prosody_shift(spec, s, i) != 0.0) continue;
    in_val[p] = true;
    ++taken;
  }
  for (std::size_t p = 0; p < total; ++p)
    (in_val[p] ? out.val_idx : out.train_idx).push_back(p);
  return out;
}

inline std::vector<ManifestEntry> manifest_entries(const GeneratedCorpus& c,
                                                   const std::vector<std::size_t>& idx) {
  std::vector<ManifestEntry> out;
  for (std::size_t i : idx) {
    const Utterance& u = c.utterances[i];
    ManifestEntry e;
    e.relpath = u.relpath;
    for (std::size_t t : u.tokens) e.tokens.push_back(token_name(t));
    e.speaker_id = u.speaker_id;
    out.push_back(std::move(e));
  }
  return out;
}

inline void write_corpus_dir(const GeneratedCorpus& c, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (const Utterance& u : c.utterances) {
    write_mel(dir + "/" + u.relpath, u.mel);
    std::string sup_path = u.relpath;
    sup_path.replace(sup_path.size() - 4, 4, ".sup");
    write_sup(dir + "/" + sup_path, u.sup);
  }
  write_manifest(dir + "/train.txt", manifest_entries(c, c.train_idx));
  write_manifest(dir + "/val.txt", manifest_entries(c, c.val_idx));
  write_spk(dir + "/speakers.spk", c.table);
  std::string cfg_text;
  for (const auto& [k, v] : c.spec.to_key_values()) cfg_text += k + "=" + v + "\n";
  write_text_file(dir + "/corpus.cfg", cfg_text);
}

// ---- loading ----

struct LoadedCorpus {
  CorpusSpec spec;
  SpeakerTable table{1};
  std::vector<Utterance> train;
  std::vector<Utterance> val;
};

inline std::vector<Utterance> load_manifest_utterances(const std::string& dir,
                                                       const std::string& manifest_name,
                                                       const SpeakerTable& table,
                                                       std::size_t vocab) {
  std::vector<Utterance> out;
  for (const ManifestEntry& e : read_manifest(dir + "/" + manifest_name)) {
    Utterance u;
    u.relpath = e.relpath;
    for (const auto& t : e.tokens) u.tokens.push_back(parse_token(t, vocab));
    u.speaker_id = e.speaker_id;
    u.speaker_index = table.index_of(e.speaker_id);
    u.mel = read_mel(dir + "/" + e.relpath);
    std::string sup_path = e.relpath;
    if (sup_path.size() < 4) throw FormatError("bad manifest relpath: " + sup_path);
    sup_path.replace(sup_path.size() - 4, 4, ".sup");
    u.sup = read_sup(dir + "/" + sup_path);
    out.push_back(std::move(u));
  }
  return out;
}

inline LoadedCorpus load_corpus_dir(const std::string& dir) {
  LoadedCorpus out;
  out.spec = CorpusSpec::from_key_values(parse_key_values(read_text_file(dir + "/corpus.cfg")));
  out.table = SpeakerTable::from_file(dir + "/speakers.spk");
  out.train = load_manifest_utterances(dir, "train.txt", out.table, out.spec.n_phonemes);
  out.val = load_manifest_utterances(dir, "val.txt", out.table, out.spec.n_phonemes);
  return out;
}

// Reference features for a new speaker: feature files only, everything else
// is re-derived by the adaptation pre-processing.
inline void write_reference_dir(const CorpusSpec& spec, const CorpusOracle& oracle,
                                const SpeakerProfile& prof, std::size_t n_utts,
                                const std::string& dir) {
  namespace fs = std::filesystem;
  if (n_utts < 1) throw std::invalid_argument("write_reference_dir: need at least one utterance");
  fs::create_directories(dir);
  for (std::size_t i = 0; i < n_utts; ++i) {
    Rng text_rng = derived_rng(spec.seed, "ref-text", mix_u64(fnv1a(prof.id), i));
    Rng noise_rng = derived_rng(spec.seed, "ref-noise", mix_u64(fnv1a(prof.id), i));
    std::vector<std::size_t> tokens = sample_text(spec, text_rng);
    Tensor mel = oracle.render(prof, tokens, noise_rng);
    char name[64];
    std::snprintf(name, sizeof name, "ref_%03zu.mel", i);
    write_mel(dir + "/" + std::string(name), mel);
  }
}

}  // namespace tinytts
