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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "tinytts/corpus.hpp"
#include "tinytts/metrics.hpp"

using namespace tinytts;
namespace fs = std::filesystem;

namespace {

CorpusSpec small_spec(std::uint64_t seed = 5) {
  CorpusSpec spec;
  spec.n_phonemes = 8;
  spec.n_mels = 12;
  spec.n_speakers = 3;
  spec.utts_per_speaker = 6;
  spec.min_len = 8;
  spec.max_len = 8;
  spec.d_spk = 8;
  spec.seed = seed;
  return spec;
}

std::string temp_dir(const std::string& name) {
  return (fs::temp_directory_path() / ("tinytts_corpus_" + name)).string();
}

std::string slurp(const fs::path& p) { return read_text_file(p.string()); }

bool dirs_byte_identical(const std::string& a, const std::string& b) {
  std::set<std::string> names_a, names_b;
  for (const auto& e : fs::directory_iterator(a))
    if (e.is_regular_file()) names_a.insert(e.path().filename().string());
  for (const auto& e : fs::directory_iterator(b))
    if (e.is_regular_file()) names_b.insert(e.path().filename().string());
  if (names_a != names_b) return false;
  for (const auto& n : names_a)
    if (slurp(fs::path(a) / n) != slurp(fs::path(b) / n)) return false;
  return true;
}

}  // namespace

TEST_CASE("degenerate spec: zero scales make all speakers identical") {
  CorpusSpec spec = small_spec();
  spec.speaker_offset_scale = 0.0;
  spec.noise_scale = 0.0;
  CorpusOracle oracle = CorpusOracle::build(spec);
  auto profiles = make_speaker_profiles(spec, oracle);
  std::vector<std::size_t> text{0, 3, 1, 5};
  Rng noise1(1), noise2(1);
  Tensor a = oracle.render(profiles[0], text, noise1);
  Tensor b = oracle.render(profiles[2], text, noise2);
  CHECK(a.data == b.data);
}

TEST_CASE("generated supervision is self-consistent") {
  GeneratedCorpus c = generate_corpus(small_spec());
  CorpusOracle oracle = CorpusOracle::build(c.spec);
  for (const Utterance& u : c.utterances) {
    CHECK(u.sup.total_frames() == u.mel.rows());
    CHECK(u.sup.tokens() == u.tokens.size());
    // labels re-measured from the frames reproduce the stored values exactly
    TokenSupervision re = oracle.measure_labels(u.mel, u.sup.durations);
    for (std::size_t t = 0; t < u.sup.tokens(); ++t) {
      CHECK(std::abs(re.pitch[t] - u.sup.pitch[t]) <= 1e-9);
      CHECK(std::abs(re.energy[t] - u.sup.energy[t]) <= 1e-9);
    }
    // durations follow the fixed per-token rule
    for (std::size_t t = 0; t < u.tokens.size(); ++t)
      CHECK(u.sup.durations[t] == oracle.token_duration(u.tokens[t]));
  }
}

TEST_CASE("same seed produces bit-identical corpus directories") {
  const std::string d1 = temp_dir("det1");
  const std::string d2 = temp_dir("det2");
  fs::remove_all(d1);
  fs::remove_all(d2);
  write_corpus_dir(generate_corpus(small_spec(77)), d1);
  write_corpus_dir(generate_corpus(small_spec(77)), d2);
  CHECK(dirs_byte_identical(d1, d2));

  // a different seed must differ
  const std::string d3 = temp_dir("det3");
  fs::remove_all(d3);
  write_corpus_dir(generate_corpus(small_spec(78)), d3);
  CHECK(!dirs_byte_identical(d1, d3));
}

TEST_CASE("oracle asr: noiseless roundtrip recovers the transcription") {
  CorpusSpec spec = small_spec();
  spec.noise_scale = 0.0;
  CorpusOracle oracle = CorpusOracle::build(spec);
  auto profiles = make_speaker_profiles(spec, oracle);
  Rng text_rng(3), noise_rng(4);
  for (int i = 0; i < 5; ++i) {
    std::vector<std::size_t> text = sample_text(spec, text_rng);
    for (const auto& prof : profiles) {
      Tensor mel = oracle.render(prof, text, noise_rng);
      CHECK(oracle.oracle_asr(mel).tokens == text);
    }
  }
}

TEST_CASE("oracle asr: zero token error rate on a generated corpus") {
  GeneratedCorpus c = generate_corpus(small_spec());
  CorpusOracle oracle = CorpusOracle::build(c.spec);
  std::size_t errors = 0;
  for (const Utterance& u : c.utterances) {
    auto decoded = oracle.oracle_asr(u.mel);
    errors += align(u.tokens, decoded.tokens).edits();
  }
  CHECK(errors == 0);
}

TEST_CASE("oracle asr: single frame decodes to a single token") {
  CorpusSpec spec = small_spec();
  CorpusOracle oracle = CorpusOracle::build(spec);
  Tensor one_frame({1, spec.n_mels}, oracle.prototype(3));
  auto decoded = oracle.oracle_asr(one_frame);
  CHECK(decoded.tokens.size() == 1);
  CHECK(decoded.tokens[0] == 3);
  CHECK(decoded.run_lengths == std::vector<std::uint32_t>{1});

  CHECK_THROWS_AS(oracle.oracle_asr(Tensor::zeros({0, spec.n_mels})), std::invalid_argument);
}

TEST_CASE("toy embedder determinism, normalization and scale invariance") {
  CorpusSpec spec = small_spec();
  spec.noise_scale = 0.0;
  CorpusOracle oracle = CorpusOracle::build(spec);
  auto profiles = make_speaker_profiles(spec, oracle);
  ToyEmbedder embedder(spec.n_mels, spec.d_spk);

  std::vector<std::size_t> text{1, 4, 7, 2};
  Rng n1(0), n2(0);
  Tensor a = oracle.render(profiles[1], text, n1);
  Tensor b = oracle.render(profiles[1], text, n2);
  CHECK(std::abs(cosine_similarity(embedder.embed(a), embedder.embed(b)) - 1.0) <= 1e-9);

  // unit norm
  auto e = embedder.embed(a);
  double norm = 0;
  for (double v : e) norm += v * v;
  CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-12);

  // scaling all frames by 2 leaves the embedding unchanged
  Tensor doubled = a;
  for (auto& v : doubled.data) v *= 2.0;
  CHECK(std::abs(cosine_similarity(embedder.embed(doubled), e) - 1.0) <= 1e-12);

  CHECK_THROWS_AS(embedder.embed(Tensor::zeros({3, spec.n_mels})), std::runtime_error);
}

TEST_CASE("embedding geometry: same-speaker similarity beats cross-speaker") {
  GeneratedCorpus c = generate_corpus(small_spec());
  ToyEmbedder embedder(c.spec.n_mels, c.spec.d_spk);
  std::vector<std::vector<double>> embs;
  for (const Utterance& u : c.utterances) embs.push_back(embedder.embed(u.mel));

  double same_sum = 0, cross_sum = 0;
  std::size_t same_n = 0, cross_n = 0;
  for (std::size_t i = 0; i < embs.size(); ++i)
    for (std::size_t j = i + 1; j < embs.size(); ++j) {
      const double sim = cosine_similarity(embs[i], embs[j]);
      if (c.utterances[i].speaker_index == c.utterances[j].speaker_index) {
        same_sum += sim;
        ++same_n;
      } else {
        cross_sum += sim;
        ++cross_n;
      }
    }
  CHECK(same_n > 0);
  CHECK(cross_n > 0);
  CHECK(same_sum / same_n > cross_sum / cross_n);
}

TEST_CASE("speaker profiles: bounded equal-norm offsets around an antipodal pair") {
  CorpusSpec spec = small_spec();
  CorpusOracle oracle = CorpusOracle::build(spec);
  auto profiles = make_speaker_profiles(spec, oracle);
  const double bound =
      spec.speaker_offset_scale * std::sqrt(static_cast<double>(spec.n_mels)) + 1e-12;

  for (const auto& p : profiles) {
    double norm = 0;
    for (std::size_t c = 0; c < spec.n_mels; ++c) norm += p.offset[c] * p.offset[c];
    CHECK(std::sqrt(norm) <= bound);
    // base pitch is the probe component of the offset
    double probe_comp = 0;
    for (std::size_t c = 0; c < spec.n_mels; ++c) probe_comp += p.offset[c] * oracle.probe()[c];
    CHECK(std::abs(probe_comp - p.base_pitch) <= 1e-9);
  }

  // the first two speakers are an exact antipodal pair at base pitches +/-beta
  CHECK(profiles[0].base_pitch > 0.0);
  CHECK(profiles[1].base_pitch == -profiles[0].base_pitch);
  for (std::size_t c = 0; c < spec.n_mels; ++c)
    CHECK(profiles[0].offset[c] == -profiles[1].offset[c]);

  // the pair's perpendicular part avoids the prototype span entirely, so the
  // two members share identical per-token energies
  for (std::size_t t = 0; t < spec.n_phonemes; ++t) {
    double d = 0;
    for (std::size_t c = 0; c < spec.n_mels; ++c)
      d += oracle.prototype(t)[c] *
           (profiles[0].offset[c] - profiles[0].base_pitch * oracle.probe()[c]);
    CHECK(std::abs(d) <= 1e-9);
  }

  // remaining speakers own exclusive higher pitch zones
  CHECK(profiles[2].base_pitch > profiles[0].base_pitch);

  // equal offset norms keep the embedding table balanced
  const double n0 = std::sqrt(oracle_detail::dot(profiles[0].offset, profiles[0].offset));
  const double n1 = std::sqrt(oracle_detail::dot(profiles[1].offset, profiles[1].offset));
  const double n2 = std::sqrt(oracle_detail::dot(profiles[2].offset, profiles[2].offset));
  CHECK(std::abs(n0 - n1) <= 1e-9);
  CHECK(std::abs(n0 - n2) <= 1e-9);
}

TEST_CASE("export_speaker_table: counts, idempotence, file roundtrip, duplicates") {
  GeneratedCorpus c = generate_corpus(small_spec());
  CHECK(c.table.rows.size() == c.spec.n_speakers);
  CHECK(c.table.d_spk == c.spec.d_spk);

  // re-export is bit-identical
  GeneratedCorpus c2 = generate_corpus(small_spec());
  CHECK(c.table.rows == c2.table.rows);
  CHECK(c.table.ids == c2.table.ids);

  // SPK1 roundtrip reproduces rows bitwise
  const std::string path = temp_dir("table.spk");
  write_spk(path, c.table);
  SpeakerFile back = read_spk(path);
  CHECK(back.rows == c.table.rows);
  CHECK(back.ids == c.table.ids);
  CHECK(back.d_spk == c.table.d_spk);

  // duplicate speaker ids rejected
  ToyEmbedder embedder(c.spec.n_mels, c.spec.d_spk);
  Tensor frames = c.utterances[0].mel;
  std::vector<std::pair<std::string, Tensor>> dup{{"x", frames}, {"x", frames}};
  CHECK_THROWS_AS(export_speaker_table(dup, embedder), std::invalid_argument);
}

TEST_CASE("unsatisfiable separation constraint raises after bounded attempts") {
  CorpusSpec spec;
  spec.n_phonemes = 40;
  spec.n_mels = 1;
  spec.n_speakers = 1;
  spec.utts_per_speaker = 1;
  spec.min_len = 4;
  spec.max_len = 4;
  spec.d_spk = 4;
  spec.speaker_offset_scale = 2.0;
  spec.noise_scale = 0.1;
  spec.seed = 1;
  CHECK_THROWS_AS(CorpusOracle::build(spec), std::runtime_error);
}

TEST_CASE("balanced text sampling avoids immediate repeats and respects bounds") {
  CorpusSpec spec = small_spec();
  spec.min_len = 5;
  spec.max_len = 13;
  Rng rng(21);
  for (int i = 0; i < 50; ++i) {
    auto text = sample_text(spec, rng);
    CHECK(text.size() >= 5);
    CHECK(text.size() <= 13);
    for (std::size_t t = 1; t < text.size(); ++t) CHECK(text[t] != text[t - 1]);
    for (std::size_t tok : text) CHECK(tok < spec.n_phonemes);
  }
}

TEST_CASE("write/load corpus directory roundtrip") {
  const std::string dir = temp_dir("roundtrip");
  fs::remove_all(dir);
  GeneratedCorpus c = generate_corpus(small_spec(31));
  write_corpus_dir(c, dir);

  LoadedCorpus loaded = load_corpus_dir(dir);
  CHECK(loaded.spec.n_phonemes == c.spec.n_phonemes);
  CHECK(loaded.train.size() + loaded.val.size() == c.utterances.size());
  CHECK(loaded.train.size() == c.train_idx.size());

  // split is 90/10 by count
  CHECK(loaded.train.size() == c.utterances.size() * 9 / 10);

  // spot-check one utterance end to end
  const Utterance& u = loaded.train[0];
  bool found = false;
  for (const Utterance& orig : c.utterances)
    if (orig.relpath == u.relpath) {
      found = true;
      CHECK(orig.tokens == u.tokens);
      CHECK(orig.mel.data == u.mel.data);
      CHECK(orig.sup.durations == u.sup.durations);
      CHECK(orig.sup.pitch == u.sup.pitch);
      CHECK(orig.sup.energy == u.sup.energy);
      CHECK(orig.speaker_id == u.speaker_id);
    }
  CHECK(found);
}

TEST_CASE("held-out profile stays within bounds and inside the pitch range") {
  CorpusSpec spec = small_spec();
  CorpusOracle oracle = CorpusOracle::build(spec);
  auto profiles = make_speaker_profiles(spec, oracle);
  SpeakerProfile held = make_held_out_profile(spec, oracle.probe(), "newvoice", 1000);
  CHECK(held.id == "newvoice");
  double norm = 0;
  for (double v : held.offset) norm += v * v;
  CHECK(std::sqrt(norm) <=
        spec.speaker_offset_scale * std::sqrt(static_cast<double>(spec.n_mels)) + 1e-12);
  CHECK(held.base_pitch >= profiles.front().base_pitch - 1e-9);
  CHECK(held.base_pitch <= profiles.back().base_pitch + 1e-9);
}

TEST_CASE("mel and supervision file formats roundtrip and reject corruption") {
  const std::string dir = temp_dir("io");
  fs::create_directories(dir);
  Tensor mel({3, 4}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
  write_mel(dir + "/x.mel", mel);
  Tensor back = read_mel(dir + "/x.mel");
  CHECK(back.dims == mel.dims);
  CHECK(back.data == mel.data);

  TokenSupervision sup;
  sup.durations = {2, 1};
  sup.pitch = {0.5, -0.25};
  sup.energy = {1.5, 2.5};
  write_sup(dir + "/x.sup", sup);
  TokenSupervision sback = read_sup(dir + "/x.sup");
  CHECK(sback.durations == sup.durations);
  CHECK(sback.pitch == sup.pitch);
  CHECK(sback.energy == sup.energy);

  // truncated mel file
  std::string bytes = read_text_file(dir + "/x.mel");
  write_text_file(dir + "/bad.mel", bytes.substr(0, 10));
  CHECK_THROWS_AS(read_mel(dir + "/bad.mel"), FormatError);

  // manifest line parse/format roundtrip
  ManifestEntry e{"utt_spk0_000.mel", {"p1", "p2"}, "spk0"};
  ManifestEntry p = parse_manifest_line(manifest_line(e));
  CHECK(p.relpath == e.relpath);
  CHECK(p.tokens == e.tokens);
  CHECK(p.speaker_id == e.speaker_id);
  CHECK_THROWS_AS(parse_manifest_line("no pipes here"), FormatError);
}
