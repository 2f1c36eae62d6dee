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

#include <filesystem>

#include "tinytts/adapt.hpp"

using namespace tinytts;
namespace fs = std::filesystem;

namespace {

CorpusSpec small_spec(std::uint64_t seed = 19) {
  CorpusSpec spec;
  spec.n_phonemes = 6;
  spec.n_mels = 8;
  spec.n_speakers = 2;
  spec.utts_per_speaker = 3;
  spec.min_len = 6;
  spec.max_len = 6;
  spec.d_spk = 8;
  spec.seed = seed;
  return spec;
}

struct AdaptFixture {
  CorpusSpec spec;
  CorpusOracle oracle;
  ToyEmbedder embedder;
  GeneratedCorpus corpus;
  std::string root;
  std::string refs_dir;
  std::string base_ckpt;

  AdaptFixture()
      : spec(small_spec()),
        oracle(CorpusOracle::build(spec)),
        embedder(spec.n_mels, spec.d_spk),
        corpus(generate_corpus(spec)),
        root((fs::temp_directory_path() / "tinytts_adapt_fix").string()) {
    fs::remove_all(root);
    fs::create_directories(root);

    refs_dir = root + "/refs";
    SpeakerProfile held = make_held_out_profile(spec, oracle.probe(), "newvoice", 500);
    write_reference_dir(spec, oracle, held, 3, refs_dir);

    ModelConfig cfg;
    cfg.vocab_size = spec.n_phonemes;
    cfg.d_model = 16;
    cfg.n_heads = 2;
    cfg.n_enc_layers = 1;
    cfg.n_dec_layers = 1;
    cfg.predictor_hidden = 8;
    cfg.n_mels = spec.n_mels;
    cfg.d_spk = spec.d_spk;
    cfg.conditioning = ConditioningPoint::kPredictors;
    cfg.seed = 6;
    AcousticModel model(cfg, SpeakerTable::from_speaker_file(corpus.table));
    TrainConfig tc;
    tc.steps = 5;
    tc.batch_size = 2;
    OptimizerState opt;
    std::uint64_t step = 0;
    train_steps(model, corpus.utterances, tc, FreezeSet::none(), opt, step);
    base_ckpt = root + "/base.cpk";
    save_checkpoint(base_ckpt, model, opt, step);
  }

  TrainConfig adapt_cfg(std::size_t steps = 10) const {
    TrainConfig cfg = finetune_defaults();
    cfg.steps = steps;
    return cfg;
  }
};

}  // namespace

TEST_CASE("prepare_reference builds a self-consistent bundle") {
  AdaptFixture f;
  AdaptationBundle b =
      prepare_reference(f.refs_dir, "newvoice", f.oracle, f.embedder, f.root + "/bundles");

  // 3 reference files -> 2 train lines, 1 val line
  CHECK(b.train_manifest.size() == 2);
  CHECK(b.val_manifest.size() == 1);
  CHECK(b.speaker_id == "newvoice");
  CHECK(b.total_reference_frames > 0);

  // bundle layout
  CHECK(fs::exists(b.dir + "/train.txt"));
  CHECK(fs::exists(b.dir + "/val.txt"));
  CHECK(fs::exists(b.dir + "/embedding.spk"));

  // embedding equals the toy embedding of the concatenated reference frames
  std::vector<double> all;
  std::size_t frames = 0;
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(f.refs_dir)) names.push_back(e.path().string());
  std::sort(names.begin(), names.end());
  for (const auto& n : names) {
    Tensor mel = read_mel(n);
    frames += mel.rows();
    all.insert(all.end(), mel.data.begin(), mel.data.end());
  }
  std::vector<double> expect = f.embedder.embed(Tensor({frames, f.spec.n_mels}, all));
  CHECK(b.embedding == expect);
  CHECK(b.total_reference_frames == frames);

  // unit norm within 1e-9
  double norm = 0;
  for (double v : b.embedding) norm += v * v;
  CHECK(std::abs(std::sqrt(norm) - 1.0) <= 1e-9);

  // supervision re-derived from frames is self-consistent for every file
  for (const auto& entry : b.train_manifest) {
    Tensor mel = read_mel(b.dir + "/" + entry.relpath);
    std::string sup_path = entry.relpath;
    sup_path.replace(sup_path.size() - 4, 4, ".sup");
    TokenSupervision sup = read_sup(b.dir + "/" + sup_path);
    CHECK(sup.total_frames() == mel.rows());
    CHECK(sup.tokens() == entry.tokens.size());
  }

  // bundle loads back identically
  AdaptationBundle loaded = load_bundle(b.dir);
  CHECK(loaded.speaker_id == b.speaker_id);
  CHECK(loaded.embedding == b.embedding);
  CHECK(loaded.train_manifest.size() == b.train_manifest.size());
}

TEST_CASE("prepare_reference with a single file keeps validation empty") {
  AdaptFixture f;
  const std::string single = f.root + "/single_ref";
  fs::create_directories(single);
  SpeakerProfile held = make_held_out_profile(f.spec, f.oracle.probe(), "solo", 501);
  Rng noise(1);
  std::vector<std::size_t> text{0, 1, 2, 3, 4, 5};
  write_mel(single + "/only.mel", f.oracle.render(held, text, noise));

  AdaptationBundle b = prepare_reference(single, "solo", f.oracle, f.embedder, f.root + "/bundles");
  CHECK(b.train_manifest.size() == 1);
  CHECK(b.val_manifest.empty());
}

TEST_CASE("prepare_reference rejects empty directories and bad ids") {
  AdaptFixture f;
  const std::string empty = f.root + "/empty_refs";
  fs::create_directories(empty);
  CHECK_THROWS_AS(prepare_reference(empty, "x", f.oracle, f.embedder, f.root + "/bundles"),
                  std::runtime_error);
  CHECK_THROWS_AS(prepare_reference(f.refs_dir, "bad,id", f.oracle, f.embedder, f.root + "/b2"),
                  std::invalid_argument);
}

TEST_CASE("adapt_speaker appends the embedding and never touches old rows or the base file") {
  AdaptFixture f;
  AdaptationBundle b =
      prepare_reference(f.refs_dir, "newvoice", f.oracle, f.embedder, f.root + "/bundles");

  LoadedCheckpoint base = load_checkpoint(f.base_ckpt);
  std::vector<std::vector<double>> rows_before;
  for (std::size_t i = 0; i < base.model.speakers().size(); ++i)
    rows_before.push_back(base.model.speakers().row(i));
  const std::string base_bytes = read_text_file(f.base_ckpt);

  AdaptationResult res = adapt_speaker(f.base_ckpt, b, FreezeSet::parse("duration"),
                                       f.adapt_cfg(), f.oracle, f.embedder, f.root + "/adapted.cpk");

  CHECK(res.speaker_row == rows_before.size());
  CHECK(read_text_file(f.base_ckpt) == base_bytes);  // base checkpoint untouched

  LoadedCheckpoint adapted = load_checkpoint(res.checkpoint_path);
  REQUIRE(adapted.model.speakers().size() == rows_before.size() + 1);
  for (std::size_t i = 0; i < rows_before.size(); ++i)
    CHECK(adapted.model.speakers().row(i) == rows_before[i]);
  CHECK(adapted.model.speakers().row(res.speaker_row) == b.embedding);

  // frozen duration predictor stayed frozen; the decoder moved
  LoadedCheckpoint fresh = load_checkpoint(f.base_ckpt);
  CHECK(adapted.model.parameter("pred.duration.k1").value ==
        fresh.model.parameter("pred.duration.k1").value);
  CHECK(adapted.model.parameter("dec.l0.attn.wq").value !=
        fresh.model.parameter("dec.l0.attn.wq").value);
}

TEST_CASE("adapt_speaker rejects duplicates and dimension mismatches") {
  AdaptFixture f;
  AdaptationBundle b =
      prepare_reference(f.refs_dir, "spk0", f.oracle, f.embedder, f.root + "/bundles_dup");
  CHECK_THROWS_AS(adapt_speaker(f.base_ckpt, b, FreezeSet::none(), f.adapt_cfg(), f.oracle,
                                f.embedder, f.root + "/dup.cpk"),
                  std::invalid_argument);

  AdaptationBundle b2 =
      prepare_reference(f.refs_dir, "newvoice", f.oracle, f.embedder, f.root + "/bundles_dim");
  b2.embedding.resize(4);
  CHECK_THROWS_AS(adapt_speaker(f.base_ckpt, b2, FreezeSet::none(), f.adapt_cfg(), f.oracle,
                                f.embedder, f.root + "/dim.cpk"),
                  std::invalid_argument);
}

TEST_CASE("plain resume (empty freeze set) works") {
  AdaptFixture f;
  AdaptationBundle b =
      prepare_reference(f.refs_dir, "newvoice", f.oracle, f.embedder, f.root + "/bundles_plain");
  AdaptationResult res = adapt_speaker(f.base_ckpt, b, FreezeSet::none(), f.adapt_cfg(), f.oracle,
                                       f.embedder, f.root + "/plain.cpk");
  CHECK(res.stats.losses.size() == 10);
  CHECK(res.stats.trainable_tensors == load_checkpoint(f.base_ckpt).model.parameters().size());
}

TEST_CASE("adaptation pipeline is deterministic end to end") {
  AdaptFixture f;
  auto run = [&f](const std::string& tag) {
    AdaptationBundle b =
        prepare_reference(f.refs_dir, "newvoice", f.oracle, f.embedder, f.root + "/bundle_" + tag);
    adapt_speaker(f.base_ckpt, b, FreezeSet::parse("duration"), f.adapt_cfg(), f.oracle,
                  f.embedder, f.root + "/adapted_" + tag + ".cpk");
    return read_text_file(f.root + "/adapted_" + tag + ".cpk");
  };
  CHECK(run("a") == run("b"));
}

TEST_CASE("sweep runs the seven setups from the same base checkpoint") {
  AdaptFixture f;
  AdaptationBundle b =
      prepare_reference(f.refs_dir, "newvoice", f.oracle, f.embedder, f.root + "/bundles_sweep");
  SweepResult sweep = sweep_freeze_setups(f.base_ckpt, b, f.adapt_cfg(3), f.oracle, f.embedder,
                                          f.root + "/sweep");
  CHECK(sweep.report.rows.size() == 7);
  CHECK(sweep.results.size() == 7);
  const std::uint64_t h = sweep.results[0].base_hash;
  for (const auto& r : sweep.results) CHECK(r.base_hash == h);
  // labels cover the seven setups
  CHECK(sweep.report.rows[0].config == "freeze=enc");
  CHECK(sweep.report.rows[6].config == "freeze=enc+dec");
}
