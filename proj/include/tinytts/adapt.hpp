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
#include <cctype>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "tinytts/corpus.hpp"
#include "tinytts/evaluate.hpp"
#include "tinytts/io.hpp"
#include "tinytts/trainer.hpp"

namespace tinytts {

// New-speaker adaptation: turn a directory of reference feature files into a
// self-contained dataset (transcriptions via the ASR oracle, supervision
// re-measured from frames, embedding via the toy embedder), then resume
// training from a base checkpoint with the requested blocks frozen.

struct AdaptationBundle {
  std::string speaker_id;
  std::vector<double> embedding;  // unit vector [d_spk]
  std::string dir;                // <out_dir>/<speaker_id>
  std::vector<ManifestEntry> train_manifest;
  std::vector<ManifestEntry> val_manifest;  // empty when only one reference file
  std::size_t total_reference_frames = 0;
};

inline void validate_speaker_id(const std::string& id) {
  if (id.empty()) throw std::invalid_argument("speaker id must be non-empty");
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.'))
      throw std::invalid_argument("speaker id contains unsupported character: " + id);
}

// Bundle layout: <speaker_id>/train.txt, val.txt, ref_*.mel, ref_*.sup,
// embedding.spk (SPK1 with a single row). The last reference file is held out
// as validation when there are at least two.
inline AdaptationBundle prepare_reference(const std::string& feature_dir,
                                          const std::string& speaker_id,
                                          const CorpusOracle& oracle, const ToyEmbedder& embedder,
                                          const std::string& out_dir) {
  namespace fs = std::filesystem;
  validate_speaker_id(speaker_id);

  std::vector<std::string> mel_files;
  if (fs::exists(feature_dir))
    for (const auto& entry : fs::directory_iterator(feature_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".mel")
        mel_files.push_back(entry.path().filename().string());
  std::sort(mel_files.begin(), mel_files.end());
  if (mel_files.empty())
    throw std::runtime_error("prepare_reference: no .mel files in " + feature_dir);

  AdaptationBundle bundle;
  bundle.speaker_id = speaker_id;
  bundle.dir = out_dir + "/" + speaker_id;
  fs::create_directories(bundle.dir);

  std::vector<double> all_frames;
  std::vector<ManifestEntry> entries;
  for (const std::string& name : mel_files) {
    const Tensor mel = read_mel(feature_dir + "/" + name);
    auto [tokens, sup] = oracle.transcribe_and_measure(mel);
    bundle.total_reference_frames += mel.rows();
    all_frames.insert(all_frames.end(), mel.data.begin(), mel.data.end());

    write_mel(bundle.dir + "/" + name, mel);
    std::string sup_name = name;
    sup_name.replace(sup_name.size() - 4, 4, ".sup");
    write_sup(bundle.dir + "/" + sup_name, sup);

    ManifestEntry e;
    e.relpath = name;
    for (std::size_t t : tokens) e.tokens.push_back(token_name(t));
    e.speaker_id = speaker_id;
    entries.push_back(std::move(e));
  }

  const std::size_t n_mels = oracle.spec().n_mels;
  const std::size_t n_frames = all_frames.size() / n_mels;
  bundle.embedding = embedder.embed(Tensor({n_frames, n_mels}, std::move(all_frames)));

  if (entries.size() >= 2) {
    bundle.val_manifest.push_back(entries.back());
    entries.pop_back();
  }
  bundle.train_manifest = entries;
  write_manifest(bundle.dir + "/train.txt", bundle.train_manifest);
  write_manifest(bundle.dir + "/val.txt", bundle.val_manifest);

  SpeakerFile sf;
  sf.d_spk = embedder.d_spk();
  sf.rows = {bundle.embedding};
  sf.ids = {speaker_id};
  write_spk(bundle.dir + "/embedding.spk", sf);
  return bundle;
}

inline AdaptationBundle load_bundle(const std::string& bundle_dir) {
  AdaptationBundle b;
  b.dir = bundle_dir;
  SpeakerFile sf = read_spk(bundle_dir + "/embedding.spk");
  if (sf.ids.size() != 1) throw FormatError("bundle: embedding.spk must hold exactly one speaker");
  b.speaker_id = sf.ids[0];
  b.embedding = sf.rows[0];
  b.train_manifest = read_manifest(bundle_dir + "/train.txt");
  b.val_manifest = read_manifest(bundle_dir + "/val.txt");
  return b;
}

inline std::uint64_t file_hash(const std::string& path) { return fnv1a(read_text_file(path)); }

struct AdaptationResult {
  std::string checkpoint_path;
  std::size_t speaker_row = 0;
  EvalRow eval;             // on the bundle's validation manifest
  std::uint64_t base_hash = 0;  // hash of the base checkpoint file
  TrainStats stats;
};

// Appends the bundle embedding to the speaker table, fine-tunes on the bundle
// (new-speaker data only; pass extra utterances to mix in the original corpus)
// and writes the adapted checkpoint next to nothing else -- the base file is
// never touched.
inline AdaptationResult adapt_speaker(const std::string& base_ckpt_path,
                                      const AdaptationBundle& bundle, const FreezeSet& fs,
                                      const TrainConfig& cfg, const CorpusOracle& oracle,
                                      const ToyEmbedder& embedder,
                                      const std::string& out_ckpt_path, std::ostream* log = nullptr,
                                      const std::vector<Utterance>* mix_in = nullptr) {
  AdaptationResult res;
  res.base_hash = file_hash(base_ckpt_path);
  res.checkpoint_path = out_ckpt_path;

  LoadedCheckpoint ck = load_checkpoint(base_ckpt_path);
  AcousticModel& model = ck.model;
  if (model.speakers().find(bundle.speaker_id))
    throw std::invalid_argument("adapt: speaker " + bundle.speaker_id + " already in table");
  if (bundle.embedding.size() != model.config().d_spk)
    throw std::invalid_argument("adapt: bundle embedding dim " +
                                std::to_string(bundle.embedding.size()) +
                                " does not match checkpoint d_spk " +
                                std::to_string(model.config().d_spk));
  res.speaker_row = model.speakers().append(bundle.speaker_id, bundle.embedding);

  std::vector<Utterance> train_utts = load_manifest_utterances(
      bundle.dir, "train.txt", model.speakers(), model.config().vocab_size);
  if (train_utts.empty()) throw std::runtime_error("adapt: bundle train manifest is empty");
  if (mix_in)
    for (const Utterance& u : *mix_in) train_utts.push_back(u);

  res.stats = finetune(model, ck.opt, ck.step, train_utts, fs, cfg, log);

  const std::string eval_manifest = bundle.val_manifest.empty() ? "train.txt" : "val.txt";
  std::vector<Utterance> eval_utts = load_manifest_utterances(
      bundle.dir, eval_manifest, model.speakers(), model.config().vocab_size);
  res.eval = evaluate_tts(model, eval_utts, oracle, embedder,
                          to_string(model.config().conditioning) + "+" + bundle.speaker_id)
                 .row;

  save_checkpoint(out_ckpt_path, model, ck.opt, ck.step);
  return res;
}

struct SweepResult {
  std::vector<FreezeSet> setups;
  std::vector<AdaptationResult> results;
  EvalReport report;  // one row per setup, labeled by the freeze set
};

// Runs the seven freeze setups from the same base checkpoint.
inline SweepResult sweep_freeze_setups(const std::string& base_ckpt_path,
                                       const AdaptationBundle& bundle, const TrainConfig& cfg,
                                       const CorpusOracle& oracle, const ToyEmbedder& embedder,
                                       const std::string& out_dir, std::ostream* log = nullptr) {
  std::filesystem::create_directories(out_dir);
  SweepResult sweep;
  sweep.setups = FreezeSet::benchmark_setups();
  for (const FreezeSet& fs : sweep.setups) {
    const std::string out_path = out_dir + "/adapted_" + fs.label() + ".cpk";
    AdaptationResult r =
        adapt_speaker(base_ckpt_path, bundle, fs, cfg, oracle, embedder, out_path, log);
    EvalRow row = r.eval;
    row.config = "freeze=" + fs.label();
    sweep.report.rows.push_back(row);
    sweep.results.push_back(std::move(r));
  }
  return sweep;
}

}  // namespace tinytts
