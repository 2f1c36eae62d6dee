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

// Command-line front end: corpus generation, training, synthesis (speaker,
// anonymous), new-speaker adaptation, freeze-setup sweeps, evaluation and
// gradient checking. Exit codes: 0 success, 1 usage error, 2 runtime failure.

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tinytts/adapt.hpp"
#include "tinytts/corpus.hpp"
#include "tinytts/evaluate.hpp"
#include "tinytts/gradcheck.hpp"
#include "tinytts/metrics.hpp"
#include "tinytts/model.hpp"
#include "tinytts/trainer.hpp"

namespace tt = tinytts;

namespace {

std::vector<std::size_t> parse_token_string(const std::string& text, std::size_t vocab) {
  std::istringstream is(text);
  std::vector<std::size_t> tokens;
  std::string tok;
  while (is >> tok) tokens.push_back(tt::parse_token(tok, vocab));
  if (tokens.empty()) throw std::runtime_error("no tokens given");
  return tokens;
}

void reject_unknown_keys(const tt::KeyValues& kv) {
  const auto& mk = tt::ModelConfig::known_keys();
  const auto& tk = tt::TrainConfig::known_keys();
  for (const auto& [key, value] : kv) {
    (void)value;
    if (std::find(mk.begin(), mk.end(), key) == mk.end() &&
        std::find(tk.begin(), tk.end(), key) == tk.end())
      throw std::runtime_error("unknown config key: " + key);
  }
}

struct GenDataOpts {
  std::string out;
  tt::CorpusSpec spec;
  std::size_t held_out = 0;
  std::size_t ref_utts = 20;
};

void run_gen_data(const GenDataOpts& o) {
  tt::GeneratedCorpus corpus = tt::generate_corpus(o.spec);
  tt::write_corpus_dir(corpus, o.out);
  std::cerr << "wrote corpus: " << corpus.utterances.size() << " utterances, "
            << o.spec.n_speakers << " speakers -> " << o.out << "\n";
  if (o.held_out > 0) {
    tt::CorpusOracle oracle = tt::CorpusOracle::build(o.spec);
    for (std::size_t k = 0; k < o.held_out; ++k) {
      const std::string id = "heldout" + std::to_string(k);
      tt::SpeakerProfile prof =
          tt::make_held_out_profile(o.spec, oracle.probe(), id, 1000 + k);
      const std::string dir = o.out + "/refs_" + id;
      tt::write_reference_dir(o.spec, oracle, prof, o.ref_utts, dir);
      std::cerr << "wrote held-out references: " << dir << "\n";
    }
  }
}

struct TrainOpts {
  std::string data;
  std::string out;
  std::string config_file;
  std::string resume;
  std::string log_file;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> batch;
  std::optional<double> lr;
  std::optional<std::string> conditioning;
  std::optional<std::string> optimizer;
  std::optional<std::uint64_t> seed;
};

void run_train(const TrainOpts& o) {
  tt::LoadedCorpus corpus = tt::load_corpus_dir(o.data);

  tt::KeyValues file_kv;
  if (!o.config_file.empty()) {
    file_kv = tt::parse_key_values(tt::read_text_file(o.config_file));
    reject_unknown_keys(file_kv);
  }
  tt::TrainConfig tc = tt::TrainConfig::from_key_values(file_kv);
  if (o.steps) tc.steps = *o.steps;
  if (o.batch) tc.batch_size = *o.batch;
  if (o.lr) tc.learning_rate = *o.lr;
  if (o.optimizer) tc.optimizer = tt::optimizer_from_string(*o.optimizer);
  if (o.seed) tc.seed = *o.seed;

  std::ofstream log_stream;
  std::ostream* log = &std::cout;
  if (!o.log_file.empty()) {
    log_stream.open(o.log_file, std::ios::trunc);
    if (!log_stream) throw std::runtime_error("cannot open log file: " + o.log_file);
    log = &log_stream;
  }

  if (!o.resume.empty()) {
    if (o.conditioning || file_kv.count("d_model"))
      throw std::runtime_error("resume: model configuration comes from the checkpoint");
    tt::LoadedCheckpoint ck = tt::load_checkpoint(o.resume);
    tt::TrainStats stats = tt::train_steps(ck.model, corpus.train, tc, tt::FreezeSet::none(),
                                           ck.opt, ck.step, log);
    // echo the cumulative step count so a resumed run and an uninterrupted
    // one of the same total length produce identical checkpoints
    tt::TrainConfig echo = tc;
    echo.steps = ck.step;
    tt::save_checkpoint(o.out, ck.model, ck.opt, ck.step, echo.to_key_values());
    std::cerr << "resumed " << stats.losses.size() << " steps, final loss "
              << stats.losses.back() << " -> " << o.out << "\n";
    return;
  }

  tt::ModelConfig mc = tt::ModelConfig::from_key_values(file_kv);
  auto check_consistent = [&file_kv](const char* key, std::size_t file_value,
                                     std::size_t corpus_value) {
    if (file_kv.count(key) && file_value != corpus_value)
      throw std::runtime_error(std::string("config ") + key + "=" +
                               std::to_string(file_value) + " conflicts with corpus value " +
                               std::to_string(corpus_value));
  };
  check_consistent("vocab_size", mc.vocab_size, corpus.spec.n_phonemes);
  check_consistent("n_mels", mc.n_mels, corpus.spec.n_mels);
  check_consistent("d_spk", mc.d_spk, corpus.table.dim());
  mc.vocab_size = corpus.spec.n_phonemes;
  mc.n_mels = corpus.spec.n_mels;
  mc.d_spk = corpus.table.dim();
  if (o.conditioning) mc.conditioning = tt::conditioning_from_string(*o.conditioning);
  if (o.seed) mc.seed = *o.seed;
  mc.validate();

  tt::AcousticModel model(mc, corpus.table);
  tt::OptimizerState opt;
  std::uint64_t step = 0;
  tt::TrainStats stats =
      tt::train_steps(model, corpus.train, tc, tt::FreezeSet::none(), opt, step, log);
  tt::TrainConfig echo = tc;
  echo.steps = step;
  tt::save_checkpoint(o.out, model, opt, step, echo.to_key_values());
  std::cerr << "trained " << stats.losses.size() << " steps, final loss " << stats.losses.back()
            << " -> " << o.out << "\n";
}

struct SynthOpts {
  std::string ckpt;
  std::string tokens;
  std::string out;
  std::string speaker;
  std::string embedding_arg;  // SPK1 path or "zero"
  bool anonymous = false;
};

void run_synth(const SynthOpts& o) {
  tt::LoadedCheckpoint ck = tt::load_checkpoint(o.ckpt);
  const auto tokens = parse_token_string(o.tokens, ck.model.config().vocab_size);
  tt::Tensor mel = [&]() {
    if (o.anonymous) return ck.model.synthesize_anonymous(tokens);
    if (!o.speaker.empty()) return ck.model.infer_speaker(tokens, o.speaker);
    if (o.embedding_arg == "zero")
      return ck.model.infer(tokens, std::vector<double>(ck.model.config().d_spk, 0.0));
    tt::SpeakerFile f = tt::read_spk(o.embedding_arg);
    if (f.rows.empty()) throw std::runtime_error("embedding file has no rows");
    return ck.model.infer(tokens, f.rows[0]);
  }();
  tt::write_mel(o.out, mel);
  std::cerr << "synthesized " << mel.rows() << " frames -> " << o.out << "\n";
}

struct EvalOpts {
  std::vector<std::string> ckpts;
  std::string data;
  std::string report;
  std::string split = "val";
  bool anonymous = false;
  std::size_t phrases = 4;
};

void run_eval(const EvalOpts& o) {
  tt::LoadedCorpus corpus = tt::load_corpus_dir(o.data);
  const auto& utts = o.split == "train" ? corpus.train : corpus.val;
  if (o.split != "train" && o.split != "val")
    throw std::runtime_error("unknown split: " + o.split);
  tt::CorpusOracle oracle = tt::CorpusOracle::build(corpus.spec);

  tt::EvalReport report;
  for (const std::string& path : o.ckpts) {
    tt::LoadedCheckpoint ck = tt::load_checkpoint(path);
    tt::ToyEmbedder embedder(ck.model.config().n_mels, ck.model.config().d_spk);
    report.rows.push_back(tt::evaluate_tts(ck.model, utts, oracle, embedder).row);
    if (o.anonymous) {
      std::vector<std::vector<std::size_t>> phrases;
      for (std::size_t i = 0; i < utts.size() && phrases.size() < o.phrases; ++i)
        phrases.push_back(utts[i].tokens);
      tt::AnonEvaluation anon = tt::evaluate_anonymous(ck.model, phrases, oracle, embedder);
      for (tt::EvalRow row : anon.report.rows) {
        row.config = tt::to_string(ck.model.config().conditioning) + "/" + row.config;
        report.rows.push_back(row);
      }
    }
  }
  const std::string tsv = tt::write_report_tsv(report);
  if (!o.report.empty()) tt::write_text_file(o.report, tsv);
  std::cout << tsv;
}

struct AdaptOpts {
  std::string ckpt;
  std::string refs;
  std::string speaker_id;
  std::string data;
  std::string out;
  std::string bundle_out;
  std::string freeze = "none";
  std::string report;
  std::string log_file;
  std::size_t steps = 300;
  std::size_t batch = 1;
  double lr = 1e-3;
  std::uint64_t seed = 1;
  bool mix = false;
};

void run_adapt(const AdaptOpts& o) {
  tt::LoadedCorpus corpus = tt::load_corpus_dir(o.data);
  tt::CorpusOracle oracle = tt::CorpusOracle::build(corpus.spec);
  tt::LoadedCheckpoint probe_ck = tt::load_checkpoint(o.ckpt);
  tt::ToyEmbedder embedder(probe_ck.model.config().n_mels, probe_ck.model.config().d_spk);

  const std::string bundle_dir = o.bundle_out.empty() ? o.out + "_bundle" : o.bundle_out;
  tt::AdaptationBundle bundle =
      tt::prepare_reference(o.refs, o.speaker_id, oracle, embedder, bundle_dir);

  tt::TrainConfig cfg = tt::finetune_defaults();
  cfg.steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.learning_rate = o.lr;
  cfg.seed = o.seed;

  std::ofstream log_stream;
  std::ostream* log = nullptr;
  if (!o.log_file.empty()) {
    log_stream.open(o.log_file, std::ios::trunc);
    if (!log_stream) throw std::runtime_error("cannot open log file: " + o.log_file);
    log = &log_stream;
  }

  tt::FreezeSet fs = tt::FreezeSet::parse(o.freeze);
  tt::AdaptationResult res =
      o.mix ? tt::adapt_speaker(o.ckpt, bundle, fs, cfg, oracle, embedder, o.out, log,
                                &corpus.train)
            : tt::adapt_speaker(o.ckpt, bundle, fs, cfg, oracle, embedder, o.out, log);

  tt::EvalReport report;
  report.rows.push_back(res.eval);
  const std::string tsv = tt::write_report_tsv(report);
  if (!o.report.empty()) tt::write_text_file(o.report, tsv);
  std::cout << tsv;
  std::cerr << "adapted speaker " << o.speaker_id << " (row " << res.speaker_row << ", freeze="
            << fs.label() << ") -> " << o.out << "\n";
}

struct SweepOpts {
  std::string ckpt;
  std::string refs;
  std::string speaker_id;
  std::string data;
  std::string out_dir;
  std::string report;
  std::size_t steps = 300;
  std::size_t batch = 1;
  double lr = 1e-3;
  std::uint64_t seed = 1;
};

void run_sweep(const SweepOpts& o) {
  tt::LoadedCorpus corpus = tt::load_corpus_dir(o.data);
  tt::CorpusOracle oracle = tt::CorpusOracle::build(corpus.spec);
  tt::LoadedCheckpoint probe_ck = tt::load_checkpoint(o.ckpt);
  tt::ToyEmbedder embedder(probe_ck.model.config().n_mels, probe_ck.model.config().d_spk);

  tt::AdaptationBundle bundle =
      tt::prepare_reference(o.refs, o.speaker_id, oracle, embedder, o.out_dir + "/bundle");

  tt::TrainConfig cfg = tt::finetune_defaults();
  cfg.steps = o.steps;
  cfg.batch_size = o.batch;
  cfg.learning_rate = o.lr;
  cfg.seed = o.seed;

  tt::SweepResult sweep =
      tt::sweep_freeze_setups(o.ckpt, bundle, cfg, oracle, embedder, o.out_dir);
  const std::string tsv = tt::write_report_tsv(sweep.report);
  if (!o.report.empty()) tt::write_text_file(o.report, tsv);
  std::cout << tsv;
}

struct GradcheckOpts {
  std::string conditioning = "all";
  std::uint64_t seed = 1;
};

int run_gradcheck(const GradcheckOpts& o) {
  std::vector<tt::ConditioningPoint> points;
  if (o.conditioning == "all")
    points = {tt::ConditioningPoint::kEncoder, tt::ConditioningPoint::kPredictors,
              tt::ConditioningPoint::kDecoder};
  else
    points = {tt::conditioning_from_string(o.conditioning)};

  bool all_ok = true;
  for (auto p : points) {
    tt::GradCheckReport rep =
        tt::gradcheck_config(tt::gradcheck_default_config(p, o.seed), o.seed);
    std::cout << "gradcheck " << tt::to_string(p) << ": checked=" << rep.checked
              << " failures=" << rep.failures << " max_rel_err=" << rep.max_rel_err << " -> "
              << (rep.ok() ? "PASS" : "FAIL") << "\n";
    all_ok = all_ok && rep.ok();
  }
  return all_ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale multi-speaker mel synthesizer with conditioning experiments"};
  app.require_subcommand(1);
  int rc = 0;

  GenDataOpts gen;
  auto* sub_gen = app.add_subcommand("gen-data", "generate a synthetic corpus");
  sub_gen->add_option("--out", gen.out, "output directory")->required();
  sub_gen->add_option("--speakers", gen.spec.n_speakers, "number of speakers");
  sub_gen->add_option("--utts", gen.spec.utts_per_speaker, "utterances per speaker");
  sub_gen->add_option("--phonemes", gen.spec.n_phonemes, "token inventory size");
  sub_gen->add_option("--mels", gen.spec.n_mels, "feature channels");
  sub_gen->add_option("--d-spk", gen.spec.d_spk, "embedding dimension");
  sub_gen->add_option("--min-len", gen.spec.min_len, "minimum tokens per utterance");
  sub_gen->add_option("--max-len", gen.spec.max_len, "maximum tokens per utterance");
  sub_gen->add_option("--offset-scale", gen.spec.speaker_offset_scale, "speaker offset scale");
  sub_gen->add_option("--noise-scale", gen.spec.noise_scale, "frame noise scale");
  sub_gen->add_option("--seed", gen.spec.seed, "corpus seed");
  sub_gen->add_option("--held-out", gen.held_out, "held-out reference speakers to generate");
  sub_gen->add_option("--ref-utts", gen.ref_utts, "reference utterances per held-out speaker");
  sub_gen->callback([&gen]() { run_gen_data(gen); });

  TrainOpts train;
  auto* sub_train = app.add_subcommand("train", "train an acoustic model on a corpus");
  sub_train->add_option("--data", train.data, "corpus directory")->required();
  sub_train->add_option("--out", train.out, "output checkpoint path")->required();
  sub_train->add_option("--config", train.config_file, "key=value run-config file");
  sub_train->add_option("--resume", train.resume, "resume from checkpoint");
  sub_train->add_option("--log", train.log_file, "loss log file (default: stdout)");
  sub_train->add_option("--steps", train.steps, "optimizer steps");
  sub_train->add_option("--batch", train.batch, "batch size");
  sub_train->add_option("--lr", train.lr, "learning rate");
  sub_train->add_option("--conditioning", train.conditioning, "encoder|predictors|decoder");
  sub_train->add_option("--optimizer", train.optimizer, "adam|sgd");
  sub_train->add_option("--seed", train.seed, "seed for model init and shuffling");
  sub_train->callback([&train]() { run_train(train); });

  SynthOpts synth;
  auto* sub_synth = app.add_subcommand("synth", "synthesize features for a token string");
  sub_synth->add_option("--ckpt", synth.ckpt, "checkpoint path")->required();
  sub_synth->add_option("--tokens", synth.tokens, "space-separated tokens, e.g. \"p1 p2 p3\"")
      ->required();
  sub_synth->add_option("--out", synth.out, "output MEL1 path")->required();
  auto* who = sub_synth->add_option_group("speaker selection");
  who->add_option("--speaker", synth.speaker, "speaker id from the table");
  who->add_flag("--anonymous", synth.anonymous, "zero speaker embedding");
  who->add_option("--speaker-embedding", synth.embedding_arg, "SPK1 file or 'zero'");
  who->require_option(1);
  sub_synth->callback([&synth]() { run_synth(synth); });

  EvalOpts eval;
  auto* sub_eval = app.add_subcommand("eval", "evaluate checkpoints on a corpus split");
  sub_eval->add_option("--ckpt", eval.ckpts, "checkpoint path (repeatable)")->required();
  sub_eval->add_option("--data", eval.data, "corpus directory")->required();
  sub_eval->add_option("--report", eval.report, "output TSV path");
  sub_eval->add_option("--split", eval.split, "train|val (default val)");
  sub_eval->add_flag("--anonymous", eval.anonymous, "also evaluate the anonymous voice");
  sub_eval->add_option("--phrases", eval.phrases, "phrases for the anonymous evaluation");
  sub_eval->callback([&eval]() { run_eval(eval); });

  AdaptOpts adapt;
  auto* sub_adapt = app.add_subcommand("adapt", "adapt a trained model to a new speaker");
  sub_adapt->add_option("--ckpt", adapt.ckpt, "base checkpoint")->required();
  sub_adapt->add_option("--refs", adapt.refs, "directory of reference .mel files")->required();
  sub_adapt->add_option("--speaker-id", adapt.speaker_id, "new speaker id")->required();
  sub_adapt->add_option("--data", adapt.data, "corpus directory (oracle context)")->required();
  sub_adapt->add_option("--out", adapt.out, "adapted checkpoint path")->required();
  sub_adapt->add_option("--bundle-out", adapt.bundle_out, "bundle directory");
  sub_adapt->add_option("--freeze", adapt.freeze,
                        "blocks to freeze: enc,dec|predictors|pitch|duration|energy");
  sub_adapt->add_option("--steps", adapt.steps, "fine-tune steps (default 300)");
  sub_adapt->add_option("--batch", adapt.batch, "batch size (default 1)");
  sub_adapt->add_option("--lr", adapt.lr, "learning rate");
  sub_adapt->add_option("--seed", adapt.seed, "shuffle seed");
  sub_adapt->add_option("--report", adapt.report, "output TSV path");
  sub_adapt->add_option("--log", adapt.log_file, "loss log file");
  sub_adapt->add_flag("--mix", adapt.mix, "mix the original training data into fine-tuning");
  sub_adapt->callback([&adapt]() { run_adapt(adapt); });

  SweepOpts sweep;
  auto* sub_sweep = app.add_subcommand("sweep-freeze", "run the seven freeze setups");
  sub_sweep->add_option("--ckpt", sweep.ckpt, "base checkpoint")->required();
  sub_sweep->add_option("--refs", sweep.refs, "directory of reference .mel files")->required();
  sub_sweep->add_option("--speaker-id", sweep.speaker_id, "new speaker id")->required();
  sub_sweep->add_option("--data", sweep.data, "corpus directory (oracle context)")->required();
  sub_sweep->add_option("--out-dir", sweep.out_dir, "output directory")->required();
  sub_sweep->add_option("--report", sweep.report, "output TSV path");
  sub_sweep->add_option("--steps", sweep.steps, "fine-tune steps (default 300)");
  sub_sweep->add_option("--batch", sweep.batch, "batch size (default 1)");
  sub_sweep->add_option("--lr", sweep.lr, "learning rate");
  sub_sweep->add_option("--seed", sweep.seed, "shuffle seed");
  sub_sweep->callback([&sweep]() { run_sweep(sweep); });

  GradcheckOpts gc;
  auto* sub_gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  sub_gc->add_option("--conditioning", gc.conditioning, "encoder|predictors|decoder|all");
  sub_gc->add_option("--seed", gc.seed, "seed");
  sub_gc->callback([&gc, &rc]() { rc = run_gradcheck(gc); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return rc;
}
