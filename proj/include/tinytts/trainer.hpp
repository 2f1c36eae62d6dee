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

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tinytts/model.hpp"

namespace tinytts {

// The five freezable blocks. Token embeddings and the speaker/pitch/energy
// projections belong to none of them and are always trainable.
enum class Block { kEncoder, kDecoder, kPitchPredictor, kDurationPredictor, kEnergyPredictor };

struct FreezeSet {
  bool encoder = false;
  bool decoder = false;
  bool pitch = false;
  bool duration = false;
  bool energy = false;

  static FreezeSet none() { return {}; }

  bool contains(Block b) const {
    switch (b) {
      case Block::kEncoder: return encoder;
      case Block::kDecoder: return decoder;
      case Block::kPitchPredictor: return pitch;
      case Block::kDurationPredictor: return duration;
      case Block::kEnergyPredictor: return energy;
    }
    return false;
  }

  bool empty() const { return !(encoder || decoder || pitch || duration || energy); }

  std::string label() const {
    if (empty()) return "none";
    std::string s;
    auto app = [&s](const char* name) {
      if (!s.empty()) s += '+';
      s += name;
    };
    if (encoder) app("enc");
    if (decoder) app("dec");
    if (pitch) app("pitch");
    if (duration) app("duration");
    if (energy) app("energy");
    return s;
  }

  // Accepts a comma-separated list of enc|dec|pitch|duration|energy, the
  // shorthand "predictors" for all three predictor blocks, or "none".
  static FreezeSet parse(const std::string& spec) {
    FreezeSet fs;
    if (spec.empty() || spec == "none") return fs;
    std::istringstream is(spec);
    std::string item;
    while (std::getline(is, item, ',')) {
      if (item == "enc" || item == "encoder")
        fs.encoder = true;
      else if (item == "dec" || item == "decoder")
        fs.decoder = true;
      else if (item == "pitch")
        fs.pitch = true;
      else if (item == "duration" || item == "dur")
        fs.duration = true;
      else if (item == "energy")
        fs.energy = true;
      else if (item == "predictors")
        fs.pitch = fs.duration = fs.energy = true;
      else
        throw std::invalid_argument("unknown freeze block: " + item);
    }
    return fs;
  }

  // The seven setups evaluated per configuration: encoder, decoder, all three
  // predictors, each predictor alone, and encoder+decoder.
  static std::vector<FreezeSet> benchmark_setups() {
    std::vector<FreezeSet> out;
    out.push_back(parse("enc"));
    out.push_back(parse("dec"));
    out.push_back(parse("predictors"));
    out.push_back(parse("pitch"));
    out.push_back(parse("duration"));
    out.push_back(parse("energy"));
    out.push_back(parse("enc,dec"));
    return out;
  }
};

inline std::optional<Block> block_of_parameter(const std::string& name) {
  auto starts = [&name](const char* prefix) { return name.rfind(prefix, 0) == 0; };
  if (starts("enc.")) return Block::kEncoder;
  if (starts("dec.")) return Block::kDecoder;
  if (starts("pred.pitch.")) return Block::kPitchPredictor;
  if (starts("pred.duration.")) return Block::kDurationPredictor;
  if (starts("pred.energy.")) return Block::kEnergyPredictor;
  return std::nullopt;  // embed.* and proj.* are residual trainables
}

struct Partition {
  std::vector<Parameter*> trainable;
  std::vector<Parameter*> frozen;

  std::size_t trainable_elements() const {
    std::size_t n = 0;
    for (auto* p : trainable) n += p->size();
    return n;
  }
};

// Marks parameters and returns the partition in model parameter order.
// Frozen parameters are skipped by the optimizer and dropped from its state.
inline Partition apply_freeze(AcousticModel& model, const FreezeSet& fs) {
  Partition part;
  for (Parameter* p : model.parameters()) {
    auto block = block_of_parameter(p->name);
    const bool frozen = block && fs.contains(*block);
    p->trainable = !frozen;
    (frozen ? part.frozen : part.trainable).push_back(p);
  }
  return part;
}

enum class OptimizerKind { kSgd, kAdam };

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd";
}

inline OptimizerKind optimizer_from_string(const std::string& s) {
  if (s == "adam") return OptimizerKind::kAdam;
  if (s == "sgd") return OptimizerKind::kSgd;
  throw std::invalid_argument("unknown optimizer: " + s + " (expected adam|sgd)");
}

struct TrainConfig {
  double learning_rate = 1e-3;
  std::size_t batch_size = 4;
  std::size_t steps = 1;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double adam_eps = 1e-9;
  std::uint64_t seed = 1;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("train config: steps must be >= 1");
    if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
    if (!(learning_rate > 0)) throw std::invalid_argument("train config: learning_rate must be > 0");
  }

  KeyValues to_key_values() const {
    KeyValues kv;
    char buf[64];
    auto fmt = [&buf](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    kv["learning_rate"] = fmt(learning_rate);
    kv["batch_size"] = std::to_string(batch_size);
    kv["steps"] = std::to_string(steps);
    kv["optimizer"] = to_string(optimizer);
    kv["beta1"] = fmt(beta1);
    kv["beta2"] = fmt(beta2);
    kv["adam_eps"] = fmt(adam_eps);
    kv["train_seed"] = std::to_string(seed);
    return kv;
  }

  static TrainConfig from_key_values(const KeyValues& kv) {
    TrainConfig c;
    if (auto it = kv.find("learning_rate"); it != kv.end()) c.learning_rate = std::stod(it->second);
    if (auto it = kv.find("batch_size"); it != kv.end()) c.batch_size = std::stoull(it->second);
    if (auto it = kv.find("steps"); it != kv.end()) c.steps = std::stoull(it->second);
    if (auto it = kv.find("optimizer"); it != kv.end())
      c.optimizer = optimizer_from_string(it->second);
    if (auto it = kv.find("beta1"); it != kv.end()) c.beta1 = std::stod(it->second);
    if (auto it = kv.find("beta2"); it != kv.end()) c.beta2 = std::stod(it->second);
    if (auto it = kv.find("adam_eps"); it != kv.end()) c.adam_eps = std::stod(it->second);
    if (auto it = kv.find("train_seed"); it != kv.end()) c.seed = std::stoull(it->second);
    return c;
  }

  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {"learning_rate", "batch_size", "steps",
                                                  "optimizer",     "beta1",      "beta2",
                                                  "adam_eps",      "train_seed"};
    return keys;
  }
};

// Adam first/second moments keyed by parameter name. SGD keeps no state.
struct OptimizerState {
  std::map<std::string, std::vector<double>> m;
  std::map<std::string, std::vector<double>> v;

  void drop_except(const std::vector<Parameter*>& keep) {
    std::map<std::string, std::vector<double>> nm, nv;
    for (auto* p : keep) {
      if (auto it = m.find(p->name); it != m.end()) nm[p->name] = std::move(it->second);
      if (auto it = v.find(p->name); it != v.end()) nv[p->name] = std::move(it->second);
    }
    m = std::move(nm);
    v = std::move(nv);
  }
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::uint64_t step, double loss)
      : std::runtime_error("training diverged at step " + std::to_string(step) + ": loss " +
                           (std::isfinite(loss) ? std::to_string(loss) : std::string("non-finite"))),
        step(step),
        loss(loss) {}
  std::uint64_t step;
  double loss;
};

inline constexpr double kDivergenceLimit = 1e6;

// Counter-based batch selection: utterance indices come from an infinite
// stream of per-epoch seeded permutations, so position k*B+j is a pure
// function of (seed, corpus size). Resuming from a step counter reproduces
// the uninterrupted run exactly.
inline std::size_t stream_index(std::uint64_t seed, std::size_t corpus_size, std::uint64_t pos,
                                std::vector<std::size_t>& perm_cache, std::uint64_t& cached_epoch) {
  const std::uint64_t epoch = pos / corpus_size;
  if (perm_cache.empty() || epoch != cached_epoch) {
    perm_cache = seeded_permutation(seed, "shuffle", epoch, corpus_size);
    cached_epoch = epoch;
  }
  return perm_cache[pos % corpus_size];
}

struct TrainStats {
  std::vector<double> losses;
  std::size_t trainable_tensors = 0;
  std::size_t trainable_elements = 0;
  double wall_ms = 0;
};

namespace detail {

inline void optimizer_step(const TrainConfig& cfg, const std::vector<Parameter*>& trainable,
                           OptimizerState& state, std::uint64_t t) {
  if (cfg.optimizer == OptimizerKind::kSgd) {
    for (Parameter* p : trainable)
      for (std::size_t i = 0; i < p->value.size(); ++i)
        p->value[i] -= cfg.learning_rate * p->grad[i];
    return;
  }
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (Parameter* p : trainable) {
    auto& m = state.m[p->name];
    auto& v = state.v[p->name];
    if (m.size() != p->size()) m.assign(p->size(), 0.0);
    if (v.size() != p->size()) v.assign(p->size(), 0.0);
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p->value[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
  }
}

}  // namespace detail

// Runs cfg.steps optimizer steps over seeded shuffled batches. The step
// counter is global and persists through checkpoints, which keeps both the
// batch stream and the Adam bias correction aligned across resumes.
// Per-utterance losses are reduced mean-per-utterance, then mean-over-batch.
inline TrainStats train_steps(AcousticModel& model, const std::vector<Utterance>& corpus,
                              const TrainConfig& cfg, const FreezeSet& fs, OptimizerState& opt,
                              std::uint64_t& step_counter, std::ostream* log = nullptr) {
  cfg.validate();
  if (corpus.empty()) throw std::invalid_argument("train: empty corpus");
  for (const auto& utt : corpus)
    if (utt.speaker_index >= model.speakers().size())
      throw std::invalid_argument("train: utterance speaker " + utt.speaker_id +
                                  " not registered in speaker table");

  Partition part = apply_freeze(model, fs);
  if (part.trainable.empty()) throw std::invalid_argument("train: nothing left trainable");
  opt.drop_except(part.trainable);

  TrainStats stats;
  stats.trainable_tensors = part.trainable.size();
  stats.trainable_elements = part.trainable_elements();

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::size_t> perm_cache;
  std::uint64_t cached_epoch = 0;
  auto all_params = model.parameters();

  for (std::size_t local = 0; local < cfg.steps; ++local) {
    Graph g;
    std::optional<Value> batch_total;
    for (std::size_t j = 0; j < cfg.batch_size; ++j) {
      const std::uint64_t pos = step_counter * cfg.batch_size + j;
      const std::size_t idx = stream_index(cfg.seed, corpus.size(), pos, perm_cache, cached_epoch);
      TrainForward f = model.forward_train(g, corpus[idx]);
      batch_total = batch_total ? g.add(*batch_total, f.total) : f.total;
    }
    Value loss = g.scale(*batch_total, 1.0 / static_cast<double>(cfg.batch_size));
    const double loss_value = g.tensor(loss).data[0];
    if (!std::isfinite(loss_value) || loss_value > kDivergenceLimit)
      throw TrainingDiverged(step_counter + 1, loss_value);

    for (Parameter* p : all_params) p->zero_grad();
    g.backward(loss);
    ++step_counter;
    detail::optimizer_step(cfg, part.trainable, opt, step_counter);

    stats.losses.push_back(loss_value);
    if (log) (*log) << step_counter << "\t" << loss_value << "\n";
  }

  stats.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0)
                      .count();
  if (log)
    (*log) << "# steps=" << cfg.steps << " trainable_tensors=" << stats.trainable_tensors
           << " trainable_elements=" << stats.trainable_elements << " wall_ms=" << stats.wall_ms
           << "\n";
  return stats;
}

// ---- checkpoint persistence (format CPK1) ----
//
//   "CPK1"
//   u32 length, config text (key=value lines, ending with config_hash=...)
//   u32 count, parameter records  [u32 name_len, name, u32 rank, u32 dims[], f64 data]
//   u32 count, optimizer records  (same record encoding, names adam.m.* / adam.v.*)
//   u64 step counter

namespace detail {

inline void write_record(std::ostream& os, const std::string& name, const Shape& dims,
                         const std::vector<double>& data) {
  write_u32(os, static_cast<std::uint32_t>(name.size()));
  put_bytes(os, name.data(), name.size());
  write_u32(os, static_cast<std::uint32_t>(dims.size()));
  for (std::size_t d : dims) write_u32(os, static_cast<std::uint32_t>(d));
  write_f64_array(os, data);
}

struct Record {
  std::string name;
  Shape dims;
  std::vector<double> data;
};

inline Record read_record(std::istream& is) {
  Record r;
  const std::uint32_t n = read_u32(is, "record name length");
  r.name.resize(n);
  get_bytes(is, r.name.data(), n, "record name");
  const std::uint32_t rank = read_u32(is, "record rank");
  r.dims.resize(rank);
  for (auto& d : r.dims) d = read_u32(is, "record dim");
  r.data.resize(shape_size(r.dims));
  read_f64_array(is, r.data, "record data");
  return r;
}

inline std::string join_ids(const std::vector<std::string>& ids) {
  std::string s;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) s += ',';
    s += ids[i];
  }
  return s;
}

inline std::vector<std::string> split_ids(const std::string& s) {
  std::vector<std::string> out;
  if (s.empty()) return out;
  std::istringstream is(s);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(item);
  return out;
}

}  // namespace detail

inline std::string checkpoint_config_text(const AcousticModel& model,
                                          const KeyValues& extra = {}) {
  KeyValues kv = model.config().to_key_values();
  for (const auto& [k, v] : extra) kv.emplace(k, v);
  std::string text;
  for (const auto& [k, v] : kv) text += k + "=" + v + "\n";
  text += "speaker_ids=" + detail::join_ids(model.speakers().ids()) + "\n";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  text += "config_hash=" + std::string(buf) + "\n";
  return text;
}

inline void save_checkpoint(const std::string& path, const AcousticModel& model,
                            const OptimizerState& opt, std::uint64_t step,
                            const KeyValues& extra_config = {}) {
  auto os = open_out(path);
  write_magic(os, "CPK1");
  const std::string cfg_text = checkpoint_config_text(model, extra_config);
  write_u32(os, static_cast<std::uint32_t>(cfg_text.size()));
  detail::put_bytes(os, cfg_text.data(), cfg_text.size());

  auto params = model.parameters();
  write_u32(os, static_cast<std::uint32_t>(params.size() + 1));
  for (const Parameter* p : params) detail::write_record(os, p->name, p->dims, p->value);
  // The frozen speaker table rides along as a named record; its ids live in
  // the config block.
  const SpeakerTable& table = model.speakers();
  std::vector<double> flat;
  flat.reserve(table.size() * table.dim());
  for (std::size_t i = 0; i < table.size(); ++i)
    flat.insert(flat.end(), table.row(i).begin(), table.row(i).end());
  detail::write_record(os, "speaker_table.embeddings", {table.size(), table.dim()}, flat);

  write_u32(os, static_cast<std::uint32_t>(opt.m.size() + opt.v.size()));
  for (const auto& [name, data] : opt.m)
    detail::write_record(os, "adam.m." + name, {data.size()}, data);
  for (const auto& [name, data] : opt.v)
    detail::write_record(os, "adam.v." + name, {data.size()}, data);

  write_u64(os, step);
  if (!os) throw std::runtime_error("write failed: " + path);
}

struct LoadedCheckpoint {
  AcousticModel model;
  OptimizerState opt;
  std::uint64_t step = 0;
  KeyValues config_kv;  // full config block, including any echoed train keys
};

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  auto is = open_in(path);
  expect_magic(is, "CPK1", "checkpoint");
  const std::uint32_t cfg_len = read_u32(is, "config length");
  std::string cfg_text(cfg_len, '\0');
  detail::get_bytes(is, cfg_text.data(), cfg_len, "config block");

  // Validate the stored hash over the preceding lines.
  const std::size_t hash_pos = cfg_text.rfind("config_hash=");
  if (hash_pos == std::string::npos) throw FormatError("checkpoint: missing config hash");
  const std::string hashed_part = cfg_text.substr(0, hash_pos);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(hashed_part)));
  KeyValues kv = parse_key_values(cfg_text);
  if (kv["config_hash"] != buf) throw FormatError("checkpoint: config hash mismatch");

  ModelConfig cfg = ModelConfig::from_key_values(kv);
  std::vector<std::string> ids = detail::split_ids(kv["speaker_ids"]);

  const std::uint32_t n_params = read_u32(is, "parameter count");
  std::map<std::string, Tensor> values;
  std::optional<detail::Record> table_rec;
  for (std::uint32_t i = 0; i < n_params; ++i) {
    detail::Record r = detail::read_record(is);
    if (r.name == "speaker_table.embeddings")
      table_rec = std::move(r);
    else
      values.emplace(r.name, Tensor(r.dims, std::move(r.data)));
  }
  if (!table_rec) throw FormatError("checkpoint: missing speaker table record");
  if (table_rec->dims.size() != 2 || table_rec->dims[0] != ids.size() ||
      table_rec->dims[1] != cfg.d_spk)
    throw FormatError("checkpoint: speaker table shape mismatch");

  SpeakerTable table(cfg.d_spk);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::vector<double> row(table_rec->data.begin() + i * cfg.d_spk,
                            table_rec->data.begin() + (i + 1) * cfg.d_spk);
    table.append(ids[i], std::move(row));
  }

  LoadedCheckpoint out{AcousticModel(cfg, std::move(table)), OptimizerState{}, 0, kv};
  out.model.load_parameter_values(values);

  const std::uint32_t n_opt = read_u32(is, "optimizer record count");
  for (std::uint32_t i = 0; i < n_opt; ++i) {
    detail::Record r = detail::read_record(is);
    if (r.name.rfind("adam.m.", 0) == 0)
      out.opt.m[r.name.substr(7)] = std::move(r.data);
    else if (r.name.rfind("adam.v.", 0) == 0)
      out.opt.v[r.name.substr(7)] = std::move(r.data);
    else
      throw FormatError("checkpoint: unknown optimizer record " + r.name);
  }
  out.step = read_u64(is, "step counter");
  return out;
}

// Fine-tuning defaults: 300 steps at batch size 1, resuming the optimizer.
inline TrainConfig finetune_defaults() {
  TrainConfig cfg;
  cfg.steps = 300;
  cfg.batch_size = 1;
  return cfg;
}

// Resumes optimization on a (typically small) new corpus with the given
// blocks frozen. State for frozen parameters is dropped.
inline TrainStats finetune(AcousticModel& model, OptimizerState& opt, std::uint64_t& step,
                           const std::vector<Utterance>& corpus, const FreezeSet& fs,
                           const TrainConfig& cfg, std::ostream* log = nullptr) {
  return train_steps(model, corpus, cfg, fs, opt, step, log);
}

}  // namespace tinytts
