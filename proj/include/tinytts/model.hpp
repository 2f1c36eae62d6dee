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

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <type_traits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tinytts/autodiff.hpp"
#include "tinytts/io.hpp"
#include "tinytts/rng.hpp"
#include "tinytts/tensor.hpp"

namespace tinytts {

// Where the projected speaker embedding is added. Exactly one block receives
// it; the other blocks never see the embedding.
enum class ConditioningPoint { kEncoder, kPredictors, kDecoder };

inline std::string to_string(ConditioningPoint c) {
  switch (c) {
    case ConditioningPoint::kEncoder: return "encoder";
    case ConditioningPoint::kPredictors: return "predictors";
    case ConditioningPoint::kDecoder: return "decoder";
  }
  throw std::logic_error("bad conditioning point");
}

inline ConditioningPoint conditioning_from_string(const std::string& s) {
  if (s == "encoder") return ConditioningPoint::kEncoder;
  if (s == "predictors") return ConditioningPoint::kPredictors;
  if (s == "decoder") return ConditioningPoint::kDecoder;
  throw std::invalid_argument("unknown conditioning point: " + s +
                              " (expected encoder|predictors|decoder)");
}

struct LossWeights {
  double mel = 1.0;
  double pitch = 1.0;
  double duration = 1.0;
  double energy = 1.0;
};

struct ModelConfig {
  std::size_t vocab_size = 12;
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t n_enc_layers = 2;
  std::size_t n_dec_layers = 2;
  std::size_t ffn_kernel = 3;        // odd
  std::size_t predictor_kernel = 3;  // odd
  std::size_t predictor_hidden = 32;
  std::size_t n_mels = 20;
  std::size_t d_spk = 192;
  ConditioningPoint conditioning = ConditioningPoint::kEncoder;
  LossWeights loss_weights;
  std::uint64_t seed = 1;

  void validate() const {
    if (vocab_size < 1 || d_model < 1 || n_heads < 1 || n_enc_layers < 1 || n_dec_layers < 1 ||
        predictor_hidden < 1 || n_mels < 1 || d_spk < 1)
      throw std::invalid_argument("model config: all dimensions must be >= 1");
    if (d_model % n_heads != 0)
      throw std::invalid_argument("model config: d_model must be divisible by n_heads");
    if (ffn_kernel % 2 == 0 || predictor_kernel % 2 == 0)
      throw std::invalid_argument("model config: convolution kernels must be odd");
    if (loss_weights.mel < 0 || loss_weights.pitch < 0 || loss_weights.duration < 0 ||
        loss_weights.energy < 0)
      throw std::invalid_argument("model config: loss weights must be >= 0");
  }

  KeyValues to_key_values() const {
    KeyValues kv;
    kv["vocab_size"] = std::to_string(vocab_size);
    kv["d_model"] = std::to_string(d_model);
    kv["n_heads"] = std::to_string(n_heads);
    kv["n_enc_layers"] = std::to_string(n_enc_layers);
    kv["n_dec_layers"] = std::to_string(n_dec_layers);
    kv["ffn_kernel"] = std::to_string(ffn_kernel);
    kv["predictor_kernel"] = std::to_string(predictor_kernel);
    kv["predictor_hidden"] = std::to_string(predictor_hidden);
    kv["n_mels"] = std::to_string(n_mels);
    kv["d_spk"] = std::to_string(d_spk);
    kv["conditioning"] = to_string(conditioning);
    char buf[64];
    auto fmt = [&buf](double v) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      return std::string(buf);
    };
    kv["w_mel"] = fmt(loss_weights.mel);
    kv["w_pitch"] = fmt(loss_weights.pitch);
    kv["w_duration"] = fmt(loss_weights.duration);
    kv["w_energy"] = fmt(loss_weights.energy);
    kv["seed"] = std::to_string(seed);
    return kv;
  }

  static ModelConfig from_key_values(const KeyValues& kv) {
    ModelConfig c;
    auto get = [&kv](const char* k, auto& out) {
      auto it = kv.find(k);
      if (it == kv.end()) return;
      if constexpr (std::is_same_v<std::decay_t<decltype(out)>, double>)
        out = std::stod(it->second);
      else
        out = static_cast<std::decay_t<decltype(out)>>(std::stoull(it->second));
    };
    get("vocab_size", c.vocab_size);
    get("d_model", c.d_model);
    get("n_heads", c.n_heads);
    get("n_enc_layers", c.n_enc_layers);
    get("n_dec_layers", c.n_dec_layers);
    get("ffn_kernel", c.ffn_kernel);
    get("predictor_kernel", c.predictor_kernel);
    get("predictor_hidden", c.predictor_hidden);
    get("n_mels", c.n_mels);
    get("d_spk", c.d_spk);
    get("w_mel", c.loss_weights.mel);
    get("w_pitch", c.loss_weights.pitch);
    get("w_duration", c.loss_weights.duration);
    get("w_energy", c.loss_weights.energy);
    get("seed", c.seed);
    if (auto it = kv.find("conditioning"); it != kv.end())
      c.conditioning = conditioning_from_string(it->second);
    c.validate();
    return c;
  }

  // Keys accepted from run-config files; anything else is rejected upstream.
  static const std::vector<std::string>& known_keys() {
    static const std::vector<std::string> keys = {
        "vocab_size", "d_model",  "n_heads", "n_enc_layers",     "n_dec_layers",
        "ffn_kernel", "predictor_kernel",    "predictor_hidden", "n_mels",
        "d_spk",      "conditioning",        "w_mel",            "w_pitch",
        "w_duration", "w_energy", "seed"};
    return keys;
  }
};

// Frozen lookup of externally computed speaker embeddings. Rows are appended
// when a new speaker is adapted and never mutated; the table is invisible to
// the optimizer.
class SpeakerTable {
 public:
  explicit SpeakerTable(std::size_t d_spk) : d_spk_(d_spk) {
    if (d_spk < 1) throw std::invalid_argument("speaker table: d_spk must be >= 1");
  }

  static SpeakerTable from_speaker_file(const SpeakerFile& f) {
    SpeakerTable t(f.d_spk);
    for (std::size_t i = 0; i < f.rows.size(); ++i) t.append(f.ids[i], f.rows[i]);
    return t;
  }

  static SpeakerTable from_file(const std::string& path) {
    return from_speaker_file(read_spk(path));
  }

  std::size_t append(const std::string& id, std::vector<double> row) {
    if (row.size() != d_spk_)
      throw std::invalid_argument("speaker table: embedding dim mismatch for " + id);
    if (find(id)) throw std::invalid_argument("speaker table: duplicate id " + id);
    // ids end up in manifest and checkpoint config lines
    if (id.empty() || id.find_first_of(",|\n=") != std::string::npos)
      throw std::invalid_argument("speaker table: unsupported characters in id " + id);
    rows_.push_back(std::move(row));
    ids_.push_back(id);
    return rows_.size() - 1;
  }

  std::size_t size() const { return rows_.size(); }
  std::size_t dim() const { return d_spk_; }

  const std::vector<double>& row(std::size_t i) const {
    if (i >= rows_.size()) throw std::out_of_range("speaker table: row " + std::to_string(i));
    return rows_[i];
  }

  const std::string& id(std::size_t i) const {
    if (i >= ids_.size()) throw std::out_of_range("speaker table: id " + std::to_string(i));
    return ids_[i];
  }

  const std::vector<std::string>& ids() const { return ids_; }

  std::optional<std::size_t> find(const std::string& id) const {
    for (std::size_t i = 0; i < ids_.size(); ++i)
      if (ids_[i] == id) return i;
    return std::nullopt;
  }

  std::size_t index_of(const std::string& id) const {
    if (auto i = find(id)) return *i;
    throw std::invalid_argument("speaker table: unknown speaker id " + id);
  }

  SpeakerFile to_file() const {
    SpeakerFile f;
    f.d_spk = d_spk_;
    f.rows = rows_;
    f.ids = ids_;
    return f;
  }

 private:
  std::size_t d_spk_;
  std::vector<std::vector<double>> rows_;
  std::vector<std::string> ids_;
};

// One training example: token ids, per-token supervision, target features.
struct Utterance {
  std::vector<std::size_t> tokens;
  TokenSupervision sup;
  Tensor mel;  // [F x n_mels]
  std::size_t speaker_index = 0;
  std::string speaker_id;
  std::string relpath;
};

struct LossValues {
  double mel = 0, pitch = 0, duration = 0, energy = 0, total = 0;
};

struct TrainForward {
  Value total;  // scalar node in the caller's graph
  LossValues values;
};

struct InferResult {
  Tensor mel;
  std::vector<double> pitch;
  std::vector<double> energy;
  std::vector<double> duration_raw;
  std::vector<std::uint32_t> durations;
};

// Sinusoidal position encoding, [len x d].
inline Tensor positional_encoding(std::size_t len, std::size_t d) {
  Tensor pe = Tensor::zeros({len, d});
  for (std::size_t t = 0; t < len; ++t)
    for (std::size_t i = 0; 2 * i < d; ++i) {
      const double w = std::exp(-std::log(10000.0) * (2.0 * i / static_cast<double>(d)));
      pe.data[t * d + 2 * i] = std::sin(static_cast<double>(t) * w);
      if (2 * i + 1 < d) pe.data[t * d + 2 * i + 1] = std::cos(static_cast<double>(t) * w);
    }
  return pe;
}

// x + broadcast(e . W), the bias-free conditioning add. With e == 0 the added
// row is exactly zero, so the output carries no trace of the speaker pathway.
inline Tensor inject_conditioning(const Tensor& x, const std::vector<double>& e,
                                  const Tensor& proj_w) {
  if (proj_w.rank() != 2 || proj_w.rows() != e.size() || x.rank() != 2 ||
      x.cols() != proj_w.cols())
    throw std::invalid_argument("inject_conditioning: dimension mismatch");
  const std::size_t D = x.cols();
  std::vector<double> row(D, 0.0);
  for (std::size_t k = 0; k < e.size(); ++k)
    for (std::size_t c = 0; c < D; ++c) row[c] += e[k] * proj_w.data[k * D + c];
  Tensor out(x.dims, x.data);
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < D; ++c) out.data[r * D + c] += row[c];
  return out;
}

// FastPitch-style acoustic model: FFTr encoder -> pitch/duration/energy
// predictors -> length regulation by repeated duplication -> FFTr decoder.
// Each FFTr layer is pre-norm self-attention plus a 1-D convolutional
// feed-forward, both with residual connections.
class AcousticModel {
 public:
  enum class Head { kPitch, kDuration, kEnergy };

  AcousticModel(ModelConfig cfg, SpeakerTable speakers)
      : cfg_(std::move(cfg)), speakers_(std::move(speakers)) {
    cfg_.validate();
    if (speakers_.dim() != cfg_.d_spk)
      throw std::invalid_argument("speaker table dim does not match model d_spk");
    build_parameters();
  }

  AcousticModel(AcousticModel&&) = default;
  AcousticModel& operator=(AcousticModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  SpeakerTable& speakers() { return speakers_; }
  const SpeakerTable& speakers() const { return speakers_; }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    out.reserve(params_.size());
    for (auto& p : params_) out.push_back(p.get());
    return out;
  }

  Parameter& parameter(const std::string& name) {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::invalid_argument("no parameter named " + name);
    return *it->second;
  }

  // Overwrites all parameter values from named tensors; the name/shape sets
  // must match exactly. Used when loading checkpoints.
  void load_parameter_values(const std::map<std::string, Tensor>& values) {
    if (values.size() != params_.size())
      throw FormatError("checkpoint parameter count mismatch: file has " +
                        std::to_string(values.size()) + ", model has " +
                        std::to_string(params_.size()));
    for (auto& p : params_) {
      auto it = values.find(p->name);
      if (it == values.end()) throw FormatError("checkpoint missing parameter " + p->name);
      if (it->second.dims != p->dims)
        throw FormatError("checkpoint shape mismatch for " + p->name);
      p->value = it->second.data;
    }
  }

  // ---- building blocks (spec surface) ----

  Tensor encode(const std::vector<std::size_t>& tokens,
                const std::vector<double>* e = nullptr) const {
    Graph g;
    Binder bind(g, *this, false);
    Value h = encode_g(g, bind, tokens, embedding_value(g, e), true);
    return g.tensor(h);
  }

  std::vector<double> predict(Head head, const Tensor& hidden,
                              const std::vector<double>* e = nullptr) const {
    if (hidden.rank() != 2 || hidden.cols() != cfg_.d_model)
      throw std::invalid_argument("predict: hidden must be [T x d_model]");
    Graph g;
    Binder bind(g, *this, false);
    Value h = g.constant(hidden);
    Value in = maybe_inject(g, bind, h, embedding_value(g, e), ConditioningPoint::kPredictors, true);
    Value out = predictor_g(g, bind, predictor_params(head), in);
    return g.tensor(out).data;  // [T x 1] flattened
  }

  // Row t repeated durations[t] times; zero-duration tokens emit nothing.
  static Tensor length_regulate(const Tensor& x, const std::vector<std::uint32_t>& durations) {
    if (x.rank() != 2 || durations.size() != x.rows())
      throw std::invalid_argument("length_regulate: durations length must equal row count");
    std::vector<std::size_t> ids = regulation_ids(durations);
    Tensor out = Tensor::zeros({ids.size(), x.cols()});
    for (std::size_t t = 0; t < ids.size(); ++t)
      std::copy_n(&x.data[ids[t] * x.cols()], x.cols(), &out.data[t * x.cols()]);
    return out;
  }

  Tensor decode(const Tensor& u, const std::vector<double>* e = nullptr) const {
    if (u.rank() != 2 || u.cols() != cfg_.d_model)
      throw std::invalid_argument("decode: input must be [F x d_model]");
    if (u.rows() == 0) throw std::invalid_argument("decode: zero frames");
    Graph g;
    Binder bind(g, *this, false);
    Value mel = decode_g(g, bind, g.constant(u), embedding_value(g, e), true);
    return g.tensor(mel);
  }

  // ---- training forward (teacher forcing) ----

  TrainForward forward_train(Graph& g, const Utterance& utt) const {
    validate_utterance(utt);
    Binder bind(g, *this, true);
    return forward_train_impl(g, bind, utt);
  }

  // Forward-only loss evaluation (no gradient bookkeeping). This is what the
  // finite-difference checks perturb.
  LossValues training_loss(const Utterance& utt) const {
    validate_utterance(utt);
    Graph g;
    Binder bind(g, *this, false);
    return forward_train_impl(g, bind, utt).values;
  }

  // ---- inference ----

  InferResult infer_traces(const std::vector<std::size_t>& tokens,
                           const std::vector<double>& e) const {
    if (e.size() != cfg_.d_spk)
      throw std::invalid_argument("infer: embedding dim mismatch");
    return infer_impl(tokens, &e, true);
  }

  Tensor infer(const std::vector<std::size_t>& tokens, const std::vector<double>& e) const {
    return infer_traces(tokens, e).mel;
  }

  Tensor infer_speaker(const std::vector<std::size_t>& tokens, const std::string& speaker_id) const {
    return infer(tokens, speakers_.row(speakers_.index_of(speaker_id)));
  }

  // The anonymous voice: the speaker embedding multiplied by zero.
  Tensor synthesize_anonymous(const std::vector<std::size_t>& tokens) const {
    return infer(tokens, std::vector<double>(cfg_.d_spk, 0.0));
  }

  // Reference path with the injection op removed entirely; used to check that
  // a zero embedding is indistinguishable from no conditioning at all.
  InferResult infer_traces_unconditioned(const std::vector<std::size_t>& tokens) const {
    return infer_impl(tokens, nullptr, false);
  }

  Tensor infer_unconditioned(const std::vector<std::size_t>& tokens) const {
    return infer_traces_unconditioned(tokens).mel;
  }

  static std::vector<std::size_t> regulation_ids(const std::vector<std::uint32_t>& durations) {
    std::vector<std::size_t> ids;
    for (std::size_t t = 0; t < durations.size(); ++t)
      for (std::uint32_t i = 0; i < durations[t]; ++i) ids.push_back(t);
    return ids;
  }

 private:
  struct LayerNormP {
    Parameter* gain;
    Parameter* bias;
  };
  struct AttnP {
    Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
  };
  struct FftLayerP {
    LayerNormP ln1;
    AttnP attn;
    LayerNormP ln2;
    Parameter *k1, *b1, *k2, *b2;
  };
  struct StackP {
    std::vector<FftLayerP> layers;
    LayerNormP final_ln;
  };
  struct PredictorP {
    Parameter *k1, *b1;
    LayerNormP ln1;
    Parameter *k2, *b2;
    LayerNormP ln2;
    Parameter *wout, *bout;
  };

  // Binds persistent parameters into a graph once each, as gradient leaves for
  // training or plain constants for inference.
  class Binder {
   public:
    Binder(Graph& g, const AcousticModel& m, bool with_grad)
        : g_(g), with_grad_(with_grad) {
      (void)m;
    }

    Value operator()(Parameter* p) {
      auto it = cache_.find(p);
      if (it != cache_.end()) return it->second;
      Value v = with_grad_ ? g_.param(*p) : g_.constant(Tensor(p->dims, p->value));
      cache_.emplace(p, v);
      return v;
    }

   private:
    Graph& g_;
    bool with_grad_;
    std::unordered_map<Parameter*, Value> cache_;
  };

  static constexpr double kLnEps = 1e-6;

  void build_parameters() {
    Rng rng = derived_rng(cfg_.seed, "model-init");
    const std::size_t d = cfg_.d_model;

    add_matrix(rng, "embed.tokens", cfg_.vocab_size, d, 0.5 / std::sqrt(static_cast<double>(d)));
    add_xavier(rng, "proj.speaker.w", cfg_.d_spk, d);
    add_xavier(rng, "proj.pitch.w", 1, d);
    add_xavier(rng, "proj.energy.w", 1, d);

    enc_ = build_stack(rng, "enc", cfg_.n_enc_layers);
    pitch_pred_ = build_predictor(rng, "pred.pitch");
    duration_pred_ = build_predictor(rng, "pred.duration");
    energy_pred_ = build_predictor(rng, "pred.energy");
    dec_ = build_stack(rng, "dec", cfg_.n_dec_layers);
    add_xavier(rng, "dec.melout.w", d, cfg_.n_mels);
    add_zeros("dec.melout.b", {1, cfg_.n_mels});
  }

  StackP build_stack(Rng& rng, const std::string& prefix, std::size_t n_layers) {
    StackP s;
    const std::size_t d = cfg_.d_model;
    const std::size_t dff = 2 * d;
    for (std::size_t l = 0; l < n_layers; ++l) {
      const std::string lp = prefix + ".l" + std::to_string(l);
      FftLayerP layer;
      layer.ln1 = add_layer_norm(lp + ".ln1", d);
      layer.attn.wq = add_xavier(rng, lp + ".attn.wq", d, d);
      layer.attn.bq = add_zeros(lp + ".attn.bq", {1, d});
      layer.attn.wk = add_xavier(rng, lp + ".attn.wk", d, d);
      layer.attn.bk = add_zeros(lp + ".attn.bk", {1, d});
      layer.attn.wv = add_xavier(rng, lp + ".attn.wv", d, d);
      layer.attn.bv = add_zeros(lp + ".attn.bv", {1, d});
      layer.attn.wo = add_xavier(rng, lp + ".attn.wo", d, d);
      layer.attn.bo = add_zeros(lp + ".attn.bo", {1, d});
      layer.ln2 = add_layer_norm(lp + ".ln2", d);
      layer.k1 = add_conv(rng, lp + ".ffn.k1", cfg_.ffn_kernel, d, dff);
      layer.b1 = add_zeros(lp + ".ffn.b1", {dff});
      layer.k2 = add_conv(rng, lp + ".ffn.k2", cfg_.ffn_kernel, dff, d);
      layer.b2 = add_zeros(lp + ".ffn.b2", {d});
      s.layers.push_back(layer);
    }
    s.final_ln = add_layer_norm(prefix + ".final_ln", d);
    return s;
  }

  PredictorP build_predictor(Rng& rng, const std::string& prefix) {
    PredictorP p;
    const std::size_t d = cfg_.d_model;
    const std::size_t h = cfg_.predictor_hidden;
    p.k1 = add_conv(rng, prefix + ".k1", cfg_.predictor_kernel, d, h);
    p.b1 = add_zeros(prefix + ".b1", {h});
    p.ln1 = add_layer_norm(prefix + ".ln1", h);
    p.k2 = add_conv(rng, prefix + ".k2", cfg_.predictor_kernel, h, h);
    p.b2 = add_zeros(prefix + ".b2", {h});
    p.ln2 = add_layer_norm(prefix + ".ln2", h);
    p.wout = add_xavier(rng, prefix + ".out.w", h, 1);
    p.bout = add_zeros(prefix + ".out.b", {1, 1});
    return p;
  }

  Parameter* add_param(std::string name, Shape dims, std::vector<double> v) {
    params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(dims), std::move(v)));
    Parameter* p = params_.back().get();
    by_name_[p->name] = p;
    return p;
  }

  Parameter* add_matrix(Rng& rng, std::string name, std::size_t r, std::size_t c, double scale) {
    std::vector<double> v(r * c);
    for (auto& x : v) x = rng.uniform(-scale, scale);
    return add_param(std::move(name), {r, c}, std::move(v));
  }

  Parameter* add_xavier(Rng& rng, std::string name, std::size_t fan_in, std::size_t fan_out) {
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return add_matrix(rng, std::move(name), fan_in, fan_out, a);
  }

  Parameter* add_conv(Rng& rng, std::string name, std::size_t k, std::size_t ci, std::size_t co) {
    const double a = std::sqrt(6.0 / static_cast<double>(k * ci + k * co));
    std::vector<double> v(k * ci * co);
    for (auto& x : v) x = rng.uniform(-a, a);
    return add_param(std::move(name), {k, ci, co}, std::move(v));
  }

  Parameter* add_zeros(std::string name, Shape dims) {
    std::size_t n = shape_size(dims);
    return add_param(std::move(name), std::move(dims), std::vector<double>(n, 0.0));
  }

  LayerNormP add_layer_norm(const std::string& prefix, std::size_t d) {
    LayerNormP ln;
    ln.gain = add_param(prefix + ".g", {d}, std::vector<double>(d, 1.0));
    ln.bias = add_zeros(prefix + ".b", {d});
    return ln;
  }

  const PredictorP& predictor_params(Head head) const {
    switch (head) {
      case Head::kPitch: return pitch_pred_;
      case Head::kDuration: return duration_pred_;
      case Head::kEnergy: return energy_pred_;
    }
    throw std::logic_error("bad predictor head");
  }

  // ---- graph builders ----

  std::optional<Value> embedding_value(Graph& g, const std::vector<double>* e) const {
    if (!e) return std::nullopt;
    if (e->size() != cfg_.d_spk) throw std::invalid_argument("embedding dim mismatch");
    return g.constant(Tensor::row_vector(*e));
  }

  Value spk_row(Graph& g, Binder& bind, Value e_row) const {
    return g.matmul(e_row, bind(&parameter_const("proj.speaker.w")));
  }

  Parameter& parameter_const(const char* name) const {
    auto it = by_name_.find(name);
    if (it == by_name_.end()) throw std::logic_error(std::string("missing parameter ") + name);
    return *it->second;
  }

  Value maybe_inject(Graph& g, Binder& bind, Value x, const std::optional<Value>& e_row,
                     ConditioningPoint site, bool enabled) const {
    if (!enabled || !e_row || cfg_.conditioning != site) return x;
    return g.add_row(x, spk_row(g, bind, *e_row));
  }

  Value attention_g(Graph& g, Binder& bind, const AttnP& a, Value x) const {
    const std::size_t d = cfg_.d_model;
    const std::size_t dh = d / cfg_.n_heads;
    Value q = g.add_row(g.matmul(x, bind(a.wq)), bind(a.bq));
    Value k = g.add_row(g.matmul(x, bind(a.wk)), bind(a.bk));
    Value v = g.add_row(g.matmul(x, bind(a.wv)), bind(a.bv));
    std::vector<Value> heads;
    for (std::size_t h = 0; h < cfg_.n_heads; ++h) {
      Value qh = g.slice_cols(q, h * dh, (h + 1) * dh);
      Value kh = g.slice_cols(k, h * dh, (h + 1) * dh);
      Value vh = g.slice_cols(v, h * dh, (h + 1) * dh);
      Value scores = g.scale(g.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
      heads.push_back(g.matmul(g.softmax_rows(scores), vh));
    }
    Value ctx = cfg_.n_heads == 1 ? heads[0] : g.concat_cols(heads);
    return g.add_row(g.matmul(ctx, bind(a.wo)), bind(a.bo));
  }

  Value fft_layer_g(Graph& g, Binder& bind, const FftLayerP& l, Value x) const {
    Value a = g.layer_norm(x, bind(l.ln1.gain), bind(l.ln1.bias), kLnEps);
    x = g.add(x, attention_g(g, bind, l.attn, a));
    Value b = g.layer_norm(x, bind(l.ln2.gain), bind(l.ln2.bias), kLnEps);
    Value f = g.conv1d_same(b, bind(l.k1), bind(l.b1));
    f = g.relu(f);
    f = g.conv1d_same(f, bind(l.k2), bind(l.b2));
    return g.add(x, f);
  }

  Value fft_stack_g(Graph& g, Binder& bind, const StackP& s, Value x) const {
    for (const auto& layer : s.layers) x = fft_layer_g(g, bind, layer, x);
    return g.layer_norm(x, bind(s.final_ln.gain), bind(s.final_ln.bias), kLnEps);
  }

  Value encode_g(Graph& g, Binder& bind, const std::vector<std::size_t>& tokens,
                 const std::optional<Value>& e_row, bool inject_enabled) const {
    if (tokens.empty()) throw std::invalid_argument("encode: empty token sequence");
    Value x = g.embedding_lookup(bind(&parameter_const("embed.tokens")), tokens);
    x = g.add(x, g.constant(positional_encoding(tokens.size(), cfg_.d_model)));
    x = maybe_inject(g, bind, x, e_row, ConditioningPoint::kEncoder, inject_enabled);
    return fft_stack_g(g, bind, enc_, x);
  }

  // Two (conv -> ReLU -> layer_norm) stages, then a per-token linear map to 1.
  Value predictor_g(Graph& g, Binder& bind, const PredictorP& p, Value x) const {
    Value s1 = g.conv1d_same(x, bind(p.k1), bind(p.b1));
    s1 = g.layer_norm(g.relu(s1), bind(p.ln1.gain), bind(p.ln1.bias), kLnEps);
    Value s2 = g.conv1d_same(s1, bind(p.k2), bind(p.b2));
    s2 = g.layer_norm(g.relu(s2), bind(p.ln2.gain), bind(p.ln2.bias), kLnEps);
    return g.add_row(g.matmul(s2, bind(p.wout)), bind(p.bout));
  }

  Value decode_g(Graph& g, Binder& bind, Value u, const std::optional<Value>& e_row,
                 bool inject_enabled) const {
    const std::size_t frames = g.tensor(u).rows();
    Value x = g.add(u, g.constant(positional_encoding(frames, cfg_.d_model)));
    x = maybe_inject(g, bind, x, e_row, ConditioningPoint::kDecoder, inject_enabled);
    x = fft_stack_g(g, bind, dec_, x);
    return g.add_row(g.matmul(x, bind(&parameter_const("dec.melout.w"))),
                     bind(&parameter_const("dec.melout.b")));
  }

  void validate_utterance(const Utterance& utt) const {
    if (utt.tokens.empty()) throw std::invalid_argument("forward_train: empty token sequence");
    utt.sup.validate();
    if (utt.sup.tokens() != utt.tokens.size())
      throw std::invalid_argument("forward_train: supervision length mismatch");
    if (utt.mel.rank() != 2 || utt.mel.cols() != cfg_.n_mels)
      throw std::invalid_argument("forward_train: mel feature dim mismatch");
    if (utt.sup.total_frames() != utt.mel.rows())
      throw std::invalid_argument("forward_train: duration sum " +
                                  std::to_string(utt.sup.total_frames()) +
                                  " != mel frame count " + std::to_string(utt.mel.rows()));
    if (utt.speaker_index >= speakers_.size())
      throw std::invalid_argument("forward_train: speaker index out of range");
  }

  TrainForward forward_train_impl(Graph& g, Binder& bind, const Utterance& utt) const {
    const std::size_t T = utt.tokens.size();
    std::optional<Value> e_row =
        g.constant(Tensor::row_vector(speakers_.row(utt.speaker_index)));

    Value h = encode_g(g, bind, utt.tokens, e_row, true);
    Value pred_in = maybe_inject(g, bind, h, e_row, ConditioningPoint::kPredictors, true);
    Value pitch_hat = predictor_g(g, bind, pitch_pred_, pred_in);
    Value dur_hat = predictor_g(g, bind, duration_pred_, pred_in);
    Value energy_hat = predictor_g(g, bind, energy_pred_, pred_in);

    // Teacher forcing: ground-truth pitch/energy are projected into the hidden
    // sequence; ground-truth durations drive the length regulator.
    Value pitch_gt = g.constant(Tensor::column_vector(utt.sup.pitch));
    Value energy_gt = g.constant(Tensor::column_vector(utt.sup.energy));
    Value h2 = g.add(h, g.matmul(pitch_gt, bind(&parameter_const("proj.pitch.w"))));
    h2 = g.add(h2, g.matmul(energy_gt, bind(&parameter_const("proj.energy.w"))));
    Value u = g.gather_rows(h2, regulation_ids(utt.sup.durations));
    Value mel = decode_g(g, bind, u, e_row, true);

    std::vector<double> dur_target(T);
    for (std::size_t t = 0; t < T; ++t) dur_target[t] = static_cast<double>(utt.sup.durations[t]);

    Value mel_loss = g.mse(mel, g.constant(utt.mel));
    Value pitch_loss = g.mse(pitch_hat, pitch_gt);
    Value dur_loss = g.mse(dur_hat, g.constant(Tensor::column_vector(dur_target)));
    Value energy_loss = g.mse(energy_hat, energy_gt);

    const LossWeights& w = cfg_.loss_weights;
    Value total = g.add(g.add(g.scale(mel_loss, w.mel), g.scale(pitch_loss, w.pitch)),
                        g.add(g.scale(dur_loss, w.duration), g.scale(energy_loss, w.energy)));

    TrainForward out;
    out.total = total;
    out.values.mel = g.tensor(mel_loss).data[0];
    out.values.pitch = g.tensor(pitch_loss).data[0];
    out.values.duration = g.tensor(dur_loss).data[0];
    out.values.energy = g.tensor(energy_loss).data[0];
    out.values.total = g.tensor(total).data[0];
    return out;
  }

  InferResult infer_impl(const std::vector<std::size_t>& tokens, const std::vector<double>* e,
                         bool inject_enabled) const {
    Graph g;
    Binder bind(g, *this, false);
    std::optional<Value> e_row = embedding_value(g, e);

    Value h = encode_g(g, bind, tokens, e_row, inject_enabled);
    Value pred_in =
        maybe_inject(g, bind, h, e_row, ConditioningPoint::kPredictors, inject_enabled);
    Value pitch_hat = predictor_g(g, bind, pitch_pred_, pred_in);
    Value dur_hat = predictor_g(g, bind, duration_pred_, pred_in);
    Value energy_hat = predictor_g(g, bind, energy_pred_, pred_in);

    InferResult res;
    res.pitch = g.tensor(pitch_hat).data;
    res.energy = g.tensor(energy_hat).data;
    res.duration_raw = g.tensor(dur_hat).data;
    res.durations.resize(res.duration_raw.size());
    std::size_t total = 0;
    for (std::size_t t = 0; t < res.duration_raw.size(); ++t) {
      const double d = std::max(0.0, res.duration_raw[t]);
      res.durations[t] = static_cast<std::uint32_t>(std::llround(d));
      total += res.durations[t];
    }
    if (total == 0)
      throw std::runtime_error("infer: all predicted durations rounded to zero");

    Value h2 = g.add(h, g.matmul(pitch_hat, bind(&parameter_const("proj.pitch.w"))));
    h2 = g.add(h2, g.matmul(energy_hat, bind(&parameter_const("proj.energy.w"))));
    Value u = g.gather_rows(h2, regulation_ids(res.durations));
    Value mel = decode_g(g, bind, u, e_row, inject_enabled);
    res.mel = g.tensor(mel);
    return res;
  }

  ModelConfig cfg_;
  SpeakerTable speakers_;
  std::vector<std::unique_ptr<Parameter>> params_;
  std::map<std::string, Parameter*> by_name_;
  StackP enc_;
  PredictorP pitch_pred_;
  PredictorP duration_pred_;
  PredictorP energy_pred_;
  StackP dec_;
};

}  // namespace tinytts
