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
#include <string>
#include <vector>

#include "tinytts/model.hpp"
#include "tinytts/rng.hpp"

namespace tinytts {

// End-to-end gradient verification: reverse-mode gradients of the total
// training loss for every trainable parameter against central finite
// differences (forward evaluations only).

struct GradCheckReport {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double max_rel_err = 0;
  bool ok() const { return checked > 0 && failures == 0; }
};

inline constexpr double kGradCheckStep = 1e-6;
inline constexpr double kGradCheckRelTol = 1e-5;
inline constexpr double kGradCheckAbsFloor = 1e-8;

// A small random utterance consistent with the model dimensions.
inline Utterance gradcheck_utterance(const ModelConfig& cfg, std::uint64_t data_seed,
                                     std::size_t n_tokens = 3) {
  Rng rng = derived_rng(data_seed, "gradcheck-data");
  Utterance utt;
  for (std::size_t t = 0; t < n_tokens; ++t)
    utt.tokens.push_back(static_cast<std::size_t>(rng.below(cfg.vocab_size)));
  std::size_t frames = 0;
  for (std::size_t t = 0; t < n_tokens; ++t) {
    const std::uint32_t d = 1 + static_cast<std::uint32_t>(rng.below(3));
    utt.sup.durations.push_back(d);
    frames += d;
  }
  utt.sup.pitch = rng.gauss_vec(n_tokens);
  utt.sup.energy = rng.gauss_vec(n_tokens, 0.5);
  utt.mel = Tensor({frames, cfg.n_mels}, rng.gauss_vec(frames * cfg.n_mels));
  utt.speaker_index = 0;
  utt.speaker_id = "gc0";
  return utt;
}

inline AcousticModel gradcheck_model(const ModelConfig& cfg, std::uint64_t data_seed) {
  Rng rng = derived_rng(data_seed, "gradcheck-speaker");
  std::vector<double> e = rng.gauss_vec(cfg.d_spk);
  double n = 0;
  for (double v : e) n += v * v;
  n = std::sqrt(n);
  for (auto& v : e) v /= n;
  SpeakerTable table(cfg.d_spk);
  table.append("gc0", std::move(e));
  return AcousticModel(cfg, std::move(table));
}

inline GradCheckReport gradcheck(AcousticModel& model, const Utterance& utt,
                                 double rel_tol = kGradCheckRelTol,
                                 double abs_floor = kGradCheckAbsFloor) {
  for (Parameter* p : model.parameters()) p->zero_grad();
  {
    Graph g;
    TrainForward f = model.forward_train(g, utt);
    g.backward(f.total);
  }
  GradCheckReport rep;
  for (Parameter* p : model.parameters()) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double orig = p->value[i];
      p->value[i] = orig + kGradCheckStep;
      const double fp = model.training_loss(utt).total;
      p->value[i] = orig - kGradCheckStep;
      const double fm = model.training_loss(utt).total;
      p->value[i] = orig;
      const double fd = (fp - fm) / (2.0 * kGradCheckStep);
      const double ad = p->grad[i];
      ++rep.checked;
      const double err = std::abs(fd - ad);
      const double denom = std::max(std::abs(fd), std::abs(ad));
      if (err > std::max(abs_floor, rel_tol * denom)) ++rep.failures;
      // Relative error is only meaningful where the gradient is well above
      // the absolute floor.
      if (denom >= 1e-3) rep.max_rel_err = std::max(rep.max_rel_err, err / denom);
    }
  }
  return rep;
}

inline GradCheckReport gradcheck_config(ModelConfig cfg, std::uint64_t data_seed) {
  AcousticModel model = gradcheck_model(cfg, data_seed);
  return gradcheck(model, gradcheck_utterance(cfg, data_seed));
}

// The tiny configuration used by the verification harness.
inline ModelConfig gradcheck_default_config(ConditioningPoint point, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.vocab_size = 6;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.n_enc_layers = 1;
  cfg.n_dec_layers = 1;
  cfg.predictor_hidden = 12;
  cfg.n_mels = 8;
  cfg.d_spk = 8;
  cfg.conditioning = point;
  cfg.seed = seed;
  return cfg;
}

}  // namespace tinytts
