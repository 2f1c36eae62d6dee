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

#include <functional>
#include <string>
#include <vector>

#include "tinytts/corpus.hpp"
#include "tinytts/metrics.hpp"
#include "tinytts/model.hpp"

namespace tinytts {

struct UtteranceEval {
  Rates rates;
  double cos_sim = 0;
};

struct TtsEvaluation {
  EvalRow row;  // per-utterance means
  std::vector<UtteranceEval> per_utterance;
};

// Core evaluation loop over a feature source: decode tokens with the ASR
// oracle and score against the reference transcription; embed the features
// and score against the reference speaker embedding. Rates are averaged
// per-utterance.
inline TtsEvaluation evaluate_features(
    const std::function<Tensor(const Utterance&)>& features, const std::vector<Utterance>& utts,
    const SpeakerTable& reference_table, const CorpusOracle& oracle, const ToyEmbedder& embedder,
    const std::string& label) {
  if (utts.empty()) throw std::invalid_argument("evaluate: no utterances");
  TtsEvaluation out;
  out.row.config = label;
  for (const Utterance& utt : utts) {
    const Tensor mel = features(utt);
    UtteranceEval ue;
    ue.rates = error_rates(utt.tokens, oracle.oracle_asr(mel).tokens);
    ue.cos_sim = cosine_similarity(embedder.embed(mel),
                                   reference_table.row(reference_table.index_of(utt.speaker_id)));
    out.row.wer += ue.rates.wer;
    out.row.mer += ue.rates.mer;
    out.row.wil += ue.rates.wil;
    out.row.wip += ue.rates.wip;
    out.row.cos_sim += ue.cos_sim;
    out.per_utterance.push_back(ue);
  }
  const double n = static_cast<double>(utts.size());
  out.row.wer /= n;
  out.row.mer /= n;
  out.row.wil /= n;
  out.row.wip /= n;
  out.row.cos_sim /= n;
  return out;
}

// Synthesize each utterance's text with its own speaker embedding and score
// against the reference transcription and reference speaker embedding.
inline TtsEvaluation evaluate_tts(const AcousticModel& model, const std::vector<Utterance>& utts,
                                  const CorpusOracle& oracle, const ToyEmbedder& embedder,
                                  const std::string& label = "") {
  const SpeakerTable& table = model.speakers();
  return evaluate_features(
      [&model, &table](const Utterance& u) {
        return model.infer(u.tokens, table.row(table.index_of(u.speaker_id)));
      },
      utts, table, oracle, embedder,
      label.empty() ? to_string(model.config().conditioning) : label);
}

struct AnonEvaluation {
  double mean_similarity = 0;  // over (phrase, speaker) pairs
  double max_similarity = -1;
  Rates mean_rates;  // intelligibility of the anonymous voice
  std::vector<double> similarities;
  EvalReport report;  // rows: anonymous(mean), anonymous(max)
};

// Synthesize each phrase with the zero speaker embedding and compare the
// result against every training speaker's reference embedding.
inline AnonEvaluation evaluate_anonymous(const AcousticModel& model,
                                         const std::vector<std::vector<std::size_t>>& phrases,
                                         const CorpusOracle& oracle, const ToyEmbedder& embedder) {
  if (phrases.empty()) throw std::invalid_argument("evaluate_anonymous: no phrases");
  const SpeakerTable& table = model.speakers();
  if (table.size() == 0) throw std::invalid_argument("evaluate_anonymous: empty speaker table");
  AnonEvaluation out;
  for (const auto& phrase : phrases) {
    const Tensor mel = model.synthesize_anonymous(phrase);
    const Rates r = error_rates(phrase, oracle.oracle_asr(mel).tokens);
    out.mean_rates.wer += r.wer;
    out.mean_rates.mer += r.mer;
    out.mean_rates.wil += r.wil;
    out.mean_rates.wip += r.wip;
    const std::vector<double> e = embedder.embed(mel);
    for (std::size_t s = 0; s < table.size(); ++s) {
      const double sim = cosine_similarity(e, table.row(s));
      out.similarities.push_back(sim);
      out.mean_similarity += sim;
      out.max_similarity = std::max(out.max_similarity, sim);
    }
  }
  const double np = static_cast<double>(phrases.size());
  out.mean_rates.wer /= np;
  out.mean_rates.mer /= np;
  out.mean_rates.wil /= np;
  out.mean_rates.wip /= np;
  out.mean_similarity /= static_cast<double>(out.similarities.size());

  EvalRow mean_row{"anonymous(mean)", out.mean_rates.wer, out.mean_rates.mer, out.mean_rates.wil,
                   out.mean_rates.wip, out.mean_similarity};
  EvalRow max_row = mean_row;
  max_row.config = "anonymous(max)";
  max_row.cos_sim = out.max_similarity;
  out.report.rows = {mean_row, max_row};
  return out;
}

}  // namespace tinytts
