// Copyright 2026 The cmdl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Evaluation of the distilled student against the frozen teacher:
// first-token agreement, label log-prob classification scored with
// class-weighted F1 / accuracy, and paired-bootstrap significance tests.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmdl/distill.hpp"

namespace cmdl {

struct EvalRecord {
  std::string id;
  int teacher_argmax = -1;
  int student_argmax = -1;
  std::vector<double> label_scores;
  int gold_label = -1;
  double metric = 0.0;
};

struct BootstrapReport {
  double observed_diff = 0.0;
  double p_value = 1.0;
  double ci_lo = 0.0;
  double ci_hi = 0.0;
  size_t resamples = 0;
  uint64_t seed = 0;
};

double accuracy(std::span<const int> preds, std::span<const int> golds);

// Per-class F1 (0 when undefined) averaged with weights proportional to
// gold-class support. `labels` is the admissible class set.
double weighted_f1(std::span<const int> preds, std::span<const int> golds,
                   std::span<const int> labels);

// Paired bootstrap over matched score pairs. Pairs are put into a canonical
// sorted order before resampling, so the report is invariant to jointly
// permuting the inputs. Two-sided p by the min-doubling convention;
// percentile CI with linear interpolation.
BootstrapReport paired_bootstrap(std::span<const double> scores_a, std::span<const double> scores_b,
                                 size_t n_resamples, uint64_t seed);

// First-next-token argmax of the transcript path.
template <typename T>
int first_token_argmax_text(const ToyLM<T>& lm, std::span<const int> body,
                            const PromptTemplate& prompt) {
  std::vector<int> tokens;
  tokens.insert(tokens.end(), prompt.prefix.begin(), prompt.prefix.end());
  tokens.insert(tokens.end(), body.begin(), body.end());
  tokens.insert(tokens.end(), prompt.suffix.begin(), prompt.suffix.end());
  auto hidden = lm.forward_text(std::span<const int>(tokens));
  auto logits = lm.next_token_logits(reshape(slice_rows(hidden, hidden.rows() - 1, 1), {lm.width}));
  return static_cast<int>(argmax(logits.data()));
}

// First-next-token argmax of the audio path through the same frozen LM.
template <typename T>
int first_token_argmax_audio(const ToyLM<T>& lm, const StudentPipeline<T>& student,
                             const Tensor<T>& mel, const PromptTemplate& prompt) {
  auto t_audio = student.forward_mel(mel);
  auto hidden = lm.forward_mixed(std::span<const int>(prompt.prefix), t_audio,
                                 std::span<const int>(prompt.suffix));
  auto logits = lm.next_token_logits(reshape(slice_rows(hidden, hidden.rows() - 1, 1), {lm.width}));
  return static_cast<int>(argmax(logits.data()));
}

template <typename T>
struct AgreementResult {
  double rate = 0.0;
  std::vector<EvalRecord> records;
};

// Fraction of examples whose student first-token argmax matches the
// teacher's; ties already break to the lowest index on both paths.
template <typename T>
AgreementResult<T> first_token_agreement(const StudentPipeline<T>& student, const ToyLM<T>& teacher,
                                         std::span<const AudioExample> dataset,
                                         const PromptTemplate& prompt) {
  if (dataset.empty()) throw DataError("first_token_agreement: empty dataset");
  AgreementResult<T> out;
  out.records.reserve(dataset.size());
  size_t hits = 0;
  for (const auto& ex : dataset) {
    EvalRecord rec;
    rec.id = ex.id;
    rec.teacher_argmax = first_token_argmax_text(teacher, std::span<const int>(ex.transcript), prompt);
    auto mel = mel_to_tensor<T>(mel_spectrogram(ex.audio, student.encoder.geometry));
    rec.student_argmax = first_token_argmax_audio(teacher, student, mel, prompt);
    rec.metric = rec.teacher_argmax == rec.student_argmax ? 1.0 : 0.0;
    hits += rec.metric > 0.5 ? 1 : 0;
    out.records.push_back(std::move(rec));
  }
  out.rate = static_cast<double>(hits) / static_cast<double>(dataset.size());
  return out;
}

}  // namespace cmdl
