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

// End-to-end orchestration: deterministic data derivation from the master
// seed, teacher/donor pretraining, the three-arm distillation loop, and the
// evaluation drivers the CLI and the acceptance suite share.

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmdl/config.hpp"
#include "cmdl/distill.hpp"
#include "cmdl/evalkit.hpp"
#include "cmdl/gradsuite.hpp"

namespace cmdl {

struct DataBundle {
  ToyLanguage language;
  SyntheticCorpus lm_corpus;
  SynthSpec synth;
  MelGeometry geometry;
  PromptTemplate prompt;
  std::vector<AudioExample> train;
  std::vector<AudioExample> dev;
  std::vector<AudioExample> test;
};

// Everything derives from (config, seed): language, text corpus, audio sets.
DataBundle build_data(const RunConfig& cfg);

// Individual derivations, shared by build_data and manifest-driven loading.
ToyLanguage language_for(const RunConfig& cfg);
SynthSpec synth_for(const RunConfig& cfg);
SyntheticCorpus corpus_for(const RunConfig& cfg, const ToyLanguage& language);

// Audio examples from a manifest: WAV paths are read, "synthetic" records
// are regenerated from the transcript with an id-derived substream.
std::vector<AudioExample> examples_from_manifest(const std::vector<ManifestRecord>& records,
                                                 const RunConfig& cfg, const SynthSpec& synth,
                                                 const ToyLanguage& language,
                                                 const std::string& base_dir);

// Manifest records (and WAV files, unless synthetic_only) for a bundle.
std::vector<ManifestRecord> manifest_from_bundle(const DataBundle& bundle, const std::string& wav_dir,
                                                 bool synthetic_only);

struct Models {
  ToyLMF teacher;
  AsrModel<float> asr;
};

struct PretrainReports {
  LmPretrainReport lm;
  DonorPretrainReport donor;
};

Models pretrain_all(const DataBundle& bundle, const RunConfig& cfg, PretrainReports* reports = nullptr);

// Student assembly: the audio encoder always starts from the pretrained ASR
// encoder; the adapter starts from the donor decoder or from scratch.
StudentPipeline<float> make_student(const Models& models, const RunConfig& cfg, InitMode init_mode,
                                    uint64_t seed);

struct MetricsRow {
  size_t step = 0;
  double lr = 0.0;
  double l_con = 0.0;
  double l_distill = 0.0;
  double combined = 0.0;
  double reference_kl = 0.0;
};

// Seeded-shuffle distillation training of the student against the frozen
// teacher. Throws TrainingError with the step index on a non-finite loss.
std::vector<MetricsRow> train_student(const ToyLMF& teacher, StudentPipeline<float>& student,
                                      std::span<const AudioExample> data, const TrainConfig& cfg,
                                      const PromptTemplate& prompt, const MelGeometry& geometry);

// Same loop over already-extracted features (one mel tensor per example).
std::vector<MetricsRow> train_student(const ToyLMF& teacher, StudentPipeline<float>& student,
                                      std::span<const AudioExample> data,
                                      std::span<const Tensor<float>> mels, const TrainConfig& cfg,
                                      const PromptTemplate& prompt);

std::vector<Tensor<float>> extract_mels(std::span<const AudioExample> data,
                                        const MelGeometry& geometry);

std::string metrics_csv(const std::vector<MetricsRow>& rows);

// Label log-prob classification over template examples. With a student the
// context is the audio path; otherwise the teacher's transcript path.
struct ClassificationEval {
  double weighted_f1_score = 0.0;
  double accuracy_score = 0.0;
  size_t n = 0;
  std::vector<int> preds;
  std::vector<int> golds;
  std::vector<EvalRecord> records;
};

ClassificationEval classify_templates(const ToyLMF& teacher, const StudentPipeline<float>* student,
                                      std::span<const AudioExample> dataset, const DataBundle& bundle);

std::string eval_records_csv(const std::vector<EvalRecord>& records);

// Named checkpoint registries.
ParamList<float> teacher_params(const ToyLMF& teacher);
ParamList<float> asr_params(const AsrModel<float>& asr);
ParamList<float> student_params(const StudentPipeline<float>& student);

// Rebuild model shells whose tensors a checkpoint can fill.
ToyLMF make_teacher_shell(const RunConfig& cfg);
AsrModel<float> make_asr_shell(const RunConfig& cfg);
StudentPipeline<float> make_student_shell(const RunConfig& cfg);

}  // namespace cmdl
