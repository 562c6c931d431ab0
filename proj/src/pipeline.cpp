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

#include "cmdl/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>

namespace cmdl {

namespace {

// Fixed substream ids so every derived artifact is a pure function of the
// master seed regardless of call order.
enum Stream : uint64_t {
  kLanguage = 101,
  kLmCorpus = 102,
  kTrainSet = 103,
  kDevSet = 104,
  kTestSet = 105,
  kTrainAudio = 106,
  kDevAudio = 107,
  kTestAudio = 108,
  kStudentInit = 110,
};

std::vector<ToyExample> sample_set(const ToyLanguage& lang, const RunConfig& cfg, uint64_t stream,
                                   size_t count) {
  Rng rng = Rng(cfg.seed).split(stream);
  std::vector<ToyExample> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    out.push_back(sample_example(lang, rng, cfg.min_body, cfg.max_body, cfg.template_frac));
  }
  return out;
}

}  // namespace

ToyLanguage language_for(const RunConfig& cfg) {
  return build_language(cfg.vocab, Rng(cfg.seed).split(kLanguage).next_u64());
}

SynthSpec synth_for(const RunConfig& cfg) {
  SynthSpec synth = default_synth_spec(cfg.vocab, cfg.geometry());
  synth.tone_ms = cfg.tone_ms;
  synth.noise_amp = cfg.noise_amp;
  synth.pitch_lo = cfg.pitch_lo;
  synth.pitch_hi = cfg.pitch_hi;
  return synth;
}

SyntheticCorpus corpus_for(const RunConfig& cfg, const ToyLanguage& language) {
  Rng corpus_rng = Rng(cfg.seed).split(kLmCorpus);
  return generate_corpus(language, cfg.lm_train, cfg.lm_held_out, cfg.min_body, cfg.max_body,
                         cfg.template_frac, corpus_rng);
}

DataBundle build_data(const RunConfig& cfg) {
  DataBundle bundle;
  bundle.geometry = cfg.geometry();
  bundle.language = language_for(cfg);
  bundle.prompt = default_prompt(bundle.language);
  bundle.synth = synth_for(cfg);
  bundle.lm_corpus = corpus_for(cfg, bundle.language);

  bundle.train = synthesize_dataset(sample_set(bundle.language, cfg, kTrainSet, cfg.n_train),
                                    bundle.synth, "train", "tr", Rng(cfg.seed).split(kTrainAudio).next_u64());
  bundle.dev = synthesize_dataset(sample_set(bundle.language, cfg, kDevSet, cfg.n_dev), bundle.synth,
                                  "dev", "dv", Rng(cfg.seed).split(kDevAudio).next_u64());
  bundle.test = synthesize_dataset(sample_set(bundle.language, cfg, kTestSet, cfg.n_test),
                                   bundle.synth, "test", "ts", Rng(cfg.seed).split(kTestAudio).next_u64());
  return bundle;
}

namespace {

int match_pattern(const ToyLanguage& lang, const std::vector<int>& body) {
  for (size_t p = 0; p < lang.templates.size(); ++p) {
    if (lang.templates[p] == body) return static_cast<int>(p);
  }
  return -1;
}

uint64_t id_stream(const std::string& id) {
  // trailing digits of the id pick the synthesis substream
  size_t pos = id.size();
  while (pos > 0 && std::isdigit(static_cast<unsigned char>(id[pos - 1]))) --pos;
  if (pos == id.size()) {
    throw DataError("synthetic manifest record id '" + id + "' carries no index digits");
  }
  return std::stoull(id.substr(pos));
}

uint64_t audio_stream_for_split(const std::string& split) {
  if (split == "train") return kTrainAudio;
  if (split == "dev") return kDevAudio;
  return kTestAudio;
}

}  // namespace

std::vector<AudioExample> examples_from_manifest(const std::vector<ManifestRecord>& records,
                                                 const RunConfig& cfg, const SynthSpec& synth,
                                                 const ToyLanguage& language,
                                                 const std::string& base_dir) {
  std::vector<AudioExample> out;
  out.reserve(records.size());
  for (const auto& rec : records) {
    AudioExample ex;
    ex.id = rec.id;
    ex.transcript = rec.transcript;
    ex.split = rec.split;
    ex.pattern_id = match_pattern(language, rec.transcript);
    if (rec.audio == "synthetic") {
      const uint64_t seed = Rng(cfg.seed).split(audio_stream_for_split(rec.split)).next_u64();
      Rng sub = Rng(seed).split(id_stream(rec.id));
      ex.audio = synth_utterance(std::span<const int>(ex.transcript), synth, sub);
    } else {
      const auto path = std::filesystem::path(base_dir) / rec.audio;
      ex.audio = read_wav(path.string());
    }
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<ManifestRecord> manifest_from_bundle(const DataBundle& bundle, const std::string& wav_dir,
                                                 bool synthetic_only) {
  std::vector<ManifestRecord> records;
  auto emit = [&](const std::vector<AudioExample>& set) {
    for (const auto& ex : set) {
      ManifestRecord rec;
      rec.id = ex.id;
      rec.transcript = ex.transcript;
      rec.split = ex.split;
      if (synthetic_only) {
        rec.audio = "synthetic";
      } else {
        rec.audio = "wav/" + ex.id + ".wav";
        write_wav((std::filesystem::path(wav_dir) / (ex.id + ".wav")).string(), ex.audio);
      }
      records.push_back(std::move(rec));
    }
  };
  emit(bundle.train);
  emit(bundle.dev);
  emit(bundle.test);
  return records;
}

Models pretrain_all(const DataBundle& bundle, const RunConfig& cfg, PretrainReports* reports) {
  LmPretrainConfig lm_cfg = cfg.lm_pretrain;
  lm_cfg.width = cfg.lm_width;
  lm_cfg.n_layers = cfg.lm_layers;
  lm_cfg.heads = cfg.heads;
  lm_cfg.max_positions = cfg.max_positions;

  DonorPretrainConfig donor_cfg = cfg.donor_pretrain;
  donor_cfg.width = cfg.h;
  donor_cfg.enc_layers = cfg.enc_layers;
  donor_cfg.dec_layers = cfg.dec_layers;
  donor_cfg.heads = cfg.heads;

  Models models{
      pretrain_lm(bundle.lm_corpus, lm_cfg, cfg.seed, reports ? &reports->lm : nullptr),
      pretrain_donor(bundle.train, bundle.dev, bundle.geometry, cfg.vocab, donor_cfg, cfg.seed,
                     reports ? &reports->donor : nullptr)};
  return models;
}

StudentPipeline<float> make_student(const Models& models, const RunConfig& cfg, InitMode init_mode,
                                    uint64_t seed) {
  StudentPipeline<float> student;
  Rng rng = Rng(seed).split(kStudentInit);

  // The audio encoder transfers from the ASR model in both modes.
  student.encoder = AudioEncoder<float>(cfg.geometry(), cfg.h, cfg.enc_layers, cfg.heads, rng);
  copy_params<float>(models.asr.encoder, student.encoder);

  if (init_mode == InitMode::decoder) {
    student.adapter = init_from_decoder(models.asr.decoder, cfg.n_queries, cfg.lm_width, rng);
  } else {
    student.adapter =
        scratch_adapter<float>(cfg.h, cfg.lm_width, cfg.n_queries, cfg.dec_layers, cfg.heads, rng);
  }
  return student;
}

std::vector<Tensor<float>> extract_mels(std::span<const AudioExample> data,
                                        const MelGeometry& geometry) {
  std::vector<Tensor<float>> mels;
  mels.reserve(data.size());
  for (const auto& ex : data) mels.push_back(mel_to_tensor<float>(mel_spectrogram(ex.audio, geometry)));
  return mels;
}

std::vector<MetricsRow> train_student(const ToyLMF& teacher, StudentPipeline<float>& student,
                                      std::span<const AudioExample> data, const TrainConfig& cfg,
                                      const PromptTemplate& prompt, const MelGeometry& geometry) {
  const auto mels = extract_mels(data, geometry);
  return train_student(teacher, student, data, mels, cfg, prompt);
}

std::vector<MetricsRow> train_student(const ToyLMF& teacher, StudentPipeline<float>& student,
                                      std::span<const AudioExample> data,
                                      std::span<const Tensor<float>> mels, const TrainConfig& cfg,
                                      const PromptTemplate& prompt) {
  if (data.empty()) throw DataError("train_student: empty dataset");
  if (mels.size() != data.size()) {
    throw UsageError("train_student: " + std::to_string(mels.size()) + " mels for " +
                     std::to_string(data.size()) + " examples");
  }

  ParamList<float> params;
  if (cfg.freeze_encoder) {
    student.adapter.collect_params("qf", params);
    ParamList<float> enc;
    student.encoder.collect_params("enc", enc);
    for (auto& p : enc) p.tensor.set_requires_grad(false);
  } else {
    student.collect_params("student", params);
  }
  AdamW opt(params, cfg);

  Rng order_rng = Rng(cfg.seed).split(7001);
  std::vector<size_t> order(data.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  order_rng.shuffle(order);
  size_t cursor = 0;

  std::vector<MetricsRow> rows;
  rows.reserve(cfg.total_steps);

  for (size_t step = 0; step < cfg.total_steps; ++step) {
    std::vector<Tensor<float>> batch_mels;
    std::vector<std::vector<int>> batch_bodies;
    batch_mels.reserve(cfg.batch_size);
    batch_bodies.reserve(cfg.batch_size);
    for (size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const size_t idx = order[cursor++];
      batch_mels.push_back(mels[idx]);
      batch_bodies.push_back(data[idx].transcript);
    }

    opt.zero_grad();
    auto step_loss = combined_step_loss<float>(teacher, student, batch_mels, batch_bodies, prompt,
                                               static_cast<float>(cfg.lambda_con), cfg.arm);
    if (!std::isfinite(step_loss.objective.item())) {
      throw TrainingError("train_student: non-finite loss at step " + std::to_string(step));
    }
    backward(step_loss.objective);

    if (cfg.clip_norm > 0.0) {
      const double norm = opt.grad_norm();
      if (norm > cfg.clip_norm) opt.scale_grads(static_cast<float>(cfg.clip_norm / norm));
    }
    const double lr = lr_at(step, cfg);
    opt.step(lr);

    rows.push_back({step, lr, static_cast<double>(step_loss.breakdown.l_con),
                    static_cast<double>(step_loss.breakdown.l_distill),
                    static_cast<double>(step_loss.breakdown.combined),
                    static_cast<double>(step_loss.breakdown.reference_kl)});
  }
  return rows;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string csv = "step,lr,l_con,l_distill,combined,reference_kl\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.12g,%.12g,%.12g,%.12g,%.12g\n", r.step, r.lr, r.l_con,
                  r.l_distill, r.combined, r.reference_kl);
    csv += buf;
  }
  return csv;
}

ClassificationEval classify_templates(const ToyLMF& teacher, const StudentPipeline<float>* student,
                                      std::span<const AudioExample> dataset, const DataBundle& bundle) {
  std::vector<std::vector<int>> labels;
  std::vector<int> label_ids;
  for (int p = 0; p < bundle.language.n_labels; ++p) {
    labels.push_back({bundle.language.label_token(p)});
    label_ids.push_back(p);
  }

  ClassificationEval eval;
  const std::span<const int> prefix(bundle.prompt.prefix);
  const std::span<const int> suffix(bundle.prompt.suffix);
  for (const auto& ex : dataset) {
    if (ex.pattern_id < 0) continue;
    Tensor<float> context;
    if (student != nullptr) {
      auto mel = mel_to_tensor<float>(mel_spectrogram(ex.audio, bundle.geometry));
      context = teacher.mixed_embeds(prefix, student->forward_mel(mel), suffix);
    } else {
      std::vector<int> tokens;
      tokens.insert(tokens.end(), prefix.begin(), prefix.end());
      tokens.insert(tokens.end(), ex.transcript.begin(), ex.transcript.end());
      tokens.insert(tokens.end(), suffix.begin(), suffix.end());
      context = teacher.mixed_embeds(tokens, Tensor<float>::zeros({0, teacher.width}), {});
    }
    auto scores = teacher.score_labels(context, labels);
    const int pred = static_cast<int>(argmax(std::span<const float>(scores.data(), scores.size())));

    EvalRecord rec;
    rec.id = ex.id;
    rec.gold_label = ex.pattern_id;
    rec.label_scores.assign(scores.begin(), scores.end());
    rec.metric = pred == ex.pattern_id ? 1.0 : 0.0;
    rec.student_argmax = pred;
    rec.teacher_argmax = ex.pattern_id;
    eval.records.push_back(std::move(rec));
    eval.preds.push_back(pred);
    eval.golds.push_back(ex.pattern_id);
  }
  eval.n = eval.preds.size();
  if (eval.n > 0) {
    eval.weighted_f1_score = weighted_f1(eval.preds, eval.golds, label_ids);
    eval.accuracy_score = accuracy(eval.preds, eval.golds);
  }
  return eval;
}

std::string eval_records_csv(const std::vector<EvalRecord>& records) {
  std::string csv = "id,teacher_argmax,student_argmax,gold_label,metric\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%d,%d,%.12g\n", r.id.c_str(), r.teacher_argmax,
                  r.student_argmax, r.gold_label, r.metric);
    csv += buf;
  }
  return csv;
}

ParamList<float> teacher_params(const ToyLMF& teacher) {
  ParamList<float> params;
  teacher.collect_params("lm", params);
  return params;
}

ParamList<float> asr_params(const AsrModel<float>& asr) {
  ParamList<float> params;
  asr.collect_params("asr", params);
  return params;
}

ParamList<float> student_params(const StudentPipeline<float>& student) {
  ParamList<float> params;
  student.collect_params("student", params);
  return params;
}

ToyLMF make_teacher_shell(const RunConfig& cfg) {
  Rng rng(0);
  return ToyLMF(cfg.vocab, cfg.lm_width, cfg.lm_layers, cfg.heads, cfg.max_positions, rng);
}

AsrModel<float> make_asr_shell(const RunConfig& cfg) {
  Rng rng(0);
  return AsrModel<float>{AudioEncoder<float>(cfg.geometry(), cfg.h, cfg.enc_layers, cfg.heads, rng),
                         DonorDecoder<float>(cfg.vocab, cfg.h, cfg.dec_layers, cfg.heads, rng)};
}

StudentPipeline<float> make_student_shell(const RunConfig& cfg) {
  Rng rng(0);
  StudentPipeline<float> student;
  student.encoder = AudioEncoder<float>(cfg.geometry(), cfg.h, cfg.enc_layers, cfg.heads, rng);
  student.adapter =
      scratch_adapter<float>(cfg.h, cfg.lm_width, cfg.n_queries, cfg.dec_layers, cfg.heads, rng);
  return student;
}

std::vector<GradCheckResult> run_gradcheck_suite(uint64_t seed) {
  std::vector<GradCheckResult> results;

  // Attention layer, probing the input and two weight matrices.
  {
    Rng rng(seed);
    TransformerLayer<double> layer(8, 2, true, false, rng);
    ParamList<double> params;
    layer.collect_params("l", params);
    Rng wrng = rng.split(1);
    rerandomize_params(params, wrng, 0.3);

    auto via_input = [&](const TensorD& probe) {
      auto y = layer.forward(reshape(probe, {4, 8}));
      return scale(mean(mul(y, y)), 0.01);
    };
    Rng xrng = rng.split(2);
    double worst = grad_check<double>(via_input, TensorD::randn({32}, xrng, 0.8), 1e-5);

    auto x = TensorD::randn({4, 8}, xrng, 0.8);
    auto via_params = [&]() { return scale(mean(mul(layer.forward(x), layer.forward(x))), 0.01); };
    worst = std::max(worst, grad_check_param<double>(via_params, layer.self_attn.w_q, 1e-5));
    worst = std::max(worst, grad_check_param<double>(via_params, layer.ffn_in.weight, 1e-5));
    results.push_back({"attention_layer", worst});
  }

  // Conv stem, probing input, both kernels and a bias.
  {
    Rng rng(seed + 1);
    ConvStem<double> stem(8, 6, rng);
    ParamList<double> params;
    stem.collect_params("stem", params);
    Rng wrng = rng.split(1);
    rerandomize_params(params, wrng, 0.3);

    auto via_input = [&](const TensorD& probe) {
      auto y = stem.forward(reshape(probe, {6, 8}));
      return scale(mean(mul(y, y)), 0.01);
    };
    Rng xrng = rng.split(2);
    double worst = grad_check<double>(via_input, TensorD::randn({48}, xrng, 0.8), 1e-5);

    auto x = TensorD::randn({6, 8}, xrng, 0.8);
    auto via_params = [&]() { return scale(mean(mul(stem.forward(x), stem.forward(x))), 0.01); };
    worst = std::max(worst, grad_check_param<double>(via_params, stem.kernel1, 1e-5));
    worst = std::max(worst, grad_check_param<double>(via_params, stem.kernel2, 1e-5));
    worst = std::max(worst, grad_check_param<double>(via_params, stem.bias1, 1e-5));
    results.push_back({"conv_stem", worst});
  }

  // Combined loss through encoder, adapter and frozen teacher.
  {
    Rng trng(seed + 2);
    ToyLM<double> teacher(16, 8, 2, 2, 32, trng);
    teacher.set_frozen(true);
    StudentPipeline<double> student;
    Rng srng(seed + 3);
    const MelGeometry geom{16000, 400, 160, 16};
    student.encoder = AudioEncoder<double>(geom, 8, 1, 2, srng);
    student.adapter = scratch_adapter<double>(8, 8, 5, 1, 2, srng);
    ParamList<double> params;
    student.collect_params("student", params);
    Rng wrng = srng.split(1);
    rerandomize_params(params, wrng, 0.25);

    PromptTemplate prompt{{0, 1}, {2}};
    Rng mrng = srng.split(2);
    auto mel = TensorD::randn({6, 16}, mrng);
    std::vector<TensorD> mels{mel};
    std::vector<std::vector<int>> bodies{{4, 9}};

    auto loss_fn = [&]() {
      return scale(combined_step_loss<double>(teacher, student, mels, bodies, prompt, 1.0,
                                              TrainArm::full)
                       .objective,
                   0.005);
    };
    double worst = grad_check_param<double>(loss_fn, student.adapter.queries, 1e-5);
    worst = std::max(worst, grad_check_param<double>(loss_fn, student.adapter.projection.weight, 1e-5));
    worst = std::max(worst, grad_check_param<double>(loss_fn, student.encoder.stem.kernel2, 1e-5));
    worst = std::max(worst, grad_check_param<double>(loss_fn, student.adapter.layers[0].cross_attn.w_k, 1e-5));
    results.push_back({"combined_loss", worst});
  }

  return results;
}

}  // namespace cmdl
