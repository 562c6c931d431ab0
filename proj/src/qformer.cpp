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

#include "cmdl/qformer.hpp"

#include <cmath>

#include "cmdl/trainer.hpp"

namespace cmdl {

std::vector<AudioExample> synthesize_dataset(const std::vector<ToyExample>& examples,
                                             const SynthSpec& spec, const std::string& split,
                                             const std::string& id_prefix, uint64_t seed) {
  std::vector<AudioExample> out;
  out.reserve(examples.size());
  Rng root(seed);
  for (size_t i = 0; i < examples.size(); ++i) {
    AudioExample ex;
    ex.id = id_prefix + std::to_string(i);
    ex.transcript = examples[i].body;
    ex.pattern_id = examples[i].pattern_id;
    ex.split = split;
    Rng sub = root.split(i);
    ex.audio = synth_utterance(std::span<const int>(ex.transcript), spec, sub);
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

std::vector<Tensor<float>> cache_mels(std::span<const AudioExample> examples, const MelGeometry& geom) {
  std::vector<Tensor<float>> mels;
  mels.reserve(examples.size());
  for (const auto& ex : examples) {
    mels.push_back(mel_to_tensor<float>(mel_spectrogram(ex.audio, geom)));
  }
  return mels;
}

double transcription_accuracy(const AsrModel<float>& model, std::span<const AudioExample> examples,
                              const std::vector<Tensor<float>>& mels, int eos) {
  size_t correct = 0, total = 0;
  for (size_t i = 0; i < examples.size(); ++i) {
    const auto& body = examples[i].transcript;
    std::vector<int> inputs{eos};
    inputs.insert(inputs.end(), body.begin(), body.end());
    std::vector<int> targets(body);
    targets.push_back(eos);

    auto audio = model.encoder.forward(mels[i]);
    auto logits = model.decoder.logits(model.decoder.forward_hidden(inputs, audio));
    for (size_t p = 0; p < targets.size(); ++p) {
      auto row = slice_rows(logits, p, 1);
      if (static_cast<int>(argmax(row.data())) == targets[p]) ++correct;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

AsrModel<float> pretrain_donor(std::span<const AudioExample> train,
                               std::span<const AudioExample> held_out, const MelGeometry& geom,
                               size_t vocab, const DonorPretrainConfig& cfg, uint64_t seed,
                               DonorPretrainReport* report) {
  if (train.empty()) throw DataError("pretrain_donor: empty dataset");

  constexpr int kEos = 0;
  Rng init_rng = Rng(seed).split(11);
  AsrModel<float> model{AudioEncoder<float>(geom, cfg.width, cfg.enc_layers, cfg.heads, init_rng),
                        DonorDecoder<float>(vocab, cfg.width, cfg.dec_layers, cfg.heads, init_rng)};

  const auto train_mels = cache_mels(train, geom);
  const auto held_mels = cache_mels(held_out, geom);

  ParamList<float> params;
  model.collect_params("asr", params);
  AdamW opt(params, 0.9, 0.999, 1e-8, cfg.weight_decay);

  TrainConfig sched;
  sched.total_steps = cfg.steps;
  sched.base_lr = cfg.lr;
  sched.warmup_fraction = cfg.warmup_fraction;

  Rng order_rng = Rng(seed).split(12);
  std::vector<size_t> order(train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  order_rng.shuffle(order);
  size_t cursor = 0;

  size_t steps_run = 0;
  double acc = 0.0;
  for (size_t step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    for (size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const size_t idx = order[cursor++];
      const auto& body = train[idx].transcript;
      std::vector<int> inputs{kEos};
      inputs.insert(inputs.end(), body.begin(), body.end());
      std::vector<int> targets(body);
      targets.push_back(kEos);

      auto audio = model.encoder.forward(train_mels[idx]);
      auto logits = model.decoder.logits(model.decoder.forward_hidden(inputs, audio));
      auto loss = scale(cross_entropy(logits, std::span<const int>(targets)),
                        1.0f / static_cast<float>(cfg.batch_size));
      if (!std::isfinite(loss.item())) {
        throw TrainingError("pretrain_donor: loss diverged at step " + std::to_string(step));
      }
      backward(loss);
    }
    opt.step(lr_at(step, sched));
    steps_run = step + 1;

    if ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps) {
      acc = transcription_accuracy(model, held_out, held_mels, kEos);
      if (report) report->accuracy_curve.emplace_back(step + 1, acc);
      if (acc >= cfg.target_acc) break;
    }
  }

  if (report) {
    report->held_out_token_accuracy = acc;
    report->steps_run = steps_run;
  }
  if (acc < cfg.min_acc) {
    throw TrainingError("pretrain_donor: held-out token accuracy " + std::to_string(acc) +
                        " below the " + std::to_string(cfg.min_acc) +
                        " floor; synth spec or geometry is broken");
  }
  return model;
}

}  // namespace cmdl
