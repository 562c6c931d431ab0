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

// The single structured run configuration (JSON, unknown keys rejected,
// every field defaulted) and the JSONL example manifest.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmdl/audio.hpp"
#include "cmdl/qformer.hpp"
#include "cmdl/toylab.hpp"
#include "cmdl/toylm.hpp"
#include "cmdl/trainer.hpp"

namespace cmdl {

struct RunConfig {
  uint64_t seed = 42;

  // audio geometry and synthesis
  int sample_rate = 16000;
  size_t n_fft = 400;
  size_t hop = 160;
  size_t n_mels = 16;
  double tone_ms = 80.0;
  double noise_amp = 0.0;
  double pitch_lo = 0.9;
  double pitch_hi = 1.1;

  // model dimensions
  size_t h = 32;          // encoder / adapter width
  size_t lm_width = 64;   // teacher width H
  size_t n_queries = 16;  // |Q|, kept above the longest transcript
  size_t enc_layers = 2;
  size_t dec_layers = 2;
  size_t lm_layers = 2;
  size_t heads = 4;
  size_t vocab = 64;
  size_t max_positions = 64;

  // dataset sizes
  size_t n_train = 600;
  size_t n_dev = 80;
  size_t n_test = 120;
  size_t lm_train = 600;
  size_t lm_held_out = 120;
  size_t min_body = 4;
  size_t max_body = 12;
  double template_frac = 0.25;

  LmPretrainConfig lm_pretrain;        // width/layers/heads overridden from the model block
  DonorPretrainConfig donor_pretrain;  // likewise
  TrainConfig train;                   // desk defaults; reference run used 4300/512/5e-5/0.1/1%

  // toylab
  std::vector<size_t> toylab_dims = default_toylab_dims();
  size_t toylab_vocab = 32000;
  size_t toylab_steps = 100;
  size_t toylab_runs = 100;
  double toylab_lr = 0.1;
  size_t toylab_threads = 0;
  std::vector<double> toylab_lr_sweep;  // empty = single-lr mode

  // evaluation
  size_t bootstrap_resamples = 10000;

  MelGeometry geometry() const { return {sample_rate, n_fft, hop, n_mels}; }
};

// Throws ConfigError naming the first unknown key or ill-typed value.
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_json(const RunConfig& cfg);  // round-trippable, documents defaults

struct ManifestRecord {
  std::string id;
  std::vector<int> transcript;
  std::string audio;  // WAV path or "synthetic"
  std::string split;  // train | dev | test
};

// JSONL, one record per line. Validation errors carry 1-based line numbers.
std::vector<ManifestRecord> parse_manifest(const std::string& text, size_t vocab);
std::vector<ManifestRecord> load_manifest(const std::string& path, size_t vocab);
std::string manifest_text(const std::vector<ManifestRecord>& records);
void write_manifest(const std::string& path, const std::vector<ManifestRecord>& records);

}  // namespace cmdl
