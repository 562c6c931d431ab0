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

// The query adapter and its donor. A toy encoder-decoder ASR model is
// pretrained on synthetic transcription; its decoder layers (causal self-
// attention plus cross-attention over audio) seed the adapter, whose inputs
// are static learned query vectors instead of token embeddings. A final
// affine projection lifts adapter outputs from encoder width h to LM width H.

#pragma once

#include <span>
#include <string>
#include <vector>

#include "cmdl/dataset.hpp"
#include "cmdl/nn.hpp"

namespace cmdl {

// Copies parameter values between two structurally identical modules.
template <typename T, typename Module>
void copy_params(const Module& src, Module& dst) {
  ParamList<T> from, to;
  src.collect_params("x", from);
  dst.collect_params("x", to);
  if (from.size() != to.size()) throw UsageError("copy_params: structure mismatch");
  for (size_t i = 0; i < from.size(); ++i) {
    if (from[i].name != to[i].name) throw UsageError("copy_params: structure mismatch");
    to[i].tensor.copy_values_from(from[i].tensor);
  }
}

template <typename T>
struct DonorDecoder {
  size_t vocab = 0;
  size_t width = 0;
  Embedding<T> embed;
  std::vector<TransformerLayer<T>> layers;  // causal self + cross over audio
  LayerNormParams<T> final_ln;
  Tensor<T> output_head;  // [vocab x width]

  DonorDecoder() = default;
  DonorDecoder(size_t vocab_size, size_t model_width, size_t n_layers, size_t heads, Rng& rng)
      : vocab(vocab_size),
        width(model_width),
        embed(vocab_size, model_width, rng),
        final_ln(model_width),
        output_head(Tensor<T>::randn({vocab_size, model_width}, rng, static_cast<T>(kInitSigma), true)) {
    layers.reserve(n_layers);
    for (size_t i = 0; i < n_layers; ++i) layers.emplace_back(model_width, heads, true, true, rng);
  }

  // Token path: embeddings + sinusoidal positions, decoder layers crossing
  // into the audio embeddings, final norm.
  Tensor<T> forward_hidden(std::span<const int> tokens, const Tensor<T>& audio) const {
    auto h = add(embed.lookup(tokens), sinusoidal_positions<T>(tokens.size(), width));
    for (const auto& layer : layers) h = layer.forward(h, std::optional<Tensor<T>>(audio));
    return final_ln.forward(h);
  }

  Tensor<T> logits(const Tensor<T>& hidden) const { return matmul(hidden, transpose(output_head)); }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    embed.collect_params(prefix + ".embed", out);
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i].collect_params(prefix + ".layer" + std::to_string(i), out);
    }
    final_ln.collect_params(prefix + ".final_ln", out);
    out.push_back({prefix + ".head", output_head});
  }
};

// Encoder-decoder transcription model; the donor for adapter initialization.
template <typename T>
struct AsrModel {
  AudioEncoder<T> encoder;
  DonorDecoder<T> decoder;

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    encoder.collect_params(prefix + ".enc", out);
    decoder.collect_params(prefix + ".dec", out);
  }
};

template <typename T>
struct QFormerAdapter {
  Tensor<T> queries;                        // [n_queries x h], learned
  std::vector<TransformerLayer<T>> layers;  // causal self + cross, donor-shaped
  LayerNormParams<T> final_ln;
  LinearLayer<T> projection;                // h -> H

  size_t n_queries() const { return queries.rows(); }
  size_t width() const { return queries.cols(); }

  // Queries attend causally among themselves and cross-attend to the audio
  // embeddings, then project into LM width.
  Tensor<T> forward(const Tensor<T>& audio) const {
    if (audio.cols() != width()) {
      throw ShapeError("qformer_forward: audio width " + std::to_string(audio.cols()) +
                       " does not match adapter width " + std::to_string(width()));
    }
    auto h = queries;
    for (const auto& layer : layers) h = layer.forward(h, std::optional<Tensor<T>>(audio));
    return projection.forward(final_ln.forward(h));
  }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".queries", queries});
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i].collect_params(prefix + ".layer" + std::to_string(i), out);
    }
    final_ln.collect_params(prefix + ".final_ln", out);
    projection.collect_params(prefix + ".proj", out);
  }
};

template <typename T>
Tensor<T> qformer_forward(const QFormerAdapter<T>& adapter, const Tensor<T>& audio) {
  return adapter.forward(audio);
}

// Donor layer weights (self/cross attention, FFN, norms) transfer one to
// one; the token embedding path is replaced by fresh query vectors, the
// output head is discarded, and the h -> H projection starts fresh.
template <typename T>
QFormerAdapter<T> init_from_decoder(const DonorDecoder<T>& donor, size_t n_queries, size_t lm_width,
                                    Rng& rng) {
  if (n_queries < 1) throw ConfigError("init_from_decoder: n_queries must be >= 1");
  QFormerAdapter<T> adapter;
  adapter.queries = Tensor<T>::randn({n_queries, donor.width}, rng, static_cast<T>(kInitSigma), true);
  adapter.layers.reserve(donor.layers.size());
  Rng scratch = rng.split(1);
  for (const auto& src : donor.layers) {
    TransformerLayer<T> layer(donor.width, src.self_attn.head_count, true, true, scratch);
    copy_params<T>(src, layer);
    adapter.layers.push_back(std::move(layer));
  }
  adapter.final_ln = LayerNormParams<T>(donor.width);
  copy_params<T>(donor.final_ln, adapter.final_ln);
  adapter.projection = LinearLayer<T>(donor.width, lm_width, rng);
  return adapter;
}

// Ablation control: same shape, no donor weights.
template <typename T>
QFormerAdapter<T> scratch_adapter(size_t h, size_t lm_width, size_t n_queries, size_t n_layers,
                                  size_t heads, Rng& rng) {
  QFormerAdapter<T> adapter;
  adapter.queries = Tensor<T>::randn({n_queries, h}, rng, static_cast<T>(kInitSigma), true);
  adapter.layers.reserve(n_layers);
  for (size_t i = 0; i < n_layers; ++i) adapter.layers.emplace_back(h, heads, true, true, rng);
  adapter.final_ln = LayerNormParams<T>(h);
  adapter.projection = LinearLayer<T>(h, lm_width, rng);
  return adapter;
}

// The trainable student: audio encoder plus adapter.
template <typename T>
struct StudentPipeline {
  AudioEncoder<T> encoder;
  QFormerAdapter<T> adapter;

  Tensor<T> forward_mel(const Tensor<T>& mel) const { return adapter.forward(encoder.forward(mel)); }

  Tensor<T> forward_wave(const Waveform& w) const {
    return forward_mel(mel_to_tensor<T>(mel_spectrogram(w, encoder.geometry)));
  }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    encoder.collect_params(prefix + ".enc", out);
    adapter.collect_params(prefix + ".qf", out);
  }
};

struct DonorPretrainConfig {
  size_t steps = 3000;
  size_t batch_size = 8;
  double lr = 3e-3;  // hotter rates trap some seeds in a bad basin
  double weight_decay = 0.01;
  double warmup_fraction = 0.05;
  size_t enc_layers = 2;
  size_t dec_layers = 2;
  size_t heads = 4;
  size_t width = 32;  // encoder/decoder width h
  double target_acc = 0.95;
  double min_acc = 0.60;
  size_t eval_every = 250;
};

struct DonorPretrainReport {
  double held_out_token_accuracy = 0.0;
  size_t steps_run = 0;
  std::vector<std::pair<size_t, double>> accuracy_curve;  // (step, held-out acc)
};

// Next-token cross-entropy transcription training until held-out token
// accuracy reaches target_acc or the step budget runs out. Missing min_acc
// signals a broken synth spec or geometry and throws TrainingError.
AsrModel<float> pretrain_donor(std::span<const AudioExample> train,
                               std::span<const AudioExample> held_out, const MelGeometry& geom,
                               size_t vocab, const DonorPretrainConfig& cfg, uint64_t seed,
                               DonorPretrainReport* report = nullptr);

}  // namespace cmdl
