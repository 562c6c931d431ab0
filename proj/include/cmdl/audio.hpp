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

// Synthetic speech and the audio feature pipeline: two-sinusoid chord
// synthesis per token, log-Mel spectrograms, the two-convolution stem, and
// the transformer audio encoder producing audio embeddings.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "cmdl/nn.hpp"
#include "cmdl/rng.hpp"
#include "cmdl/tensor.hpp"

namespace cmdl {

struct Waveform {
  std::vector<float> samples;  // amplitudes in [-1, 1]
  int sample_rate = 16000;
};

struct MelSpectrogram {
  size_t frames = 0;
  size_t n_mels = 0;
  size_t n_fft = 0;
  size_t hop = 0;
  std::vector<double> log_energies;  // frames x n_mels, row-major

  double at(size_t frame, size_t bin) const { return log_energies[frame * n_mels + bin]; }
};

struct MelGeometry {
  int sample_rate = 16000;
  size_t n_fft = 400;
  size_t hop = 160;
  size_t n_mels = 16;
};

// Two sinusoid frequencies per vocabulary token plus utterance-level
// variation (pitch shift factor, additive noise). Noise defaults to zero:
// per-example frozen noise measurably slows transcription learning at desk
// scale, while the pitch range below leaves it intact.
struct SynthSpec {
  int sample_rate = 16000;
  double tone_ms = 80.0;
  double noise_amp = 0.0;
  double pitch_lo = 0.9;
  double pitch_hi = 1.1;
  std::vector<std::pair<double, double>> token_freqs;  // indexed by token id
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Center frequencies of the triangular filters for a given geometry.
std::vector<double> mel_filter_centers(const MelGeometry& geom);

// Maps each token to a (low band, high band) pair of filter-center
// frequencies so distinct tokens occupy distinct mel signatures.
SynthSpec default_synth_spec(size_t vocab, const MelGeometry& geom);

// Concatenated per-token chords with one pitch-shift factor per utterance
// and additive uniform noise; deterministic for a given rng state.
Waveform synth_utterance(std::span<const int> tokens, const SynthSpec& spec, Rng& rng);

// Hann-windowed magnitude-squared DFT, triangular mel filterbank over
// [0, sr/2] on the mel scale, energies floored at 1e-10 then natural log.
MelSpectrogram mel_spectrogram(const Waveform& w, size_t n_fft, size_t hop, size_t n_mels);

inline MelSpectrogram mel_spectrogram(const Waveform& w, const MelGeometry& geom) {
  return mel_spectrogram(w, geom.n_fft, geom.hop, geom.n_mels);
}

// Checks the learnability precondition: with zero noise and unit pitch
// shift, any two distinct tokens must differ by > 1 log-energy in some bin.
// Throws DataError naming the first indistinct pair.
void validate_synth_spec(const SynthSpec& spec, const MelGeometry& geom);

// 16-bit PCM mono RIFF WAV.
void write_wav(const std::string& path, const Waveform& w);
Waveform read_wav(const std::string& path);

constexpr double kMelFloor = 1e-10;

template <typename T>
Tensor<T> mel_to_tensor(const MelSpectrogram& mel) {
  std::vector<T> vals(mel.log_energies.size());
  for (size_t i = 0; i < vals.size(); ++i) vals[i] = static_cast<T>(mel.log_energies[i]);
  return Tensor<T>::from({mel.frames, mel.n_mels}, std::move(vals));
}

// conv1d(K=3, stride=1, pad=1) + GELU, then conv1d(K=3, stride=2, pad=1) +
// GELU, then sinusoidal positions; T frames in, ceil(T/2) out.
template <typename T>
struct ConvStem {
  Tensor<T> kernel1;  // [3 x n_mels x h]
  Tensor<T> bias1;    // [h]
  Tensor<T> kernel2;  // [3 x h x h]
  Tensor<T> bias2;    // [h]

  ConvStem() = default;
  ConvStem(size_t n_mels, size_t width, Rng& rng)
      : kernel1(Tensor<T>::randn({3, n_mels, width}, rng, static_cast<T>(kInitSigma), true)),
        bias1(Tensor<T>::zeros({width}, true)),
        kernel2(Tensor<T>::randn({3, width, width}, rng, static_cast<T>(kInitSigma), true)),
        bias2(Tensor<T>::zeros({width}, true)) {}

  Tensor<T> forward(const Tensor<T>& mel) const {
    if (mel.cols() != kernel1.shape()[1]) {
      throw ShapeError("conv_stem expects " + std::to_string(kernel1.shape()[1]) +
                       " mel bins, got " + shape_str(mel.shape()));
    }
    auto h1 = gelu(add_row(conv1d(mel, kernel1, 1, 1), bias1));
    auto h2 = gelu(add_row(conv1d(h1, kernel2, 2, 1), bias2));
    return add(h2, sinusoidal_positions<T>(h2.rows(), h2.cols()));
  }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".k1", kernel1});
    out.push_back({prefix + ".b1", bias1});
    out.push_back({prefix + ".k2", kernel2});
    out.push_back({prefix + ".b2", bias2});
  }
};

template <typename T>
Tensor<T> conv_stem(const MelSpectrogram& mel, const ConvStem<T>& stem) {
  return stem.forward(mel_to_tensor<T>(mel));
}

// Conv stem followed by a non-causal transformer stack and a final norm.
// Log-Mel energies live around [log(1e-10), ~7]; the fixed affine feature
// normalization recenters them so the stem's activations start in range.
template <typename T>
struct AudioEncoder {
  MelGeometry geometry;
  double feature_shift = 16.0;
  double feature_scale = 1.0 / 8.0;
  ConvStem<T> stem;
  std::vector<TransformerLayer<T>> layers;
  LayerNormParams<T> final_ln;

  AudioEncoder() = default;
  AudioEncoder(const MelGeometry& geom, size_t width, size_t n_layers, size_t heads, Rng& rng)
      : geometry(geom), stem(geom.n_mels, width, rng), final_ln(width) {
    layers.reserve(n_layers);
    for (size_t i = 0; i < n_layers; ++i) layers.emplace_back(width, heads, false, false, rng);
  }

  Tensor<T> forward(const Tensor<T>& mel) const {
    auto normed = scale(add_scalar(mel, static_cast<T>(feature_shift)), static_cast<T>(feature_scale));
    auto h = stem.forward(normed);
    for (const auto& layer : layers) h = layer.forward(h);
    return final_ln.forward(h);
  }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    stem.collect_params(prefix + ".stem", out);
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i].collect_params(prefix + ".layer" + std::to_string(i), out);
    }
    final_ln.collect_params(prefix + ".final_ln", out);
  }
};

// Full feature path: waveform -> log-Mel -> stem -> encoder stack. The
// output rows are the audio embeddings consumed by the query adapter.
template <typename T>
Tensor<T> encode_audio(const Waveform& w, const AudioEncoder<T>& encoder) {
  return encoder.forward(mel_to_tensor<T>(mel_spectrogram(w, encoder.geometry)));
}

}  // namespace cmdl
