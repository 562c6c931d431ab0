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

#include "cmdl/audio.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace cmdl {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2.0 * kPi;
}  // namespace

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

std::vector<double> mel_filter_centers(const MelGeometry& geom) {
  const double mel_max = hz_to_mel(static_cast<double>(geom.sample_rate) / 2.0);
  std::vector<double> centers(geom.n_mels);
  for (size_t m = 0; m < geom.n_mels; ++m) {
    const double mel = mel_max * static_cast<double>(m + 1) / static_cast<double>(geom.n_mels + 1);
    centers[m] = mel_to_hz(mel);
  }
  return centers;
}

SynthSpec default_synth_spec(size_t vocab, const MelGeometry& geom) {
  const auto centers = mel_filter_centers(geom);
  const size_t half = centers.size() / 2;
  if (half == 0 || vocab > half * half) {
    throw ConfigError("default_synth_spec: " + std::to_string(geom.n_mels) +
                      " mel bins cannot give " + std::to_string(vocab) + " distinct token chords");
  }
  SynthSpec spec;
  spec.sample_rate = geom.sample_rate;
  spec.token_freqs.resize(vocab);
  for (size_t t = 0; t < vocab; ++t) {
    spec.token_freqs[t] = {centers[t % half], centers[half + t / half]};
  }
  return spec;
}

Waveform synth_utterance(std::span<const int> tokens, const SynthSpec& spec, Rng& rng) {
  Waveform w;
  w.sample_rate = spec.sample_rate;
  if (tokens.empty()) return w;

  const double shift = rng.uniform(spec.pitch_lo, spec.pitch_hi);
  const size_t tone_len =
      static_cast<size_t>(std::lround(spec.tone_ms / 1000.0 * static_cast<double>(spec.sample_rate)));
  w.samples.reserve(tokens.size() * tone_len);

  for (int tok : tokens) {
    if (tok < 0 || static_cast<size_t>(tok) >= spec.token_freqs.size()) {
      throw DataError("synth_utterance: token " + std::to_string(tok) + " has no chord mapping");
    }
    const double f1 = spec.token_freqs[static_cast<size_t>(tok)].first * shift;
    const double f2 = spec.token_freqs[static_cast<size_t>(tok)].second * shift;
    for (size_t n = 0; n < tone_len; ++n) {
      const double t = static_cast<double>(n) / static_cast<double>(spec.sample_rate);
      double s = 0.35 * std::sin(kTwoPi * f1 * t) + 0.35 * std::sin(kTwoPi * f2 * t);
      if (spec.noise_amp > 0.0) s += rng.uniform(-spec.noise_amp, spec.noise_amp);
      w.samples.push_back(static_cast<float>(std::clamp(s, -1.0, 1.0)));
    }
  }
  return w;
}

MelSpectrogram mel_spectrogram(const Waveform& w, size_t n_fft, size_t hop, size_t n_mels) {
  if (w.samples.size() < n_fft) {
    throw DataError("mel_spectrogram: waveform of " + std::to_string(w.samples.size()) +
                    " samples is shorter than n_fft=" + std::to_string(n_fft));
  }
  const size_t frames = (w.samples.size() - n_fft) / hop + 1;
  const size_t bins = n_fft / 2 + 1;

  // Periodic Hann window and DFT basis tables.
  std::vector<double> window(n_fft);
  for (size_t n = 0; n < n_fft; ++n) {
    window[n] = 0.5 - 0.5 * std::cos(kTwoPi * static_cast<double>(n) / static_cast<double>(n_fft));
  }
  std::vector<double> cos_tab(bins * n_fft), sin_tab(bins * n_fft);
  for (size_t k = 0; k < bins; ++k) {
    for (size_t n = 0; n < n_fft; ++n) {
      const double angle = kTwoPi * static_cast<double>(k) * static_cast<double>(n) /
                           static_cast<double>(n_fft);
      cos_tab[k * n_fft + n] = std::cos(angle);
      sin_tab[k * n_fft + n] = std::sin(angle);
    }
  }

  // Triangular filters on mel-spaced points from 0 Hz to Nyquist.
  const double mel_max = hz_to_mel(static_cast<double>(w.sample_rate) / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(mel_max * static_cast<double>(i) / static_cast<double>(n_mels + 1));
  }
  std::vector<double> filters(n_mels * bins, 0.0);
  for (size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    for (size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * static_cast<double>(w.sample_rate) /
                       static_cast<double>(n_fft);
      double weight = 0.0;
      if (f > lo && f < mid) {
        weight = (f - lo) / (mid - lo);
      } else if (f >= mid && f < hi) {
        weight = (hi - f) / (hi - mid);
      }
      filters[m * bins + k] = weight;
    }
  }

  MelSpectrogram mel;
  mel.frames = frames;
  mel.n_mels = n_mels;
  mel.n_fft = n_fft;
  mel.hop = hop;
  mel.log_energies.resize(frames * n_mels);

  std::vector<double> windowed(n_fft);
  std::vector<double> power(bins);
  for (size_t fr = 0; fr < frames; ++fr) {
    const float* src = w.samples.data() + fr * hop;
    for (size_t n = 0; n < n_fft; ++n) windowed[n] = static_cast<double>(src[n]) * window[n];
    for (size_t k = 0; k < bins; ++k) {
      double re = 0.0, im = 0.0;
      const double* ct = cos_tab.data() + k * n_fft;
      const double* st = sin_tab.data() + k * n_fft;
      for (size_t n = 0; n < n_fft; ++n) {
        re += windowed[n] * ct[n];
        im -= windowed[n] * st[n];
      }
      power[k] = re * re + im * im;
    }
    for (size_t m = 0; m < n_mels; ++m) {
      double energy = 0.0;
      const double* flt = filters.data() + m * bins;
      for (size_t k = 0; k < bins; ++k) energy += flt[k] * power[k];
      mel.log_energies[fr * n_mels + m] = std::log(std::max(energy, kMelFloor));
    }
  }
  return mel;
}

void validate_synth_spec(const SynthSpec& spec, const MelGeometry& geom) {
  SynthSpec clean = spec;
  clean.noise_amp = 0.0;
  clean.pitch_lo = 1.0;
  clean.pitch_hi = 1.0;

  const size_t vocab = spec.token_freqs.size();
  std::vector<std::vector<double>> signatures(vocab);
  Rng rng(0);
  for (size_t t = 0; t < vocab; ++t) {
    const int tok = static_cast<int>(t);
    // One tone may be shorter than n_fft; synthesize a few repeats.
    const std::vector<int> toks(4, tok);
    auto mel = mel_spectrogram(synth_utterance(std::span<const int>(toks), clean, rng), geom);
    std::vector<double> sig(geom.n_mels, 0.0);
    for (size_t fr = 0; fr < mel.frames; ++fr) {
      for (size_t m = 0; m < geom.n_mels; ++m) sig[m] += mel.at(fr, m) / static_cast<double>(mel.frames);
    }
    signatures[t] = std::move(sig);
  }
  for (size_t a = 0; a < vocab; ++a) {
    for (size_t b = a + 1; b < vocab; ++b) {
      double max_gap = 0.0;
      for (size_t m = 0; m < geom.n_mels; ++m) {
        max_gap = std::max(max_gap, std::abs(signatures[a][m] - signatures[b][m]));
      }
      if (max_gap <= 1.0) {
        throw DataError("synth spec tokens " + std::to_string(a) + " and " + std::to_string(b) +
                        " are not mel-distinguishable (max bin gap " + std::to_string(max_gap) + ")");
      }
    }
  }
}

namespace {

void put_u32(std::ofstream& out, uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
               static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  out.write(b, 4);
}

void put_u16(std::ofstream& out, uint16_t v) {
  char b[2] = {static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF)};
  out.write(b, 2);
}

uint32_t get_u32(std::ifstream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

uint16_t get_u16(std::ifstream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

void write_wav(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");

  const uint32_t n = static_cast<uint32_t>(w.samples.size());
  const uint32_t sr = static_cast<uint32_t>(w.sample_rate);
  const uint32_t data_bytes = n * 2;

  out.write("RIFF", 4);
  put_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, sr);
  put_u32(out, sr * 2);  // byte rate
  put_u16(out, 2);       // block align
  put_u16(out, 16);      // bits per sample
  out.write("data", 4);
  put_u32(out, data_bytes);
  for (float s : w.samples) {
    const double clamped = std::clamp(static_cast<double>(s), -1.0, 1.0);
    const int16_t q = static_cast<int16_t>(std::lround(clamped * 32767.0));
    put_u16(out, static_cast<uint16_t>(q));
  }
  if (!out) throw IoError("failed writing WAV data to " + path);
}

Waveform read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");

  char tag[5] = {0};
  in.read(tag, 4);
  if (std::strncmp(tag, "RIFF", 4) != 0) throw FormatError(path + ": missing RIFF header");
  get_u32(in);
  in.read(tag, 4);
  if (std::strncmp(tag, "WAVE", 4) != 0) throw FormatError(path + ": missing WAVE tag");

  Waveform w;
  bool have_fmt = false;
  while (in.read(tag, 4)) {
    const uint32_t chunk_len = get_u32(in);
    if (std::strncmp(tag, "fmt ", 4) == 0) {
      const uint16_t format = get_u16(in);
      const uint16_t channels = get_u16(in);
      const uint32_t sr = get_u32(in);
      get_u32(in);  // byte rate
      get_u16(in);  // block align
      const uint16_t bits = get_u16(in);
      if (format != 1 || channels != 1 || bits != 16) {
        throw FormatError(path + ": expected 16-bit PCM mono WAV");
      }
      w.sample_rate = static_cast<int>(sr);
      have_fmt = true;
      if (chunk_len > 16) in.seekg(chunk_len - 16, std::ios::cur);
    } else if (std::strncmp(tag, "data", 4) == 0) {
      if (!have_fmt) throw FormatError(path + ": data chunk before fmt chunk");
      const size_t n = chunk_len / 2;
      w.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        const int16_t q = static_cast<int16_t>(get_u16(in));
        w.samples[i] = static_cast<float>(q) / 32767.0f;
      }
      if (!in) throw FormatError(path + ": truncated data chunk");
      return w;
    } else {
      in.seekg(chunk_len + (chunk_len & 1), std::ios::cur);
    }
  }
  throw FormatError(path + ": no data chunk found");
}

}  // namespace cmdl
