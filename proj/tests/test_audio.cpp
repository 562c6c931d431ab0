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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "cmdl/audio.hpp"
#include "cmdl/gradsuite.hpp"

using namespace cmdl;

namespace {

const MelGeometry kGeom{16000, 400, 160, 16};

// Independent oracle: magnitude of the DFT of the raw samples at frequency f.
double dft_magnitude(const std::vector<float>& s, double f, int sr) {
  double re = 0.0, im = 0.0;
  for (size_t n = 0; n < s.size(); ++n) {
    const double angle = 2.0 * M_PI * f * static_cast<double>(n) / sr;
    re += s[n] * std::cos(angle);
    im -= s[n] * std::sin(angle);
  }
  return std::sqrt(re * re + im * im);
}

double gelu_scalar(double v) {
  return 0.5 * v * (1.0 + std::tanh(0.7978845608028654 * (v + 0.044715 * v * v * v)));
}

}  // namespace

TEST_CASE("synth_utterance basics") {
  auto spec = default_synth_spec(64, kGeom);
  Rng rng(1);

  const std::vector<int> none;
  CHECK(synth_utterance(std::span<const int>(none), spec, rng).samples.empty());

  const std::vector<int> tokens{5, 9, 61};
  Rng r1(7), r2(7);
  auto w1 = synth_utterance(std::span<const int>(tokens), spec, r1);
  auto w2 = synth_utterance(std::span<const int>(tokens), spec, r2);
  REQUIRE(w1.samples.size() == w2.samples.size());
  for (size_t i = 0; i < w1.samples.size(); ++i) CHECK(w1.samples[i] == w2.samples[i]);
  for (float s : w1.samples) CHECK(std::abs(s) <= 1.0f);

  const std::vector<int> bad{64};
  CHECK_THROWS_WITH_AS(synth_utterance(std::span<const int>(bad), spec, rng),
                       doctest::Contains("64"), DataError);
}

TEST_CASE("single clean token is a two-tone chord at the mapped frequencies") {
  auto spec = default_synth_spec(64, kGeom);
  spec.noise_amp = 0.0;
  spec.pitch_lo = spec.pitch_hi = 1.0;
  Rng rng(3);

  const int tok = 19;
  const std::vector<int> tokens{tok};
  auto w = synth_utterance(std::span<const int>(tokens), spec, rng);

  const double f1 = spec.token_freqs[tok].first;
  const double f2 = spec.token_freqs[tok].second;
  const double on1 = dft_magnitude(w.samples, f1, kGeom.sample_rate);
  const double on2 = dft_magnitude(w.samples, f2, kGeom.sample_rate);
  // probe frequencies away from both tones
  const double off1 = dft_magnitude(w.samples, f1 * 1.7 + 97.0, kGeom.sample_rate);
  const double off2 = dft_magnitude(w.samples, f2 * 0.55 + 41.0, kGeom.sample_rate);
  CHECK(on1 > 10.0 * off1);
  CHECK(on2 > 10.0 * off2);
}

TEST_CASE("mel_spectrogram of silence sits on the floor") {
  Waveform silence;
  silence.sample_rate = kGeom.sample_rate;
  silence.samples.assign(1600, 0.0f);
  auto mel = mel_spectrogram(silence, kGeom);
  for (double v : mel.log_energies) CHECK(v == doctest::Approx(std::log(1e-10)).epsilon(1e-12));
}

TEST_CASE("mel_spectrogram frame count and length guard") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(16000, 0.1f);
  auto mel = mel_spectrogram(w, 400, 160, 16);
  CHECK(mel.frames == 98);
  CHECK(mel.n_mels == 16);

  Waveform tiny;
  tiny.samples.assign(399, 0.0f);
  CHECK_THROWS_AS(mel_spectrogram(tiny, 400, 160, 16), DataError);
}

TEST_CASE("pure sine at a filter center peaks in that mel bin in every frame") {
  const auto centers = mel_filter_centers(kGeom);
  for (size_t m = 0; m < centers.size(); ++m) {
    Waveform w;
    w.sample_rate = kGeom.sample_rate;
    w.samples.resize(8000);
    for (size_t n = 0; n < w.samples.size(); ++n) {
      w.samples[n] = static_cast<float>(
          0.6 * std::sin(2.0 * M_PI * centers[m] * static_cast<double>(n) / kGeom.sample_rate));
    }
    auto mel = mel_spectrogram(w, kGeom);
    for (size_t fr = 0; fr < mel.frames; ++fr) {
      size_t best = 0;
      for (size_t b = 1; b < mel.n_mels; ++b) {
        if (mel.at(fr, b) > mel.at(fr, best)) best = b;
      }
      CHECK(best == m);
    }
  }
}

TEST_CASE("mel_spectrogram shifts by one frame when audio shifts by hop") {
  auto spec = default_synth_spec(64, kGeom);
  Rng rng(11);
  const std::vector<int> tokens{3, 41, 17, 8};
  auto w = synth_utterance(std::span<const int>(tokens), spec, rng);

  Waveform shifted;
  shifted.sample_rate = w.sample_rate;
  shifted.samples.assign(w.samples.begin() + kGeom.hop, w.samples.end());

  auto m0 = mel_spectrogram(w, kGeom);
  auto m1 = mel_spectrogram(shifted, kGeom);
  REQUIRE(m1.frames == m0.frames - 1);
  for (size_t fr = 0; fr < m1.frames; ++fr) {
    for (size_t b = 0; b < m0.n_mels; ++b) {
      CHECK(m1.at(fr, b) == doctest::Approx(m0.at(fr + 1, b)).epsilon(1e-5));
    }
  }
}

TEST_CASE("token distinguishability holds for the default spec") {
  auto spec = default_synth_spec(64, kGeom);
  CHECK_NOTHROW(validate_synth_spec(spec, kGeom));
}

TEST_CASE("conv stem halves the frame count and reduces to positions on zero input") {
  Rng rng(21);
  ConvStem<double> stem(16, 8, rng);

  auto zeros = TensorD::zeros({10, 16});
  auto y = stem.forward(zeros);
  CHECK(y.shape() == Shape{5, 8});
  auto pos = sinusoidal_positions<double>(5, 8);
  for (size_t i = 0; i < y.numel(); ++i) CHECK(y.at(i) == doctest::Approx(pos.at(i)).epsilon(1e-12));

  auto wrong = TensorD::zeros({10, 12});
  CHECK_THROWS_AS(stem.forward(wrong), ShapeError);
}

TEST_CASE("conv stem matches a direct sliding-window evaluation") {
  Rng rng(22);
  const size_t mels = 4, h = 4, t = 6;
  ConvStem<double> stem(mels, h, rng);
  auto x = TensorD::randn({t, mels}, rng);

  auto got = stem.forward(x);

  // Direct evaluation with the test's own convolution loops.
  auto conv = [](const TensorD& in, const TensorD& k, size_t stride, std::vector<double>& out,
                 size_t& t_out) {
    const size_t ti = in.rows(), ci = in.cols(), co = k.shape()[2];
    t_out = (ti + 2 - 3) / stride + 1;
    out.assign(t_out * co, 0.0);
    for (size_t to = 0; to < t_out; ++to)
      for (size_t kk = 0; kk < 3; ++kk) {
        const ptrdiff_t src = static_cast<ptrdiff_t>(to * stride + kk) - 1;
        if (src < 0 || src >= static_cast<ptrdiff_t>(ti)) continue;
        for (size_t c = 0; c < ci; ++c)
          for (size_t o = 0; o < co; ++o)
            out[to * co + o] += in.at(static_cast<size_t>(src), c) * k.at((kk * ci + c) * co + o);
      }
  };

  std::vector<double> h1;
  size_t t1 = 0;
  conv(x, stem.kernel1, 1, h1, t1);
  for (size_t i = 0; i < h1.size(); ++i) h1[i] = gelu_scalar(h1[i] + stem.bias1.at(i % h));
  std::vector<double> h2;
  size_t t2 = 0;
  conv(TensorD::from({t1, h}, h1), stem.kernel2, 2, h2, t2);
  auto pos = sinusoidal_positions<double>(t2, h);
  for (size_t i = 0; i < h2.size(); ++i) h2[i] = gelu_scalar(h2[i] + stem.bias2.at(i % h)) + pos.at(i);

  REQUIRE(got.numel() == h2.size());
  for (size_t i = 0; i < h2.size(); ++i) CHECK(got.at(i) == doctest::Approx(h2[i]).epsilon(1e-10));
}

TEST_CASE("encode_audio shape, determinism, and stem gradient") {
  Rng rng(23);
  AudioEncoder<double> enc(kGeom, 8, 1, 2, rng);

  auto spec = default_synth_spec(64, kGeom);
  Rng srng(5);
  const std::vector<int> tokens{12};  // 80 ms, padded by a second token below
  const std::vector<int> two{12, 30};
  auto w = synth_utterance(std::span<const int>(two), spec, srng);
  REQUIRE(w.samples.size() >= 1600);
  w.samples.resize(1600);  // 0.1 s clip

  auto a1 = encode_audio(w, enc);
  auto a2 = encode_audio(w, enc);
  const size_t frames = (1600 - kGeom.n_fft) / kGeom.hop + 1;
  CHECK(a1.shape() == Shape{(frames + 1) / 2, 8});
  for (size_t i = 0; i < a1.numel(); ++i) CHECK(a1.at(i) == a2.at(i));

  // Conditioned weights and standardized features keep the central-difference
  // oracle out of its noise floor; the backward code under test is unchanged.
  ParamList<double> params;
  enc.collect_params("enc", params);
  Rng wrng(99);
  rerandomize_params(params, wrng, 0.3);

  auto mel_raw = mel_spectrogram(w, kGeom);
  double m = 0, s = 0;
  for (double v : mel_raw.log_energies) m += v / static_cast<double>(mel_raw.log_energies.size());
  for (double v : mel_raw.log_energies) s += (v - m) * (v - m);
  s = std::sqrt(s / static_cast<double>(mel_raw.log_energies.size()));
  for (double& v : mel_raw.log_energies) v = (v - m) / s;
  auto mel = mel_to_tensor<double>(mel_raw);
  enc.feature_shift = 0.0;  // the fixture standardizes on its own
  enc.feature_scale = 1.0;

  auto loss_fn = [&]() { return scale(mean(mul(enc.forward(mel), enc.forward(mel))), 0.01); };
  CHECK(grad_check_param<double>(loss_fn, enc.stem.kernel1, 1e-5) < 1e-4);
  CHECK(grad_check_param<double>(loss_fn, enc.stem.bias2, 1e-5) < 1e-4);
}

TEST_CASE("wav roundtrip preserves samples to quantization accuracy") {
  auto spec = default_synth_spec(64, kGeom);
  Rng rng(31);
  const std::vector<int> tokens{1, 2, 3};
  auto w = synth_utterance(std::span<const int>(tokens), spec, rng);

  const std::string path = "test_roundtrip.wav";
  write_wav(path, w);
  auto r = read_wav(path);
  CHECK(r.sample_rate == w.sample_rate);
  REQUIRE(r.samples.size() == w.samples.size());
  for (size_t i = 0; i < w.samples.size(); ++i) {
    CHECK(std::abs(r.samples[i] - w.samples[i]) < 1.0f / 32000.0f);
  }
  std::remove(path.c_str());

  CHECK_THROWS_AS(read_wav("does_not_exist.wav"), IoError);
}
