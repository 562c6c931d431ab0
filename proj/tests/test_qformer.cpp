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

#include "cmdl/qformer.hpp"
#include "cmdl/trainer.hpp"

using namespace cmdl;

namespace {

DonorDecoder<double> small_donor(uint64_t seed) {
  Rng rng(seed);
  return DonorDecoder<double>(16, 8, 2, 2, rng);
}

}  // namespace

TEST_CASE("init_from_decoder copies layer weights bitwise and discards the rest") {
  auto donor = small_donor(3);
  Rng rng(4);
  auto adapter = init_from_decoder(donor, 5, 12, rng);

  REQUIRE(adapter.layers.size() == donor.layers.size());
  CHECK(adapter.n_queries() == 5);
  CHECK(adapter.width() == 8);

  const auto& donor_k = donor.layers[0].cross_attn.w_k;
  const auto& adapter_k = adapter.layers[0].cross_attn.w_k;
  for (size_t i = 0; i < donor_k.numel(); ++i) CHECK(adapter_k.at(i) == donor_k.at(i));

  ParamList<double> from, to;
  donor.layers[1].collect_params("l", from);
  adapter.layers[1].collect_params("l", to);
  for (size_t i = 0; i < from.size(); ++i) {
    for (size_t j = 0; j < from[i].tensor.numel(); ++j) {
      CHECK(to[i].tensor.at(j) == from[i].tensor.at(j));
    }
  }

  // Copies are deep: training the adapter must not touch the donor.
  adapter.layers[0].cross_attn.w_k.mut(0) += 1.0f;
  CHECK(adapter.layers[0].cross_attn.w_k.at(0) != donor.layers[0].cross_attn.w_k.at(0));

  CHECK_THROWS_AS(init_from_decoder(donor, 0, 12, rng), ConfigError);
}

TEST_CASE("scratch adapter shares no weights with the donor") {
  auto donor = small_donor(5);
  Rng rng(6);
  auto scratch = scratch_adapter<double>(8, 12, 5, 2, 2, rng);
  size_t equal = 0, total = 0;
  ParamList<double> from, to;
  donor.layers[0].collect_params("l", from);
  scratch.layers[0].collect_params("l", to);
  for (size_t i = 0; i < from.size(); ++i) {
    // Norm gains/biases and linear biases start at fixed constants in both;
    // only the randomly drawn matrices can witness weight sharing.
    if (from[i].name.ends_with(".g") || from[i].name.ends_with(".b")) continue;
    for (size_t j = 0; j < from[i].tensor.numel(); ++j) {
      equal += from[i].tensor.at(j) == to[i].tensor.at(j) ? 1 : 0;
      ++total;
    }
  }
  CHECK(equal == 0);
  CHECK(total > 0);
}

TEST_CASE("qformer_forward shape, causality among queries, and single-query case") {
  auto donor = small_donor(7);
  Rng rng(8);
  auto adapter = init_from_decoder(donor, 4, 12, rng);

  auto audio_short = TensorD::randn({3, 8}, rng);
  auto audio_long = TensorD::randn({9, 8}, rng);
  CHECK(adapter.forward(audio_short).shape() == Shape{4, 12});
  CHECK(adapter.forward(audio_long).shape() == Shape{4, 12});

  auto one = init_from_decoder(donor, 1, 12, rng);
  CHECK(one.forward(audio_short).shape() == Shape{1, 12});

  // Perturbing query j must not change output rows before j.
  auto base = adapter.forward(audio_short);
  for (size_t j = 0; j < 4; ++j) {
    auto bumped = adapter;
    bumped.queries = adapter.queries.clone();
    bumped.queries.mut(j, 2) += 0.3;
    auto y = bumped.forward(audio_short);
    for (size_t i = 0; i < j; ++i)
      for (size_t c = 0; c < 12; ++c) CHECK(y.at(i, c) == base.at(i, c));
  }

  CHECK_THROWS_AS(adapter.forward(TensorD::randn({3, 6}, rng)), ShapeError);
}

TEST_CASE("qformer_forward matches hand-composed layer evaluation") {
  auto donor = small_donor(9);
  Rng rng(10);
  auto adapter = init_from_decoder(donor, 3, 12, rng);
  auto audio = TensorD::randn({4, 8}, rng);

  auto got = adapter.forward(audio);

  auto h = adapter.queries;
  h = adapter.layers[0].forward(h, std::optional<TensorD>(audio));
  h = adapter.layers[1].forward(h, std::optional<TensorD>(audio));
  auto expect = adapter.projection.forward(adapter.final_ln.forward(h));
  for (size_t i = 0; i < got.numel(); ++i) CHECK(got.at(i) == expect.at(i));
}

TEST_CASE("every audio frame can influence every output query") {
  auto donor = small_donor(11);
  Rng rng(12);
  auto adapter = init_from_decoder(donor, 3, 6, rng);
  auto audio = TensorD::randn({4, 8}, rng);
  audio.set_requires_grad(true);

  for (size_t q = 0; q < 3; ++q) {
    audio.zero_grad();
    auto out = adapter.forward(audio);
    backward(norm2(slice_rows(out, q, 1)));
    for (size_t fr = 0; fr < 4; ++fr) {
      double row_grad = 0;
      for (size_t c = 0; c < 8; ++c) row_grad += std::abs(audio.grad()[fr * 8 + c]);
      CHECK(row_grad > 0.0);
    }
  }
}

TEST_CASE("pretrain_donor reaches transcription accuracy on clean data") {
  const MelGeometry geom{16000, 400, 160, 16};
  auto lang = build_language(64, 21);
  auto spec = default_synth_spec(64, geom);
  spec.noise_amp = 0.0;  // zero-noise per the learnability bar
  spec.pitch_lo = spec.pitch_hi = 1.0;

  Rng crng(31);
  std::vector<ToyExample> train_seed, held_seed;
  for (size_t i = 0; i < 600; ++i) train_seed.push_back(sample_example(lang, crng, 3, 6, 0.25));
  for (size_t i = 0; i < 40; ++i) held_seed.push_back(sample_example(lang, crng, 3, 6, 0.25));

  auto train = synthesize_dataset(train_seed, spec, "train", "tr", 1001);
  auto held = synthesize_dataset(held_seed, spec, "dev", "dv", 1002);

  DonorPretrainConfig cfg;
  cfg.steps = 2000;
  cfg.batch_size = 8;
  cfg.width = 16;
  cfg.heads = 2;
  cfg.enc_layers = 1;
  cfg.dec_layers = 2;
  cfg.eval_every = 250;

  DonorPretrainReport report;
  auto model = pretrain_donor(train, held, geom, lang.vocab, cfg, 99, &report);
  CHECK(report.held_out_token_accuracy >= 0.95);

  // Same seed, same weights.
  DonorPretrainReport again;
  auto model2 = pretrain_donor(train, held, geom, lang.vocab, cfg, 99, &again);
  ParamList<float> pa, pb;
  model.collect_params("asr", pa);
  model2.collect_params("asr", pb);
  CHECK(param_checksum(pa) == param_checksum(pb));
  CHECK(again.steps_run == report.steps_run);

  CHECK_THROWS_AS(
      pretrain_donor(std::span<const AudioExample>(), held, geom, lang.vocab, cfg, 1, nullptr),
      DataError);
}
