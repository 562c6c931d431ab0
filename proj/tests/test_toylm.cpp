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

#include "cmdl/toylm.hpp"
#include "cmdl/trainer.hpp"

using namespace cmdl;

namespace {

ToyLM<double> small_lm(uint64_t seed) {
  Rng rng(seed);
  return ToyLM<double>(16, 8, 2, 2, 32, rng);
}

}  // namespace

TEST_CASE("toy language structure") {
  auto lang = build_language(64, 7);
  CHECK(lang.vocab == 64);
  CHECK(lang.content_hi() == 60);
  CHECK(lang.label_token(0) == 60);
  CHECK(lang.label_token(3) == 63);
  CHECK(lang.successors.size() == 57);
  for (const auto& succ : lang.successors) {
    for (int s : succ) {
      CHECK(s >= lang.content_lo);
      CHECK(s < lang.content_hi());
    }
  }
  REQUIRE(lang.templates.size() == 4);
  for (const auto& body : lang.templates) CHECK(body.size() == 6);

  // Same seed, same language.
  auto again = build_language(64, 7);
  CHECK(again.successors == lang.successors);
  CHECK(again.templates == lang.templates);
}

TEST_CASE("sampled examples stay in-range and wrap correctly") {
  auto lang = build_language(64, 7);
  Rng rng(3);
  for (int i = 0; i < 100; ++i) {
    auto ex = sample_example(lang, rng, 4, 12, 0.3);
    CHECK(ex.body.size() >= 4);
    CHECK(ex.body.size() <= 12);
    for (int t : ex.body) {
      CHECK(t >= lang.content_lo);
      CHECK(t < lang.content_hi());
    }
    if (ex.pattern_id >= 0) {
      CHECK(ex.body == lang.templates[static_cast<size_t>(ex.pattern_id)]);
      REQUIRE(ex.response.size() == 1);
      CHECK(ex.response[0] == lang.label_token(ex.pattern_id));
    }
    auto line = wrap_example(lang, ex);
    CHECK(line.front() == lang.eos);
    CHECK(line[1] == lang.user_marker);
    CHECK(line.back() == lang.eos);
  }
}

TEST_CASE("embed_text returns table rows") {
  auto lm = small_lm(11);
  const std::vector<int> one{5};
  auto e = lm.embed_text(std::span<const int>(one));
  CHECK(e.shape() == Shape{1, 8});
  for (size_t j = 0; j < 8; ++j) CHECK(e.at(0, j) == lm.embed.table.at(5, j));

  const std::vector<int> many{0, 3, 9, 3};
  auto em = lm.embed_text(std::span<const int>(many));
  CHECK(em.shape() == Shape{4, 8});
  for (size_t i = 0; i < many.size(); ++i)
    for (size_t j = 0; j < 8; ++j)
      CHECK(em.at(i, j) == lm.embed.table.at(static_cast<size_t>(many[i]), j));

  const std::vector<int> oov{16};
  CHECK_THROWS_AS(lm.embed_text(std::span<const int>(oov)), DataError);
}

TEST_CASE("forward_hidden is causal and matches layer composition") {
  auto lm = small_lm(13);
  Rng rng(5);
  auto x = TensorD::randn({6, 8}, rng);

  auto base = lm.forward_hidden(x);
  CHECK(base.shape() == Shape{6, 8});

  for (size_t j = 0; j < 6; ++j) {
    auto bumped = x.clone();
    bumped.mut(j, 1) += 0.25;
    auto h = lm.forward_hidden(bumped);
    for (size_t i = 0; i < j; ++i)
      for (size_t c = 0; c < 8; ++c) CHECK(h.at(i, c) == base.at(i, c));
  }

  auto composed = lm.final_ln.forward(lm.layers[1].forward(lm.layers[0].forward(x)));
  for (size_t i = 0; i < base.numel(); ++i) CHECK(base.at(i) == composed.at(i));

  CHECK_THROWS_AS(lm.forward_hidden(TensorD::zeros({3, 4})), ShapeError);
}

TEST_CASE("forward_mixed substitution identity is exact") {
  auto lm = small_lm(17);
  const std::vector<int> prefix{0, 1};
  const std::vector<int> body{4, 7, 9};
  const std::vector<int> suffix{2};

  auto injected = lm.embed_text(std::span<const int>(body));
  auto mixed = lm.forward_mixed(prefix, injected, suffix);

  std::vector<int> full;
  full.insert(full.end(), prefix.begin(), prefix.end());
  full.insert(full.end(), body.begin(), body.end());
  full.insert(full.end(), suffix.begin(), suffix.end());
  auto text = lm.forward_text(std::span<const int>(full));

  REQUIRE(mixed.shape() == text.shape());
  for (size_t i = 0; i < mixed.numel(); ++i) CHECK(mixed.at(i) == text.at(i));

  // M = 0 injection degenerates to the text path.
  auto empty = TensorD::zeros({0, 8});
  auto m0 = lm.forward_mixed(full, empty, {});
  for (size_t i = 0; i < m0.numel(); ++i) CHECK(m0.at(i) == text.at(i));

  CHECK_THROWS_AS(lm.forward_mixed(prefix, TensorD::zeros({2, 4}), suffix), ShapeError);
}

TEST_CASE("gradient reaches injected embeddings but not frozen weights") {
  Rng rng(19);
  ToyLM<double> lm(16, 8, 2, 2, 32, rng);
  lm.set_frozen(true);

  auto injected = TensorD::randn({3, 8}, rng);
  injected.set_requires_grad(true);
  const std::vector<int> prefix{0, 1};
  const std::vector<int> suffix{2};

  auto hidden = lm.forward_mixed(prefix, injected, suffix);
  backward(norm2(hidden));

  double inj_grad = 0;
  for (double g : injected.grad()) inj_grad += std::abs(g);
  CHECK(inj_grad > 0.0);

  ParamList<double> params;
  lm.collect_params("lm", params);
  for (const auto& p : params) {
    for (double g : p.tensor.grad()) CHECK(g == 0.0);
  }
}

TEST_CASE("next_token_logits matches the matmul oracle") {
  auto lm = small_lm(23);
  auto h0 = TensorD::zeros({8});
  auto z = lm.next_token_logits(h0);
  CHECK(z.shape() == Shape{16});
  for (size_t i = 0; i < 16; ++i) CHECK(z.at(i) == 0.0);
  auto u = softmax(z, 0);
  for (size_t i = 0; i < 16; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 16).epsilon(1e-12));

  Rng rng(2);
  auto h = TensorD::randn({8}, rng);
  auto logits = lm.next_token_logits(h);
  for (size_t v = 0; v < 16; ++v) {
    double want = 0;
    for (size_t j = 0; j < 8; ++j) want += lm.output_matrix.at(v, j) * h.at(j);
    CHECK(logits.at(v) == doctest::Approx(want).epsilon(1e-12));
  }

  double total = 0;
  auto p = softmax(logits, 0);
  for (size_t i = 0; i < 16; ++i) total += p.at(i);
  CHECK(std::abs(total - 1.0) < 1e-6);
}

TEST_CASE("score_labels matches log-softmax entries and chain-rule enumeration") {
  auto lm = small_lm(29);
  const std::vector<int> ctx_tokens{0, 1, 5, 2};
  auto ctx = lm.embed_text(std::span<const int>(ctx_tokens));

  std::vector<std::vector<int>> singles{{3}, {7}, {3}};
  auto scores = lm.score_labels(ctx, singles);
  REQUIRE(scores.size() == 3);
  CHECK(scores[0] == scores[2]);  // duplicated label, identical score

  auto hidden = lm.forward_hidden(lm.add_positions(ctx));
  auto logits = lm.next_token_logits(reshape(slice_rows(hidden, 3, 1), {8}));
  auto lsm = log_softmax(logits);
  CHECK(scores[0] == doctest::Approx(lsm.at(3)).epsilon(1e-12));
  CHECK(scores[1] == doctest::Approx(lsm.at(7)).epsilon(1e-12));

  // Two-token label against brute-force enumeration of the chain rule.
  std::vector<std::vector<int>> pair{{4, 9}};
  auto pair_score = lm.score_labels(ctx, pair)[0];
  const double term1 = lsm.at(4);
  std::vector<int> extended = ctx_tokens;
  extended.push_back(4);
  auto hidden2 = lm.forward_hidden(lm.add_positions(lm.embed_text(std::span<const int>(extended))));
  auto lsm2 = log_softmax(lm.next_token_logits(reshape(slice_rows(hidden2, 4, 1), {8})));
  CHECK(pair_score == doctest::Approx(term1 + lsm2.at(9)).epsilon(1e-10));

  CHECK_THROWS_AS(lm.score_labels(ctx, {std::vector<int>{}}), DataError);
}

TEST_CASE("greedy_decode is deterministic and matches a manual rollout") {
  auto lm = small_lm(31);
  const std::vector<int> ctx_tokens{0, 1, 6, 2};
  auto ctx = lm.embed_text(std::span<const int>(ctx_tokens));

  auto one = lm.greedy_decode(ctx, 1, 0);
  REQUIRE(one.size() == 1);
  auto hidden = lm.forward_hidden(lm.add_positions(ctx));
  auto logits = lm.next_token_logits(reshape(slice_rows(hidden, 3, 1), {8}));
  CHECK(one[0] == static_cast<int>(argmax(logits.data())));

  auto a = lm.greedy_decode(ctx, 3, 0);
  auto b = lm.greedy_decode(ctx, 3, 0);
  CHECK(a == b);

  // Manual three-step rollout.
  std::vector<int> manual;
  std::vector<int> seq = ctx_tokens;
  for (int s = 0; s < 3; ++s) {
    auto h = lm.forward_hidden(lm.add_positions(lm.embed_text(std::span<const int>(seq))));
    auto lg = lm.next_token_logits(reshape(slice_rows(h, seq.size() - 1, 1), {8}));
    const int tok = static_cast<int>(argmax(lg.data()));
    manual.push_back(tok);
    if (tok == 0) break;
    seq.push_back(tok);
  }
  CHECK(a == std::vector<int>(manual.begin(), manual.begin() + a.size()));
}

TEST_CASE("pretrain_lm beats the unigram baseline and freezes the model") {
  auto lang = build_language(64, 101);
  Rng crng(55);
  auto corpus = generate_corpus(lang, 220, 60, 4, 12, 0.3, crng);

  LmPretrainConfig cfg;
  cfg.steps = 220;
  cfg.batch_size = 8;
  cfg.width = 32;
  cfg.heads = 4;
  cfg.n_layers = 2;

  LmPretrainReport report;
  auto lm = pretrain_lm(corpus, cfg, 77, &report);
  CHECK(lm.frozen);
  CHECK(report.held_out_ppl <= 0.8 * report.unigram_ppl);
  CHECK(report.unigram_ppl == doctest::Approx(unigram_baseline_ppl(corpus)));

  // Frozen model: identical logits across calls, zero-grad parameters.
  const std::vector<int> probe{0, 1, 9, 2};
  auto h1 = lm.forward_text(std::span<const int>(probe));
  auto h2 = lm.forward_text(std::span<const int>(probe));
  for (size_t i = 0; i < h1.numel(); ++i) CHECK(h1.at(i) == h2.at(i));

  // Same seed, same weights.
  auto lm_again = pretrain_lm(corpus, cfg, 77, nullptr);
  ParamList<float> pa, pb;
  lm.collect_params("lm", pa);
  lm_again.collect_params("lm", pb);
  CHECK(param_checksum(pa) == param_checksum(pb));

  SyntheticCorpus empty;
  empty.language = lang;
  CHECK_THROWS_AS(pretrain_lm(empty, cfg, 5, nullptr), DataError);
}
