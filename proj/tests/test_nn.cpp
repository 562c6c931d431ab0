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
#include <vector>

#include "cmdl/nn.hpp"

using namespace cmdl;

namespace {

void zero_tensor(Tensor<double>& t) {
  for (size_t i = 0; i < t.numel(); ++i) t.mut(i) = 0.0;
}

}  // namespace

TEST_CASE("attend with a single key ignores query content") {
  Rng rng(31);
  AttentionBlock<double> block(8, 2, false, rng);
  auto kv = TensorD::randn({1, 8}, rng);
  auto q1 = TensorD::randn({3, 8}, rng);
  auto q2 = TensorD::randn({3, 8}, rng);

  auto y1 = attend(block, q1, kv);
  auto y2 = attend(block, q2, kv);
  REQUIRE(y1.shape() == Shape{3, 8});
  for (size_t i = 0; i < y1.numel(); ++i) CHECK(y1.at(i) == doctest::Approx(y2.at(i)).epsilon(1e-12));

  // softmax over one key is 1, so every row is W_o (V kv).
  auto expect = matmul(matmul(kv, block.w_v), block.w_o);
  for (size_t r = 0; r < 3; ++r)
    for (size_t c = 0; c < 8; ++c) CHECK(y1.at(r, c) == doctest::Approx(expect.at(0, c)).epsilon(1e-12));
}

TEST_CASE("attend with equal logits averages the value rows") {
  Rng rng(32);
  AttentionBlock<double> block(4, 1, false, rng);
  zero_tensor(block.w_q);  // all scores 0 -> uniform attention
  auto kv = TensorD::randn({5, 4}, rng);
  auto queries = TensorD::randn({2, 4}, rng);

  auto y = attend(block, queries, kv);
  auto v = matmul(kv, block.w_v);
  std::vector<double> mean_row(4, 0.0);
  for (size_t i = 0; i < 5; ++i)
    for (size_t j = 0; j < 4; ++j) mean_row[j] += v.at(i, j) / 5.0;
  auto projected = matmul(TensorD::from({1, 4}, mean_row), block.w_o);
  for (size_t r = 0; r < 2; ++r)
    for (size_t c = 0; c < 4; ++c) CHECK(y.at(r, c) == doctest::Approx(projected.at(0, c)).epsilon(1e-10));
}

TEST_CASE("attend matches direct single-head evaluation on 2 queries x 3 keys") {
  Rng rng(33);
  const size_t w = 4;
  AttentionBlock<double> block(w, 1, false, rng);
  auto queries = TensorD::randn({2, w}, rng);
  auto kv = TensorD::randn({3, w}, rng);

  auto got = attend(block, queries, kv);

  // Direct evaluation of softmax(Q Kt / sqrt(dk)) V followed by W_o.
  auto q = matmul(queries, block.w_q);
  auto k = matmul(kv, block.w_k);
  auto v = matmul(kv, block.w_v);
  std::vector<double> out(2 * w, 0.0);
  for (size_t i = 0; i < 2; ++i) {
    double logits[3];
    for (size_t j = 0; j < 3; ++j) {
      double dot = 0;
      for (size_t c = 0; c < w; ++c) dot += q.at(i, c) * k.at(j, c);
      logits[j] = dot / std::sqrt(static_cast<double>(w));
    }
    const double mx = std::max({logits[0], logits[1], logits[2]});
    double denom = 0;
    double weights[3];
    for (size_t j = 0; j < 3; ++j) {
      weights[j] = std::exp(logits[j] - mx);
      denom += weights[j];
    }
    for (size_t j = 0; j < 3; ++j) weights[j] /= denom;
    for (size_t c = 0; c < w; ++c)
      for (size_t j = 0; j < 3; ++j) out[i * w + c] += weights[j] * v.at(j, c);
  }
  auto expect = matmul(TensorD::from({2, w}, out), block.w_o);
  for (size_t i = 0; i < got.numel(); ++i) CHECK(got.at(i) == doctest::Approx(expect.at(i)).epsilon(1e-12));
}

TEST_CASE("attend validates mask and width shapes") {
  Rng rng(34);
  AttentionBlock<double> block(4, 2, false, rng);
  auto queries = TensorD::randn({2, 4}, rng);
  auto kv = TensorD::randn({3, 4}, rng);
  auto bad_mask = TensorD::zeros({2, 2});
  CHECK_THROWS_AS(attend(block, queries, kv, std::optional<TensorD>(bad_mask)), ShapeError);

  auto narrow = TensorD::randn({2, 2}, rng);
  CHECK_THROWS_AS(attend(block, narrow, kv), ShapeError);
}

TEST_CASE("causal masking only lets perturbations flow forward") {
  Rng rng(35);
  AttentionBlock<double> block(6, 3, true, rng);
  auto x = TensorD::randn({5, 6}, rng);
  auto base = attend(block, x, x);

  for (size_t j = 0; j < 5; ++j) {
    auto bumped = x.clone();
    bumped.mut(j, 2) += 0.5;
    auto y = attend(block, bumped, bumped);
    for (size_t i = 0; i < j; ++i)
      for (size_t c = 0; c < 6; ++c) CHECK(y.at(i, c) == base.at(i, c));
    // the perturbed position itself must change
    bool changed = false;
    for (size_t c = 0; c < 6; ++c) changed = changed || y.at(j, c) != base.at(j, c);
    CHECK(changed);
  }
}

TEST_CASE("transformer layer with zeroed output projections is the identity") {
  Rng rng(36);
  TransformerLayer<double> layer(8, 2, false, false, rng);
  zero_tensor(layer.self_attn.w_o);
  zero_tensor(layer.ffn_out.weight);
  zero_tensor(layer.ffn_out.bias);

  auto x = TensorD::randn({4, 8}, rng);
  auto y = layer.forward(x);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < x.numel(); ++i) CHECK(std::abs(y.at(i) - x.at(i)) < 1e-6);
}

TEST_CASE("transformer layer preserves shape and rejects stray cross input") {
  Rng rng(37);
  TransformerLayer<double> plain(8, 2, false, false, rng);
  TransformerLayer<double> crossy(8, 2, true, true, rng);
  auto x = TensorD::randn({5, 8}, rng);
  auto kv = TensorD::randn({7, 8}, rng);

  CHECK(plain.forward(x).shape() == Shape{5, 8});
  CHECK(crossy.forward(x, std::optional<TensorD>(kv)).shape() == Shape{5, 8});
  CHECK_THROWS_AS(plain.forward(x, std::optional<TensorD>(kv)), UsageError);
  CHECK_THROWS_AS(crossy.forward(x), UsageError);
}

TEST_CASE("gradient through a two-layer stack passes grad_check") {
  Rng rng(38);
  TransformerLayer<double> l0(4, 2, true, false, rng);
  TransformerLayer<double> l1(4, 2, true, false, rng);

  auto f = [&](const TensorD& probe) {
    auto h = l1.forward(l0.forward(reshape(probe, {3, 4})));
    return norm2(h);
  };
  CHECK(grad_check<double>(f, TensorD::randn({12}, rng, 0.8), 1e-5) < 1e-4);
}

TEST_CASE("gradient through cross attention reaches the kv source") {
  Rng rng(39);
  TransformerLayer<double> layer(4, 2, true, true, rng);

  auto f = [&](const TensorD& probe) {
    auto queries = TensorD::from({2, 4}, {0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8});
    auto h = layer.forward(queries, std::optional<TensorD>(reshape(probe, {3, 4})));
    return norm2(h);
  };
  CHECK(grad_check<double>(f, TensorD::randn({12}, rng, 0.8), 1e-5) < 1e-4);
}

TEST_CASE("sinusoidal positions closed forms and bounds") {
  auto pe = sinusoidal_positions<double>(4, 6);
  for (size_t i = 0; i < 3; ++i) {
    CHECK(pe.at(0, 2 * i) == doctest::Approx(0.0));
    CHECK(pe.at(0, 2 * i + 1) == doctest::Approx(1.0));
  }
  for (size_t i = 0; i < pe.numel(); ++i) {
    CHECK(pe.at(i) <= 1.0);
    CHECK(pe.at(i) >= -1.0);
  }

  auto tiny = sinusoidal_positions<double>(2, 2);
  CHECK(tiny.at(1, 0) == doctest::Approx(std::sin(1.0)).epsilon(1e-15));
  CHECK(tiny.at(1, 1) == doctest::Approx(std::cos(1.0)).epsilon(1e-15));

  CHECK_THROWS_AS(sinusoidal_positions<double>(4, 5), ConfigError);
}
