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

#include <algorithm>
#include <cmath>

#include "cmdl/evalkit.hpp"

using namespace cmdl;

namespace {

// Independent oracle: full confusion-matrix F1 computation.
double f1_oracle(const std::vector<int>& preds, const std::vector<int>& golds,
                 const std::vector<int>& labels) {
  double total = 0.0;
  for (int c : labels) {
    double tp = 0, fp = 0, fn = 0, support = 0;
    for (size_t i = 0; i < preds.size(); ++i) {
      if (preds[i] == c && golds[i] == c) tp++;
      if (preds[i] == c && golds[i] != c) fp++;
      if (preds[i] != c && golds[i] == c) fn++;
      if (golds[i] == c) support++;
    }
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f1 = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    total += f1 * support / static_cast<double>(golds.size());
  }
  return total;
}

}  // namespace

TEST_CASE("accuracy basics") {
  const std::vector<int> g{1, 0, 1, 0};
  CHECK(accuracy(g, g) == 1.0);
  const std::vector<int> flipped{0, 1, 0, 1};
  CHECK(accuracy(flipped, g) == 0.0);
  const std::vector<int> threeoffour{1, 0, 1, 1};
  CHECK(accuracy(threeoffour, g) == 0.75);
  const std::vector<int> shorter{1, 0};
  CHECK_THROWS_AS(accuracy(shorter, g), UsageError);
}

TEST_CASE("weighted_f1 closed forms") {
  const std::vector<int> labels{0, 1};
  const std::vector<int> golds{0, 0, 1, 1};
  CHECK(weighted_f1(golds, golds, labels) == 1.0);

  // All-one-class predictions on a 50/50 set: weighted F1 = 1/3.
  const std::vector<int> all_ones{1, 1, 1, 1};
  CHECK(weighted_f1(all_ones, golds, labels) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  const std::vector<int> bad{2, 0, 1, 1};
  CHECK_THROWS_AS(weighted_f1(bad, golds, labels), DataError);
}

TEST_CASE("weighted_f1 matches the confusion-matrix oracle on random 3-class sets") {
  const std::vector<int> labels{0, 1, 2};
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const size_t n = 5 + rng.uniform_index(40);
    std::vector<int> preds(n), golds(n);
    for (size_t i = 0; i < n; ++i) {
      preds[i] = static_cast<int>(rng.uniform_index(3));
      golds[i] = static_cast<int>(rng.uniform_index(3));
    }
    CHECK(std::abs(weighted_f1(preds, golds, labels) - f1_oracle(preds, golds, labels)) < 1e-12);
    CHECK(weighted_f1(preds, golds, labels) <= 1.0);
    if (preds != golds) CHECK(weighted_f1(preds, golds, labels) < 1.0);
  }
}

TEST_CASE("paired_bootstrap degenerate and shifted cases") {
  std::vector<double> a(50), b(50);
  Rng rng(5);
  for (size_t i = 0; i < 50; ++i) a[i] = b[i] = rng.normal();
  auto same = paired_bootstrap(a, b, 1000, 7);
  CHECK(same.observed_diff == 0.0);
  CHECK(same.p_value == 1.0);
  CHECK(same.ci_lo <= same.ci_hi);

  for (size_t i = 0; i < 50; ++i) a[i] = b[i] + 10.0;
  auto shifted = paired_bootstrap(a, b, 10000, 7);
  CHECK(shifted.observed_diff == doctest::Approx(10.0));
  CHECK(shifted.p_value <= 2.0 / 10000.0);
  CHECK(shifted.ci_lo <= shifted.observed_diff);
  CHECK(shifted.observed_diff <= shifted.ci_hi);

  const std::vector<double> tiny{1.0};
  CHECK_THROWS_AS(paired_bootstrap(tiny, tiny, 1000, 1), UsageError);
  CHECK_THROWS_AS(paired_bootstrap(a, b, 50, 1), UsageError);
}

TEST_CASE("paired_bootstrap is invariant to jointly permuting the pairs") {
  Rng rng(11);
  std::vector<double> a(40), b(40);
  for (size_t i = 0; i < 40; ++i) {
    a[i] = rng.normal();
    b[i] = rng.normal() * 0.5 + 0.1;
  }
  auto base = paired_bootstrap(a, b, 2000, 99);

  std::vector<size_t> perm(40);
  for (size_t i = 0; i < 40; ++i) perm[i] = i;
  Rng prng(3);
  prng.shuffle(perm);
  std::vector<double> pa(40), pb(40);
  for (size_t i = 0; i < 40; ++i) {
    pa[i] = a[perm[i]];
    pb[i] = b[perm[i]];
  }
  auto permuted = paired_bootstrap(pa, pb, 2000, 99);
  CHECK(permuted.p_value == base.p_value);
  CHECK(permuted.observed_diff == doctest::Approx(base.observed_diff).epsilon(1e-12));
  CHECK(permuted.ci_lo == base.ci_lo);
  CHECK(permuted.ci_hi == base.ci_hi);
}

TEST_CASE("paired_bootstrap type-I rate sits near alpha on null data") {
  // Light version of the calibration run; the acceptance suite runs the
  // full 1000-trial protocol.
  Rng rng(2024);
  size_t rejections = 0;
  const size_t trials = 300;
  for (size_t t = 0; t < trials; ++t) {
    std::vector<double> a(40), b(40);
    for (size_t i = 0; i < 40; ++i) {
      a[i] = rng.normal();
      b[i] = rng.normal();
    }
    auto rep = paired_bootstrap(a, b, 800, rng.next_u64());
    rejections += rep.p_value < 0.05 ? 1 : 0;
  }
  const double rate = static_cast<double>(rejections) / static_cast<double>(trials);
  CHECK(rate >= 0.015);
  CHECK(rate <= 0.095);
}

TEST_CASE("first-token agreement: text-path self-comparison is perfect") {
  Rng rng(31);
  ToyLM<float> teacher(64, 32, 2, 4, 64, rng);
  teacher.set_frozen(true);
  PromptTemplate prompt{{0, 1}, {2}};

  Rng brng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> body(3 + brng.uniform_index(5));
    for (auto& t : body) t = 3 + static_cast<int>(brng.uniform_index(57));
    const int x = first_token_argmax_text(teacher, std::span<const int>(body), prompt);
    const int y = first_token_argmax_text(teacher, std::span<const int>(body), prompt);
    CHECK(x == y);
    CHECK(x >= 0);
    CHECK(x < 64);
  }
}

TEST_CASE("untrained adapter agreement sits near chance; substitution is monotone") {
  const MelGeometry geom{16000, 400, 160, 16};
  auto lang = build_language(64, 7);
  auto spec = default_synth_spec(64, geom);

  // A pretrained teacher spreads its response-start argmaxes; a random one
  // concentrates them and the chance bound below would be meaningless.
  Rng crng0(55);
  auto corpus = generate_corpus(lang, 400, 80, 4, 12, 0.25, crng0);
  LmPretrainConfig lmcfg;
  lmcfg.steps = 400;
  lmcfg.batch_size = 8;
  lmcfg.width = 32;
  lmcfg.heads = 4;
  lmcfg.n_layers = 2;
  auto teacher = pretrain_lm(corpus, lmcfg, 77, nullptr);

  StudentPipeline<float> student;
  Rng srng(43);
  student.encoder = AudioEncoder<float>(geom, 16, 1, 2, srng);
  student.adapter = scratch_adapter<float>(16, 32, 8, 1, 2, srng);

  Rng crng(47);
  std::vector<ToyExample> seeds;
  for (size_t i = 0; i < 120; ++i) seeds.push_back(sample_example(lang, crng, 4, 8, 0.25));
  auto dataset = synthesize_dataset(seeds, spec, "dev", "d", 555);

  PromptTemplate prompt{{0, 1}, {2}};
  auto result = first_token_agreement(student, teacher, dataset, prompt);
  REQUIRE(result.records.size() == 120);

  // Untrained: near 1/V within 3 binomial sigma.
  const double chance = 1.0 / 64.0;
  const double sigma = std::sqrt(chance * (1 - chance) / 120.0);
  CHECK(result.rate <= chance + 3 * sigma);

  // Replacing any student argmax with the teacher's cannot lower agreement.
  auto records = result.records;
  size_t hits = 0;
  for (auto& r : records) {
    if (r.metric < 0.5) r.student_argmax = r.teacher_argmax;
    hits += r.student_argmax == r.teacher_argmax ? 1 : 0;
  }
  CHECK(static_cast<double>(hits) / 120.0 >= result.rate);

  CHECK_THROWS_AS(first_token_agreement(student, teacher, std::span<const AudioExample>(), prompt),
                  DataError);
}
