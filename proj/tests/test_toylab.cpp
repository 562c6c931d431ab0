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
#include <sstream>

#include "cmdl/errors.hpp"
#include "cmdl/toylab.hpp"

using namespace cmdl;

namespace {

ToyRunConfig small_cfg() {
  ToyRunConfig cfg;
  cfg.vocab = 500;
  cfg.dim = 16;
  cfg.runs = 6;
  cfg.steps = 100;
  cfg.seed = 99;
  cfg.threads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("zero learning rate leaves both arms at the initial KL") {
  auto cfg = small_cfg();
  cfg.lr = 0.0;
  auto res = run_toy(cfg);
  REQUIRE(res.records.size() == cfg.runs);
  for (const auto& r : res.records) {
    CHECK(r.final_kl_l2 == doctest::Approx(r.initial_kl).epsilon(1e-12));
    CHECK(r.final_kl_kl == doctest::Approx(r.initial_kl).epsilon(1e-12));
    CHECK(r.final_kl_l2 == r.final_kl_kl);
  }
}

TEST_CASE("L2 arm converges and its final KL is tiny at dim 16") {
  auto cfg = small_cfg();
  auto res = run_toy(cfg);
  for (const auto& r : res.records) {
    // 100 steps of x <- x - 0.2 (x - t) contract the gap below 1e-6 easily.
    CHECK(r.final_kl_l2 < 1e-3);
    CHECK(r.final_kl_l2 >= -1e-12);
    CHECK(r.final_kl_kl >= -1e-12);
    CHECK(r.initial_kl >= -1e-12);
    CHECK(!r.flagged);
  }
  CHECK(res.flagged_runs == 0);
}

TEST_CASE("identical seed and any thread count give identical results") {
  auto cfg = small_cfg();
  auto a = run_toy(cfg);
  auto b = run_toy(cfg);
  cfg.threads = 1;
  auto c = run_toy(cfg);
  for (size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].final_kl_l2 == b.records[i].final_kl_l2);
    CHECK(a.records[i].final_kl_kl == b.records[i].final_kl_kl);
    CHECK(a.records[i].final_kl_l2 == c.records[i].final_kl_l2);
    CHECK(a.records[i].final_kl_kl == c.records[i].final_kl_kl);
    CHECK(a.records[i].initial_kl == c.records[i].initial_kl);
  }
}

TEST_CASE("direct-KL arm falls behind as dimension grows") {
  ToyRunConfig cfg;
  cfg.vocab = 2000;
  cfg.runs = 5;
  cfg.steps = 100;
  cfg.seed = 5;
  cfg.threads = 2;

  cfg.dim = 128;
  auto big = run_toy(cfg);
  CHECK(big.mean_l2 < big.mean_kl);

  cfg.dim = 8;
  auto small = run_toy(cfg);
  const double gap_small = small.mean_kl - small.mean_l2;
  const double gap_big = big.mean_kl - big.mean_l2;
  CHECK(gap_big > gap_small);
}

TEST_CASE("sweep layout, csv schema, and single-dim equivalence") {
  auto cfg = small_cfg();
  cfg.runs = 4;

  auto single = sweep({16}, cfg);
  auto direct = run_toy(cfg);
  REQUIRE(single.per_dim.size() == 1);
  for (size_t r = 0; r < cfg.runs; ++r) {
    CHECK(single.per_dim[0].records[r].final_kl_l2 == direct.records[r].final_kl_l2);
    CHECK(single.per_dim[0].records[r].final_kl_kl == direct.records[r].final_kl_kl);
  }

  auto multi = sweep({8, 16}, cfg);
  CHECK(multi.rows.size() == 2 * cfg.runs * 2);

  auto csv = sweep_csv(multi, false);
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  CHECK(line == "dim,arm,run,final_kl");
  size_t rows = 0;
  while (std::getline(is, line)) ++rows;
  CHECK(rows == multi.rows.size());

  CHECK_THROWS_AS(sweep({16, 8}, cfg), ConfigError);
  CHECK_THROWS_AS(sweep({}, cfg), ConfigError);
}

TEST_CASE("lr sweep repeats dims per rate and adds the lr column") {
  auto cfg = small_cfg();
  cfg.runs = 3;
  auto swept = sweep_lr({8}, cfg, {0.01, 0.1});
  CHECK(swept.per_dim.size() == 2);
  CHECK(swept.rows.size() == 2 * 3 * 2);
  auto csv = sweep_csv(swept, true);
  CHECK(csv.rfind("dim,arm,run,final_kl,lr\n", 0) == 0);
}

TEST_CASE("spearman_rho closed forms") {
  CHECK(spearman_rho({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman_rho({1, 2, 3, 4}, {9, 7, 5, 3}) == doctest::Approx(-1.0));
  const double rho = spearman_rho({1, 2, 3, 4, 5}, {2, 1, 3, 5, 4});
  CHECK(rho > 0.0);
  CHECK(rho < 1.0);
  CHECK_THROWS_AS(spearman_rho({1}, {2}), UsageError);
}
