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

// Single-hidden-state optimization study: a student state h_s chases a
// teacher state h_t under (a) the L2 loss and (b) the exact full-softmax KL,
// sharing O, h_t and the initial h_s per run. Final KL under each arm is
// recorded per run and dimension. Gradients and KL values are computed in
// f64 from log-sum-exp-stable logits; O is stored in f32 for bandwidth.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmdl {

struct ToyRunConfig {
  size_t dim = 64;
  size_t vocab = 32000;
  size_t steps = 100;
  size_t runs = 100;
  double lr = 0.1;  // same step size for both arms
  uint64_t seed = 0;
  size_t threads = 0;  // 0 = hardware concurrency
};

struct ToyRunRecord {
  double initial_kl = 0.0;   // shared by both arms at step 0
  double final_kl_l2 = 0.0;  // arm A: squared-L2 descent on h_s
  double final_kl_kl = 0.0;  // arm B: exact KL descent on h_s
  bool flagged = false;      // non-finite value clamped during arm B
};

struct ToyResult {
  ToyRunConfig config;
  std::vector<ToyRunRecord> records;  // one per run, in run order
  double mean_l2 = 0.0, std_l2 = 0.0;
  double mean_kl = 0.0, std_kl = 0.0;
  size_t flagged_runs = 0;
};

ToyResult run_toy(const ToyRunConfig& cfg);

struct SweepRow {
  size_t dim = 0;
  std::string arm;  // "l2" | "kl"
  size_t run = 0;
  double final_kl = 0.0;
  double lr = 0.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;           // ordered by (dim, arm, run)
  std::vector<ToyResult> per_dim;       // one per requested dim (per lr in sweep mode)
};

inline std::vector<size_t> default_toylab_dims() { return {8, 16, 32, 64, 128, 256, 512, 1024}; }

// One run_toy per dimension (ascending); with several learning rates the
// sweep repeats per lr and rows carry the lr column.
SweepResult sweep(const std::vector<size_t>& dims, const ToyRunConfig& cfg);
SweepResult sweep_lr(const std::vector<size_t>& dims, const ToyRunConfig& cfg,
                     const std::vector<double>& lrs);

// CSV emitters: header "dim,arm,run,final_kl" (plus ",lr" when with_lr).
std::string sweep_csv(const SweepResult& result, bool with_lr);

// Spearman rank correlation with average ranks for ties.
double spearman_rho(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace cmdl
