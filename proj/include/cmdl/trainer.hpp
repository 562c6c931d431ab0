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

// AdamW with decoupled weight decay, the linear-warmup + cosine-decay
// schedule, and the binary checkpoint format shared by every model.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmdl/nn.hpp"

namespace cmdl {

enum class TrainArm { full, distill_only, align_only };
enum class InitMode { decoder, scratch };

// Desk-scale defaults tuned for CPU minutes. The reference run this mirrors
// used total_steps=4300, batch_size=512, base_lr=5e-5, weight_decay=0.1 and
// the same 1% warmup on a TPU pod; those values are documented in the README
// and config docs next to these.
struct TrainConfig {
  size_t total_steps = 600;
  size_t batch_size = 16;
  double base_lr = 1e-3;
  double weight_decay = 0.1;
  double warmup_fraction = 0.01;
  uint64_t seed = 42;
  TrainArm arm = TrainArm::full;
  InitMode init_mode = InitMode::decoder;
  bool freeze_encoder = false;
  double lambda_con = 1.0;
  double clip_norm = 1.0;  // global-norm clip; <= 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

// Linear warmup over the first warmup_fraction of steps, then cosine decay
// to zero at total_steps.
double lr_at(size_t step, const TrainConfig& cfg);

class AdamW {
 public:
  AdamW(ParamList<float> params, double beta1, double beta2, double eps, double weight_decay);

  explicit AdamW(ParamList<float> params, const TrainConfig& cfg)
      : AdamW(std::move(params), cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay) {}

  void zero_grad();
  // One decoupled-weight-decay update from the gradients currently stored on
  // the parameter tensors. Throws TrainingError naming the parameter on a
  // non-finite gradient.
  void step(double lr);

  // Global gradient norm across all parameters; used for clipping.
  double grad_norm() const;
  void scale_grads(float factor);

  const ParamList<float>& params() const { return params_; }

 private:
  ParamList<float> params_;
  std::vector<std::vector<double>> m_;  // f64 moments keep the update rule exact
  std::vector<std::vector<double>> v_;
  double beta1_, beta2_, eps_, weight_decay_;
  size_t step_count_ = 0;
};

// Checkpoint format: magic "CMDL", version u32 LE, tensor count u64 LE, then
// per tensor: name length u32 + UTF-8 name bytes, rank u32, dims u64 each,
// dtype tag u8 (0 = f32), raw little-endian values.
void save_checkpoint(const ParamList<float>& tensors, const std::string& path);
ParamList<float> load_checkpoint(const std::string& path);
// Copies values into an existing registry by name; throws FormatError when
// names or shapes do not line up exactly.
void load_checkpoint_into(const std::string& path, ParamList<float>& dest);

// FNV-1a over the raw bytes of all parameter values, in registry order.
uint64_t param_checksum(const ParamList<float>& params);

}  // namespace cmdl
