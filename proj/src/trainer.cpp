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

#include "cmdl/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

namespace cmdl {

double lr_at(size_t step, const TrainConfig& cfg) {
  if (cfg.total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (!(cfg.warmup_fraction > 0.0 && cfg.warmup_fraction < 1.0)) {
    throw ConfigError("warmup_fraction must lie in (0,1), got " + std::to_string(cfg.warmup_fraction));
  }
  if (step > cfg.total_steps) {
    throw UsageError("lr_at: step " + std::to_string(step) + " beyond total_steps " +
                     std::to_string(cfg.total_steps));
  }
  const double w = cfg.warmup_fraction * static_cast<double>(cfg.total_steps);
  const double s = static_cast<double>(step);
  if (s < w) return cfg.base_lr * s / w;
  const double progress = (s - w) / (static_cast<double>(cfg.total_steps) - w);
  return cfg.base_lr * 0.5 * (1.0 + std::cos(progress * 3.14159265358979323846));
}

AdamW::AdamW(ParamList<float> params, double beta1, double beta2, double eps, double weight_decay)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  m_.resize(params_.size());
  v_.resize(params_.size());
  for (size_t i = 0; i < params_.size(); ++i) {
    m_[i].assign(params_[i].tensor.numel(), 0.0);
    v_[i].assign(params_[i].tensor.numel(), 0.0);
  }
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

double AdamW::grad_norm() const {
  double acc = 0.0;
  for (const auto& p : params_) {
    for (float g : p.tensor.grad()) acc += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(acc);
}

void AdamW::scale_grads(float factor) {
  for (auto& p : params_) {
    auto node = p.tensor.node();
    node->ensure_grad();
    for (float& g : node->grad) g *= factor;
  }
}

void AdamW::step(double lr) {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (size_t i = 0; i < params_.size(); ++i) {
    auto node = params_[i].tensor.node();
    node->ensure_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (size_t j = 0; j < node->values.size(); ++j) {
      const double g = static_cast<double>(node->grad[j]);
      if (!std::isfinite(g)) {
        throw TrainingError("non-finite gradient in parameter '" + params_[i].name + "'");
      }
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      const double theta = static_cast<double>(node->values[j]);
      node->values[j] =
          static_cast<float>(theta - lr * (m_hat / (std::sqrt(v_hat) + eps_) + weight_decay_ * theta));
    }
  }
}

namespace {

template <typename T>
void put_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::ifstream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("checkpoint truncated");
  return v;
}

constexpr char kMagic[4] = {'C', 'M', 'D', 'L'};
constexpr uint32_t kVersion = 1;

}  // namespace

void save_checkpoint(const ParamList<float>& tensors, const std::string& path) {
  std::unordered_set<std::string> seen;
  for (const auto& t : tensors) {
    if (!seen.insert(t.name).second) {
      throw FormatError("duplicate tensor name '" + t.name + "' in checkpoint");
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(kMagic, 4);
  put_raw(out, kVersion);
  put_raw(out, static_cast<uint64_t>(tensors.size()));
  for (const auto& t : tensors) {
    put_raw(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put_raw(out, static_cast<uint32_t>(t.tensor.rank()));
    for (size_t d : t.tensor.shape()) put_raw(out, static_cast<uint64_t>(d));
    put_raw(out, static_cast<uint8_t>(0));  // f32
    const auto data = t.tensor.data();
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing checkpoint to " + path);
}

ParamList<float> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError(path + ": bad checkpoint magic");
  }
  const uint32_t version = get_raw<uint32_t>(in);
  if (version != kVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  const uint64_t count = get_raw<uint64_t>(in);
  ParamList<float> out;
  out.reserve(count);
  std::unordered_set<std::string> seen;
  for (uint64_t i = 0; i < count; ++i) {
    const uint32_t name_len = get_raw<uint32_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in) throw FormatError(path + ": truncated tensor name");
    if (!seen.insert(name).second) {
      throw FormatError(path + ": duplicate tensor name '" + name + "'");
    }
    const uint32_t rank = get_raw<uint32_t>(in);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<size_t>(get_raw<uint64_t>(in));
    const uint8_t dtype = get_raw<uint8_t>(in);
    if (dtype != 0) throw FormatError(path + ": unsupported dtype tag " + std::to_string(dtype));
    std::vector<float> values(shape_numel(shape));
    in.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (!in) throw FormatError(path + ": truncated tensor data for '" + name + "'");
    out.push_back({std::move(name), Tensor<float>::from(std::move(shape), std::move(values))});
  }
  return out;
}

void load_checkpoint_into(const std::string& path, ParamList<float>& dest) {
  auto loaded = load_checkpoint(path);
  std::unordered_map<std::string, Tensor<float>*> by_name;
  for (auto& t : loaded) by_name[t.name] = &t.tensor;
  if (loaded.size() != dest.size()) {
    throw FormatError(path + ": checkpoint has " + std::to_string(loaded.size()) + " tensors, model has " +
                      std::to_string(dest.size()));
  }
  for (auto& d : dest) {
    auto it = by_name.find(d.name);
    if (it == by_name.end()) throw FormatError(path + ": missing tensor '" + d.name + "'");
    if (it->second->shape() != d.tensor.shape()) {
      throw FormatError(path + ": shape mismatch for '" + d.name + "': file " +
                        shape_str(it->second->shape()) + ", model " + shape_str(d.tensor.shape()));
    }
    d.tensor.copy_values_from(*it->second);
  }
}

uint64_t param_checksum(const ParamList<float>& params) {
  uint64_t h = 1469598103934665603ULL;
  auto mix_bytes = [&h](const void* data, size_t len) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& p : params) {
    mix_bytes(p.name.data(), p.name.size());
    const auto data = p.tensor.data();
    mix_bytes(data.data(), data.size() * sizeof(float));
  }
  return h;
}

}  // namespace cmdl
