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

#include "cmdl/toylab.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <thread>

#include "cmdl/errors.hpp"
#include "cmdl/rng.hpp"

namespace cmdl {

namespace {

// Per-thread scratch reused across runs; O dominates at vocab x dim floats.
struct Scratch {
  std::vector<float> o;
  std::vector<double> h_t, h_s, p_t, logits, probs, grad;

  void resize(size_t vocab, size_t dim) {
    o.resize(vocab * dim);
    h_t.resize(dim);
    h_s.resize(dim);
    p_t.resize(vocab);
    logits.resize(vocab);
    probs.resize(vocab);
    grad.resize(dim);
  }
};

void fill_normal_rows(std::vector<float>& o, size_t vocab, size_t dim, const Rng& run_rng) {
  for (size_t v = 0; v < vocab; ++v) {
    Rng row = run_rng.split(1000 + v);
    float* dst = o.data() + v * dim;
    for (size_t j = 0; j < dim; ++j) dst[j] = static_cast<float>(row.normal());
  }
}

void matvec(const std::vector<float>& o, size_t vocab, size_t dim, const std::vector<double>& h,
            std::vector<double>& out) {
  for (size_t v = 0; v < vocab; ++v) {
    const float* row = o.data() + v * dim;
    double acc = 0.0;
    for (size_t j = 0; j < dim; ++j) acc += static_cast<double>(row[j]) * h[j];
    out[v] = acc;
  }
}

void softmax_from_logits(const std::vector<double>& logits, std::vector<double>& probs) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double denom = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    probs[i] = std::exp(logits[i] - mx);
    denom += probs[i];
  }
  for (double& p : probs) p /= denom;
}

double log_sum_exp(const std::vector<double>& logits) {
  double mx = logits[0];
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

// KL(p_t || softmax(logits_s)) with exact log-probabilities on both sides.
double kl_from_logits(const std::vector<double>& p_t, const std::vector<double>& logits_t,
                      const std::vector<double>& logits_s) {
  const double lse_t = log_sum_exp(logits_t);
  const double lse_s = log_sum_exp(logits_s);
  double kl = 0.0;
  for (size_t v = 0; v < p_t.size(); ++v) {
    if (p_t[v] <= 0.0) continue;
    kl += p_t[v] * ((logits_t[v] - lse_t) - (logits_s[v] - lse_s));
  }
  return kl;
}

ToyRunRecord run_one(const ToyRunConfig& cfg, size_t run_index, Scratch& s) {
  const size_t v = cfg.vocab, d = cfg.dim;
  Rng run_rng = Rng(cfg.seed).split(cfg.dim).split(run_index);

  fill_normal_rows(s.o, v, d, run_rng);
  {
    Rng r = run_rng.split(1);
    for (auto& x : s.h_t) x = r.normal();
  }
  std::vector<double> h_s0(d);
  {
    Rng r = run_rng.split(2);
    for (auto& x : h_s0) x = r.normal();
  }

  std::vector<double> logits_t(v);
  matvec(s.o, v, d, s.h_t, logits_t);
  softmax_from_logits(logits_t, s.p_t);

  ToyRunRecord rec;
  matvec(s.o, v, d, h_s0, s.logits);
  rec.initial_kl = kl_from_logits(s.p_t, logits_t, s.logits);

  // Arm A: gradient of ||h_s - h_t||^2 is 2 (h_s - h_t).
  s.h_s = h_s0;
  for (size_t step = 0; step < cfg.steps; ++step) {
    for (size_t j = 0; j < d; ++j) s.h_s[j] -= cfg.lr * 2.0 * (s.h_s[j] - s.h_t[j]);
  }
  matvec(s.o, v, d, s.h_s, s.logits);
  rec.final_kl_l2 = kl_from_logits(s.p_t, logits_t, s.logits);

  // Arm B: exact KL gradient Ot (softmax(O h_s) - p_t).
  s.h_s = h_s0;
  for (size_t step = 0; step < cfg.steps; ++step) {
    matvec(s.o, v, d, s.h_s, s.logits);
    softmax_from_logits(s.logits, s.probs);
    std::fill(s.grad.begin(), s.grad.end(), 0.0);
    for (size_t row = 0; row < v; ++row) {
      const double delta = s.probs[row] - s.p_t[row];
      if (delta == 0.0) continue;
      const float* orow = s.o.data() + row * d;
      for (size_t j = 0; j < d; ++j) s.grad[j] += delta * static_cast<double>(orow[j]);
    }
    bool bad = false;
    for (size_t j = 0; j < d; ++j) {
      if (!std::isfinite(s.grad[j])) {
        s.grad[j] = 0.0;
        bad = true;
      }
    }
    if (bad) rec.flagged = true;
    for (size_t j = 0; j < d; ++j) s.h_s[j] -= cfg.lr * s.grad[j];
  }
  matvec(s.o, v, d, s.h_s, s.logits);
  rec.final_kl_kl = kl_from_logits(s.p_t, logits_t, s.logits);
  if (!std::isfinite(rec.final_kl_kl)) {
    rec.final_kl_kl = 1e300;
    rec.flagged = true;
  }
  return rec;
}

void summarize(ToyResult& result) {
  const size_t n = result.records.size();
  double sum_l2 = 0, sum_kl = 0;
  for (const auto& r : result.records) {
    sum_l2 += r.final_kl_l2;
    sum_kl += r.final_kl_kl;
    result.flagged_runs += r.flagged ? 1 : 0;
  }
  result.mean_l2 = sum_l2 / static_cast<double>(n);
  result.mean_kl = sum_kl / static_cast<double>(n);
  double var_l2 = 0, var_kl = 0;
  for (const auto& r : result.records) {
    var_l2 += (r.final_kl_l2 - result.mean_l2) * (r.final_kl_l2 - result.mean_l2);
    var_kl += (r.final_kl_kl - result.mean_kl) * (r.final_kl_kl - result.mean_kl);
  }
  result.std_l2 = std::sqrt(var_l2 / static_cast<double>(n));
  result.std_kl = std::sqrt(var_kl / static_cast<double>(n));
}

}  // namespace

ToyResult run_toy(const ToyRunConfig& cfg) {
  if (cfg.dim < 1 || cfg.vocab < 2) {
    throw ConfigError("run_toy: need dim >= 1 and vocab >= 2, got dim=" + std::to_string(cfg.dim) +
                      " vocab=" + std::to_string(cfg.vocab));
  }
  ToyResult result;
  result.config = cfg;
  result.records.resize(cfg.runs);

  size_t threads = cfg.threads == 0 ? std::thread::hardware_concurrency() : cfg.threads;
  threads = std::max<size_t>(1, std::min(threads, cfg.runs));

  // Runs are independent; records land at their run index so thread
  // scheduling cannot reorder output.
  std::atomic<size_t> next{0};
  auto worker = [&]() {
    Scratch scratch;
    scratch.resize(cfg.vocab, cfg.dim);
    while (true) {
      const size_t r = next.fetch_add(1);
      if (r >= cfg.runs) break;
      result.records[r] = run_one(cfg, r, scratch);
    }
  };
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  summarize(result);
  return result;
}

namespace {

void append_rows(SweepResult& out, const ToyResult& result, double lr) {
  for (size_t r = 0; r < result.records.size(); ++r) {
    out.rows.push_back({result.config.dim, "l2", r, result.records[r].final_kl_l2, lr});
  }
  for (size_t r = 0; r < result.records.size(); ++r) {
    out.rows.push_back({result.config.dim, "kl", r, result.records[r].final_kl_kl, lr});
  }
}

}  // namespace

SweepResult sweep(const std::vector<size_t>& dims, const ToyRunConfig& cfg) {
  if (dims.empty()) throw ConfigError("sweep: no dimensions given");
  if (!std::is_sorted(dims.begin(), dims.end())) {
    throw ConfigError("sweep: dimensions must be ascending");
  }
  SweepResult out;
  for (size_t dim : dims) {
    ToyRunConfig per = cfg;
    per.dim = dim;
    auto result = run_toy(per);
    append_rows(out, result, cfg.lr);
    out.per_dim.push_back(std::move(result));
  }
  return out;
}

SweepResult sweep_lr(const std::vector<size_t>& dims, const ToyRunConfig& cfg,
                     const std::vector<double>& lrs) {
  if (lrs.empty()) throw ConfigError("sweep_lr: no learning rates given");
  SweepResult out;
  for (size_t dim : dims) {
    for (double lr : lrs) {
      ToyRunConfig per = cfg;
      per.dim = dim;
      per.lr = lr;
      auto result = run_toy(per);
      append_rows(out, result, lr);
      out.per_dim.push_back(std::move(result));
    }
  }
  return out;
}

std::string sweep_csv(const SweepResult& result, bool with_lr) {
  std::string csv = with_lr ? "dim,arm,run,final_kl,lr\n" : "dim,arm,run,final_kl\n";
  char buf[160];
  for (const auto& row : result.rows) {
    if (with_lr) {
      std::snprintf(buf, sizeof(buf), "%zu,%s,%zu,%.12g,%.12g\n", row.dim, row.arm.c_str(), row.run,
                    row.final_kl, row.lr);
    } else {
      std::snprintf(buf, sizeof(buf), "%zu,%s,%zu,%.12g\n", row.dim, row.arm.c_str(), row.run,
                    row.final_kl);
    }
    csv += buf;
  }
  return csv;
}

double spearman_rho(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw UsageError("spearman_rho: need matched series");
  auto ranks = [](const std::vector<double>& v) {
    const size_t n = v.size();
    std::vector<size_t> idx(n);
    std::iota(idx.begin(), idx.end(), size_t{0});
    std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto rx = ranks(x), ry = ranks(y);
  double mx = 0, my = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= static_cast<double>(rx.size());
  my /= static_cast<double>(ry.size());
  double num = 0, dx = 0, dy = 0;
  for (size_t i = 0; i < rx.size(); ++i) {
    num += (rx[i] - mx) * (ry[i] - my);
    dx += (rx[i] - mx) * (rx[i] - mx);
    dy += (ry[i] - my) * (ry[i] - my);
  }
  if (dx == 0 || dy == 0) return 0.0;
  return num / std::sqrt(dx * dy);
}

}  // namespace cmdl
