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

#include "cmdl/toylm.hpp"

#include <algorithm>
#include <cmath>

#include "cmdl/trainer.hpp"

namespace cmdl {

namespace {
constexpr std::array<double, 4> kSuccessorProbs = {0.4, 0.3, 0.2, 0.1};
constexpr size_t kTemplateBodyLen = 6;
}  // namespace

ToyLanguage build_language(size_t vocab, uint64_t seed) {
  if (vocab < 16) throw ConfigError("toy language needs vocab >= 16, got " + std::to_string(vocab));
  ToyLanguage lang;
  lang.vocab = vocab;
  Rng rng(seed);

  const int lo = lang.content_lo;
  const int hi = lang.content_hi();
  const int n = hi - lo;

  lang.successors.resize(static_cast<size_t>(n));
  for (int t = 0; t < n; ++t) {
    std::array<int, 4> succ{};
    for (size_t k = 0; k < succ.size(); ++k) {
      int candidate;
      bool fresh;
      do {
        candidate = lo + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n)));
        fresh = true;
        for (size_t j = 0; j < k; ++j) fresh = fresh && succ[j] != candidate;
      } while (!fresh);
      succ[k] = candidate;
    }
    lang.successors[static_cast<size_t>(t)] = succ;
  }

  lang.templates.resize(static_cast<size_t>(lang.n_labels));
  for (auto& body : lang.templates) {
    body.resize(kTemplateBodyLen);
    for (auto& tok : body) tok = lo + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(n)));
  }
  // Distinct first tokens make the patterns trivially separable.
  for (int p = 0; p < lang.n_labels; ++p) {
    lang.templates[static_cast<size_t>(p)][0] = lo + p;
  }
  return lang;
}

namespace {

int sample_successor(const ToyLanguage& lang, int token, Rng& rng) {
  const auto& succ = lang.successors[static_cast<size_t>(token - lang.content_lo)];
  const double u = rng.uniform01();
  double cum = 0.0;
  for (size_t k = 0; k < succ.size(); ++k) {
    cum += kSuccessorProbs[k];
    if (u < cum) return succ[k];
  }
  return succ.back();
}

}  // namespace

ToyExample sample_example(const ToyLanguage& lang, Rng& rng, size_t min_body, size_t max_body,
                          double template_frac) {
  if (min_body < 1 || max_body < min_body) {
    throw ConfigError("invalid body length range [" + std::to_string(min_body) + "," +
                      std::to_string(max_body) + "]");
  }
  ToyExample ex;
  if (rng.uniform01() < template_frac) {
    ex.pattern_id = static_cast<int>(rng.uniform_index(static_cast<uint64_t>(lang.n_labels)));
    ex.body = lang.templates[static_cast<size_t>(ex.pattern_id)];
    ex.response = {lang.label_token(ex.pattern_id)};
    return ex;
  }
  const size_t body_len = min_body + rng.uniform_index(max_body - min_body + 1);
  ex.body.resize(body_len);
  ex.body[0] = lang.content_lo + static_cast<int>(rng.uniform_index(static_cast<uint64_t>(lang.n_content())));
  for (size_t i = 1; i < body_len; ++i) ex.body[i] = sample_successor(lang, ex.body[i - 1], rng);
  const size_t resp_len = 2 + rng.uniform_index(3);
  ex.response.resize(resp_len);
  int cur = ex.body.back();
  for (size_t i = 0; i < resp_len; ++i) {
    cur = sample_successor(lang, cur, rng);
    ex.response[i] = cur;
  }
  return ex;
}

std::vector<int> wrap_example(const ToyLanguage& lang, const ToyExample& ex) {
  std::vector<int> line;
  line.reserve(ex.body.size() + ex.response.size() + 4);
  line.push_back(lang.eos);
  line.push_back(lang.user_marker);
  line.insert(line.end(), ex.body.begin(), ex.body.end());
  line.push_back(lang.assistant_marker);
  line.insert(line.end(), ex.response.begin(), ex.response.end());
  line.push_back(lang.eos);
  return line;
}

SyntheticCorpus generate_corpus(const ToyLanguage& lang, size_t n_train, size_t n_held_out,
                                size_t min_body, size_t max_body, double template_frac, Rng& rng) {
  SyntheticCorpus corpus;
  corpus.language = lang;
  corpus.train.reserve(n_train);
  corpus.held_out.reserve(n_held_out);
  for (size_t i = 0; i < n_train; ++i) {
    corpus.train.push_back(sample_example(lang, rng, min_body, max_body, template_frac));
  }
  for (size_t i = 0; i < n_held_out; ++i) {
    corpus.held_out.push_back(sample_example(lang, rng, min_body, max_body, template_frac));
  }
  return corpus;
}

double unigram_baseline_ppl(const SyntheticCorpus& corpus) {
  const size_t v = corpus.language.vocab;
  std::vector<double> counts(v, 1.0);  // Laplace smoothing
  double total = static_cast<double>(v);
  for (const auto& ex : corpus.train) {
    const auto line = wrap_example(corpus.language, ex);
    for (size_t i = 1; i < line.size(); ++i) {
      counts[static_cast<size_t>(line[i])] += 1.0;
      total += 1.0;
    }
  }
  double log_sum = 0.0;
  size_t n = 0;
  for (const auto& ex : corpus.held_out) {
    const auto line = wrap_example(corpus.language, ex);
    for (size_t i = 1; i < line.size(); ++i) {
      log_sum += std::log(counts[static_cast<size_t>(line[i])] / total);
      ++n;
    }
  }
  if (n == 0) throw DataError("unigram baseline: empty held-out corpus");
  return std::exp(-log_sum / static_cast<double>(n));
}

namespace {

double held_out_perplexity(const ToyLMF& lm, const SyntheticCorpus& corpus) {
  double log_sum = 0.0;
  size_t n = 0;
  for (const auto& ex : corpus.held_out) {
    const auto line = wrap_example(corpus.language, ex);
    const std::span<const int> inputs(line.data(), line.size() - 1);
    auto hidden = lm.forward_text(inputs);
    auto all_logits = matmul(hidden, transpose(lm.output_matrix));
    auto log_probs = log_softmax(all_logits);
    for (size_t i = 0; i + 1 < line.size(); ++i) {
      log_sum += static_cast<double>(log_probs.at(i, static_cast<size_t>(line[i + 1])));
      ++n;
    }
  }
  return std::exp(-log_sum / static_cast<double>(n));
}

}  // namespace

ToyLMF pretrain_lm(const SyntheticCorpus& corpus, const LmPretrainConfig& cfg, uint64_t seed,
                   LmPretrainReport* report) {
  if (corpus.train.empty()) throw DataError("pretrain_lm: empty corpus");

  Rng init_rng = Rng(seed).split(1);
  ToyLMF lm(corpus.language.vocab, cfg.width, cfg.n_layers, cfg.heads, cfg.max_positions, init_rng);

  ParamList<float> params;
  lm.collect_params("lm", params);
  AdamW opt(params, 0.9, 0.999, 1e-8, cfg.weight_decay);

  TrainConfig sched;
  sched.total_steps = cfg.steps;
  sched.base_lr = cfg.lr;
  sched.warmup_fraction = cfg.warmup_fraction;

  Rng order_rng = Rng(seed).split(2);
  std::vector<size_t> order(corpus.train.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  order_rng.shuffle(order);
  size_t cursor = 0;

  for (size_t step = 0; step < cfg.steps; ++step) {
    opt.zero_grad();
    double batch_loss = 0.0;
    for (size_t b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        order_rng.shuffle(order);
        cursor = 0;
      }
      const auto& ex = corpus.train[order[cursor++]];
      const auto line = wrap_example(corpus.language, ex);
      const std::span<const int> inputs(line.data(), line.size() - 1);
      const std::span<const int> targets(line.data() + 1, line.size() - 1);
      auto hidden = lm.forward_text(inputs);
      auto logits = matmul(hidden, transpose(lm.output_matrix));
      auto loss = scale(cross_entropy(logits, targets), 1.0f / static_cast<float>(cfg.batch_size));
      if (!std::isfinite(loss.item())) {
        throw TrainingError("pretrain_lm: loss diverged at step " + std::to_string(step));
      }
      batch_loss += static_cast<double>(loss.item());
      backward(loss);
    }
    opt.step(lr_at(step, sched));
    if (report && (step % 25 == 0 || step + 1 == cfg.steps)) {
      report->loss_curve.emplace_back(step, batch_loss);
    }
  }

  lm.set_frozen(true);

  const double uni = unigram_baseline_ppl(corpus);
  const double ppl = held_out_perplexity(lm, corpus);
  if (report) {
    report->held_out_ppl = ppl;
    report->unigram_ppl = uni;
  }
  if (!(ppl <= cfg.ppl_margin * uni)) {
    throw TrainingError("pretrain_lm: held-out perplexity " + std::to_string(ppl) +
                        " misses the margin against unigram baseline " + std::to_string(uni));
  }
  return lm;
}

}  // namespace cmdl
