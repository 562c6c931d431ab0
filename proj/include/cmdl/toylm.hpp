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

// The frozen teacher: a small decoder-only LM pretrained on a synthetic
// language, plus that language itself (first-order Markov chains over
// content tokens with a handful of fixed template patterns that end in a
// label token). Every sequence is wrapped in the same chat-style frame:
//   [eos, user, body..., assistant, response..., eos]

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cmdl/nn.hpp"
#include "cmdl/rng.hpp"

namespace cmdl {

// ---------------------------------------------------------------------------
// Toy language and corpus
// ---------------------------------------------------------------------------

struct ToyLanguage {
  size_t vocab = 64;
  int eos = 0;               // doubles as BOS
  int user_marker = 1;
  int assistant_marker = 2;
  int content_lo = 3;
  int n_labels = 4;          // label tokens occupy the top ids

  // 4 weighted successors per content token, probabilities 0.4/0.3/0.2/0.1.
  std::vector<std::array<int, 4>> successors;
  // Fixed template bodies; pattern p is answered by label_token(p).
  std::vector<std::vector<int>> templates;

  int content_hi() const { return static_cast<int>(vocab) - n_labels; }  // exclusive
  int n_content() const { return content_hi() - content_lo; }
  int label_token(int pattern) const { return content_hi() + pattern; }
};

ToyLanguage build_language(size_t vocab, uint64_t seed);

struct ToyExample {
  std::vector<int> body;      // transcript tokens, all content-range
  std::vector<int> response;  // continuation tokens or a single label token
  int pattern_id = -1;        // >= 0 when body is a template
};

// Markov body continued by its own chain, or (with template_frac odds) a
// fixed template body answered by its label token.
ToyExample sample_example(const ToyLanguage& lang, Rng& rng, size_t min_body, size_t max_body,
                          double template_frac);

// Full wrapped token sequence for LM pretraining.
std::vector<int> wrap_example(const ToyLanguage& lang, const ToyExample& ex);

struct SyntheticCorpus {
  ToyLanguage language;
  std::vector<ToyExample> train;
  std::vector<ToyExample> held_out;
};

SyntheticCorpus generate_corpus(const ToyLanguage& lang, size_t n_train, size_t n_held_out,
                                size_t min_body, size_t max_body, double template_frac, Rng& rng);

// ---------------------------------------------------------------------------
// Teacher model
// ---------------------------------------------------------------------------

template <typename T>
struct ToyLM {
  size_t vocab = 0;
  size_t width = 0;
  Embedding<T> embed;                       // E, input table
  Tensor<T> positions;                      // learned absolute positions
  std::vector<TransformerLayer<T>> layers;  // causal self-attention only
  LayerNormParams<T> final_ln;
  Tensor<T> output_matrix;                  // O [vocab x width], untied from E
  bool frozen = false;

  ToyLM() = default;
  ToyLM(size_t vocab_size, size_t model_width, size_t n_layers, size_t heads, size_t max_positions,
        Rng& rng)
      : vocab(vocab_size),
        width(model_width),
        embed(vocab_size, model_width, rng),
        positions(Tensor<T>::randn({max_positions, model_width}, rng, static_cast<T>(kInitSigma), true)),
        final_ln(model_width),
        output_matrix(Tensor<T>::randn({vocab_size, model_width}, rng, static_cast<T>(kInitSigma), true)) {
    layers.reserve(n_layers);
    for (size_t i = 0; i < n_layers; ++i) layers.emplace_back(model_width, heads, true, false, rng);
  }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    embed.collect_params(prefix + ".embed", out);
    out.push_back({prefix + ".pos", positions});
    for (size_t i = 0; i < layers.size(); ++i) {
      layers[i].collect_params(prefix + ".layer" + std::to_string(i), out);
    }
    final_ln.collect_params(prefix + ".final_ln", out);
    out.push_back({prefix + ".out_matrix", output_matrix});
  }

  void set_frozen(bool on) {
    frozen = on;
    ParamList<T> params;
    collect_params("lm", params);
    for (auto& p : params) p.tensor.set_requires_grad(!on);
  }

  // Rows of E at the token indices; positions are added downstream.
  Tensor<T> embed_text(std::span<const int> tokens) const { return embed.lookup(tokens); }

  // Causal transformer stack plus final norm over already-positioned embeds.
  Tensor<T> forward_hidden(const Tensor<T>& embeds) const {
    if (embeds.cols() != width) {
      throw ShapeError("forward_hidden expects width " + std::to_string(width) + ", got " +
                       shape_str(embeds.shape()));
    }
    auto h = embeds;
    for (const auto& layer : layers) h = layer.forward(h);
    return final_ln.forward(h);
  }

  // embed(prefix) ++ injected ++ embed(suffix), without positions. The
  // injected block substitutes for text token embeddings (M may be 0).
  Tensor<T> mixed_embeds(std::span<const int> prefix, const Tensor<T>& injected,
                         std::span<const int> suffix) const {
    if (injected.numel() > 0 && injected.cols() != width) {
      throw ShapeError("injected embeddings have width " + std::to_string(injected.cols()) +
                       ", model width is " + std::to_string(width));
    }
    std::vector<Tensor<T>> parts;
    if (!prefix.empty()) parts.push_back(embed_text(prefix));
    if (injected.numel() > 0) parts.push_back(injected);
    if (!suffix.empty()) parts.push_back(embed_text(suffix));
    if (parts.empty()) throw UsageError("mixed_embeds: empty sequence");
    return parts.size() == 1 ? parts[0] : concat_rows(parts);
  }

  Tensor<T> add_positions(const Tensor<T>& embeds) const {
    const size_t len = embeds.rows();
    if (len > positions.rows()) {
      throw ShapeError("sequence of " + std::to_string(len) + " exceeds " +
                       std::to_string(positions.rows()) + " learned positions");
    }
    return add(embeds, slice_rows(positions, 0, len));
  }

  Tensor<T> forward_mixed(std::span<const int> prefix, const Tensor<T>& injected,
                          std::span<const int> suffix) const {
    return forward_hidden(add_positions(mixed_embeds(prefix, injected, suffix)));
  }

  // Text-only forward is the M = 0 special case.
  Tensor<T> forward_text(std::span<const int> tokens) const {
    return forward_mixed(tokens, Tensor<T>::zeros({0, width}), {});
  }

  // O h for one hidden state [width] or [1 x width].
  Tensor<T> next_token_logits(const Tensor<T>& h) const {
    if (h.numel() != width) {
      throw ShapeError("next_token_logits expects " + std::to_string(width) + " values, got " +
                       shape_str(h.shape()));
    }
    return reshape(matmul(output_matrix, reshape(h, {width, 1})), {vocab});
  }

  // log P(label | context ++ label prefix), summed over label tokens, for
  // each candidate; classifier output is the argmax of these scores.
  std::vector<T> score_labels(const Tensor<T>& context_embeds,
                              const std::vector<std::vector<int>>& labels) const {
    if (labels.empty()) throw DataError("score_labels: no labels given");
    const size_t c = context_embeds.rows();
    std::vector<T> scores;
    scores.reserve(labels.size());
    for (const auto& label : labels) {
      if (label.empty()) throw DataError("score_labels: empty label sequence");
      std::vector<Tensor<T>> parts{context_embeds};
      if (label.size() > 1) {
        parts.push_back(embed_text(std::span<const int>(label.data(), label.size() - 1)));
      }
      auto embeds = parts.size() == 1 ? parts[0] : concat_rows(parts);
      auto hidden = forward_hidden(add_positions(embeds));
      T score = T(0);
      for (size_t i = 0; i < label.size(); ++i) {
        auto logits = next_token_logits(reshape(slice_rows(hidden, c - 1 + i, 1), {width}));
        if (label[i] < 0 || static_cast<size_t>(label[i]) >= vocab) {
          throw DataError("score_labels: label token " + std::to_string(label[i]) +
                          " outside vocabulary");
        }
        score += log_softmax(logits).at(static_cast<size_t>(label[i]));
      }
      scores.push_back(score);
    }
    return scores;
  }

  // Greedy argmax continuation (ties break to the lowest index); the end
  // token, when reached, is included and generation stops.
  std::vector<int> greedy_decode(const Tensor<T>& context_embeds, size_t max_len, int end_token) const {
    if (max_len < 1) throw UsageError("greedy_decode: max_len must be >= 1");
    std::vector<int> generated;
    for (size_t step = 0; step < max_len; ++step) {
      std::vector<Tensor<T>> parts{context_embeds};
      if (!generated.empty()) parts.push_back(embed_text(generated));
      auto embeds = parts.size() == 1 ? parts[0] : concat_rows(parts);
      auto hidden = forward_hidden(add_positions(embeds));
      auto logits = next_token_logits(reshape(slice_rows(hidden, embeds.rows() - 1, 1), {width}));
      const int tok = static_cast<int>(argmax(logits.data()));
      generated.push_back(tok);
      if (tok == end_token) break;
    }
    return generated;
  }
};

using ToyLMF = ToyLM<float>;

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

struct LmPretrainConfig {
  size_t steps = 500;
  size_t batch_size = 16;
  double lr = 3e-3;
  double weight_decay = 0.01;
  double warmup_fraction = 0.05;
  size_t n_layers = 2;
  size_t heads = 4;
  size_t width = 64;
  size_t max_positions = 64;
  // Held-out perplexity must beat the unigram baseline by this factor.
  double ppl_margin = 0.8;
};

struct LmPretrainReport {
  double held_out_ppl = 0.0;
  double unigram_ppl = 0.0;
  std::vector<std::pair<size_t, double>> loss_curve;  // (step, train loss)
};

// Next-token cross-entropy over wrapped corpus lines; the returned model is
// marked frozen. Throws TrainingError on divergence or a missed perplexity
// margin.
ToyLMF pretrain_lm(const SyntheticCorpus& corpus, const LmPretrainConfig& cfg, uint64_t seed,
                   LmPretrainReport* report = nullptr);

// Mean held-out perplexity of a smoothed unigram model fit on train lines.
double unigram_baseline_ppl(const SyntheticCorpus& corpus);

}  // namespace cmdl
