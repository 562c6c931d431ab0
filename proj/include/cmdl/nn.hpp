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

// Transformer building blocks shared by the audio encoder, the donor ASR
// decoder, the query adapter, and the teacher LM: multi-head attention
// (self / causal / cross), pre-norm residual layers, embeddings, and
// sinusoidal positions.

#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cmdl/tensor.hpp"

namespace cmdl {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

inline constexpr double kLayerNormEps = 1e-5;
inline constexpr double kInitSigma = 0.02;
inline constexpr double kMaskNegative = -1e9;  // finite so softmax stays in-domain

template <typename T>
struct LinearLayer {
  Tensor<T> weight;  // [in x out]
  Tensor<T> bias;    // [out]

  LinearLayer() = default;
  LinearLayer(size_t in, size_t out, Rng& rng)
      : weight(Tensor<T>::randn({in, out}, rng, static_cast<T>(kInitSigma), true)),
        bias(Tensor<T>::zeros({out}, true)) {}

  Tensor<T> forward(const Tensor<T>& x) const { return add_row(matmul(x, weight), bias); }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w", weight});
    out.push_back({prefix + ".b", bias});
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  LayerNormParams() = default;
  explicit LayerNormParams(size_t width)
      : gain(Tensor<T>::filled({width}, T(1), true)), bias(Tensor<T>::zeros({width}, true)) {}

  Tensor<T> forward(const Tensor<T>& x) const {
    return layer_norm(x, gain, bias, static_cast<T>(kLayerNormEps));
  }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".g", gain});
    out.push_back({prefix + ".b", bias});
  }
};

// Additive causal mask: 0 on/below the diagonal, large negative above.
template <typename T>
Tensor<T> causal_mask(size_t len) {
  std::vector<T> vals(len * len, T(0));
  for (size_t i = 0; i < len; ++i)
    for (size_t j = i + 1; j < len; ++j) vals[i * len + j] = static_cast<T>(kMaskNegative);
  return Tensor<T>::from({len, len}, std::move(vals));
}

template <typename T>
struct AttentionBlock {
  Tensor<T> w_q, w_k, w_v, w_o;  // [width x width]
  size_t head_count = 0;
  size_t d_k = 0;
  bool causal = false;

  AttentionBlock() = default;
  AttentionBlock(size_t width, size_t heads, bool causal_flag, Rng& rng)
      : w_q(Tensor<T>::randn({width, width}, rng, static_cast<T>(kInitSigma), true)),
        w_k(Tensor<T>::randn({width, width}, rng, static_cast<T>(kInitSigma), true)),
        w_v(Tensor<T>::randn({width, width}, rng, static_cast<T>(kInitSigma), true)),
        w_o(Tensor<T>::randn({width, width}, rng, static_cast<T>(kInitSigma), true)),
        head_count(heads),
        d_k(width / heads),
        causal(causal_flag) {
    if (heads == 0 || width % heads != 0) {
      throw ConfigError("attention width " + std::to_string(width) + " not divisible by " +
                        std::to_string(heads) + " heads");
    }
  }

  size_t width() const { return w_q.rows(); }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".wq", w_q});
    out.push_back({prefix + ".wk", w_k});
    out.push_back({prefix + ".wv", w_v});
    out.push_back({prefix + ".wo", w_o});
  }
};

// Scaled dot-product attention: per head softmax(Q Kt / sqrt(d_k)) V, heads
// concatenated and passed through the output projection. Self-attention is
// the special case kv_src == queries_src.
template <typename T>
Tensor<T> attend(const AttentionBlock<T>& block, const Tensor<T>& queries_src,
                 const Tensor<T>& kv_src, const std::optional<Tensor<T>>& mask = std::nullopt) {
  const size_t w = block.width();
  if (queries_src.cols() != w || kv_src.cols() != w) {
    throw ShapeError("attend width mismatch: block " + std::to_string(w) + ", queries " +
                     shape_str(queries_src.shape()) + ", kv " + shape_str(kv_src.shape()));
  }
  const size_t l_q = queries_src.rows();
  const size_t l_kv = kv_src.rows();

  std::optional<Tensor<T>> add_mask = mask;
  if (add_mask) {
    if (add_mask->rank() != 2 || add_mask->rows() != l_q || add_mask->cols() != l_kv) {
      throw ShapeError("attend mask " + shape_str(add_mask->shape()) + " does not match scores [" +
                       std::to_string(l_q) + "x" + std::to_string(l_kv) + "]");
    }
  } else if (block.causal) {
    if (l_q != l_kv) {
      throw ShapeError("causal attention requires square scores, got [" + std::to_string(l_q) + "x" +
                       std::to_string(l_kv) + "]");
    }
    add_mask = causal_mask<T>(l_q);
  }

  auto q = matmul(queries_src, block.w_q);
  auto k = matmul(kv_src, block.w_k);
  auto v = matmul(kv_src, block.w_v);

  const T inv_sqrt_dk = static_cast<T>(1.0 / std::sqrt(static_cast<double>(block.d_k)));
  std::vector<Tensor<T>> heads;
  heads.reserve(block.head_count);
  for (size_t h = 0; h < block.head_count; ++h) {
    auto qh = slice_cols(q, h * block.d_k, block.d_k);
    auto kh = slice_cols(k, h * block.d_k, block.d_k);
    auto vh = slice_cols(v, h * block.d_k, block.d_k);
    auto scores = scale(matmul(qh, transpose(kh)), inv_sqrt_dk);
    if (add_mask) scores = add(scores, *add_mask);
    heads.push_back(matmul(softmax(scores, 1), vh));
  }
  return matmul(concat_cols(heads), block.w_o);
}

template <typename T>
struct TransformerLayer {
  LayerNormParams<T> ln_self;
  AttentionBlock<T> self_attn;
  bool has_cross = false;
  LayerNormParams<T> ln_cross;
  AttentionBlock<T> cross_attn;
  LayerNormParams<T> ln_ffn;
  LinearLayer<T> ffn_in;   // [w x ffn_mult*w]
  LinearLayer<T> ffn_out;  // [ffn_mult*w x w]

  TransformerLayer() = default;
  TransformerLayer(size_t width, size_t heads, bool causal_self, bool with_cross, Rng& rng,
                   size_t ffn_mult = 4)
      : ln_self(width),
        self_attn(width, heads, causal_self, rng),
        has_cross(with_cross),
        ln_ffn(width),
        ffn_in(width, ffn_mult * width, rng),
        ffn_out(ffn_mult * width, width, rng) {
    if (with_cross) {
      ln_cross = LayerNormParams<T>(width);
      cross_attn = AttentionBlock<T>(width, heads, false, rng);
    }
  }

  // Pre-norm residual ordering: x + SelfAttn(LN(x)), then the optional cross
  // sublayer, then the feed-forward sublayer.
  Tensor<T> forward(const Tensor<T>& x, const std::optional<Tensor<T>>& cross_kv = std::nullopt) const {
    if (cross_kv && !has_cross) {
      throw UsageError("cross_kv supplied to a layer without a cross-attention block");
    }
    auto normed = ln_self.forward(x);
    auto h = add(x, attend(self_attn, normed, normed));
    if (has_cross) {
      if (!cross_kv) throw UsageError("layer has a cross-attention block but no cross_kv was given");
      h = add(h, attend(cross_attn, ln_cross.forward(h), *cross_kv));
    }
    return add(h, ffn_out.forward(gelu(ffn_in.forward(ln_ffn.forward(h)))));
  }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    ln_self.collect_params(prefix + ".ln_self", out);
    self_attn.collect_params(prefix + ".self", out);
    if (has_cross) {
      ln_cross.collect_params(prefix + ".ln_cross", out);
      cross_attn.collect_params(prefix + ".cross", out);
    }
    ln_ffn.collect_params(prefix + ".ln_ffn", out);
    ffn_in.collect_params(prefix + ".ffn_in", out);
    ffn_out.collect_params(prefix + ".ffn_out", out);
  }
};

template <typename T>
struct Embedding {
  Tensor<T> table;  // [vocab x width]

  Embedding() = default;
  Embedding(size_t vocab, size_t width, Rng& rng)
      : table(Tensor<T>::randn({vocab, width}, rng, static_cast<T>(kInitSigma), true)) {}

  Tensor<T> lookup(std::span<const int> ids) const { return embedding_rows(table, ids); }

  void collect_params(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".table", table});
  }
};

// Standard sin/cos interleave, base 10000. Row p holds
// [sin(p w0), cos(p w0), sin(p w1), cos(p w1), ...].
template <typename T>
Tensor<T> sinusoidal_positions(size_t length, size_t width) {
  if (width % 2 != 0) {
    throw ConfigError("sinusoidal_positions width must be even, got " + std::to_string(width));
  }
  std::vector<T> vals(length * width);
  for (size_t p = 0; p < length; ++p) {
    for (size_t i = 0; i < width / 2; ++i) {
      const double omega = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(width));
      vals[p * width + 2 * i] = static_cast<T>(std::sin(static_cast<double>(p) * omega));
      vals[p * width + 2 * i + 1] = static_cast<T>(std::cos(static_cast<double>(p) * omega));
    }
  }
  return Tensor<T>::from({length, width}, std::move(vals));
}

}  // namespace cmdl
