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

// The two training objectives and their monitor. Token alignment pulls the
// final N adapter outputs onto the N transcript embeddings (the trailing
// outputs see the whole query sequence under causal self-attention, so the
// signal reaches every query). Hidden-state distillation matches the
// first-next-token hidden state of the audio path to the transcript path;
// with the output matrix frozen, driving that L2 distance to zero also
// drives the output KL to zero, which reference_kl tracks.

#pragma once

#include <span>
#include <vector>

#include "cmdl/qformer.hpp"
#include "cmdl/toylm.hpp"
#include "cmdl/trainer.hpp"

namespace cmdl {

template <typename T>
struct LossBreakdown {
  T l_con = T(0);
  T l_distill = T(0);
  T combined = T(0);      // l_distill + lambda_con * l_con, always
  T reference_kl = T(0);  // monitor only, never in the gradient path
  T lambda_con = T(1);
};

// Chat-style frame shared bitwise by the teacher's transcript path and the
// student's audio path.
struct PromptTemplate {
  std::vector<int> prefix;  // [eos, user marker]
  std::vector<int> suffix;  // [assistant marker]
};

inline PromptTemplate default_prompt(const ToyLanguage& lang) {
  return {{lang.eos, lang.user_marker}, {lang.assistant_marker}};
}

namespace detail {
template <typename T>
Tensor<T> detached(const Tensor<T>& t) {
  auto c = t.clone();
  c.set_requires_grad(false);
  return c;
}
}  // namespace detail

// Sum over n of the per-position Euclidean distance between text embedding n
// and audio token |Q|-N+n (unsquared by default; squared behind the flag).
// Gradient flows into t_audio only. N >= |Q| is an error unless
// truncate_to_fit keeps just the final |Q|-1 text positions.
template <typename T>
Tensor<T> token_alignment_loss(const Tensor<T>& t_audio, const Tensor<T>& t_text,
                               bool truncate_to_fit = false, bool squared = false) {
  if (t_audio.cols() != t_text.cols()) {
    throw ShapeError("token_alignment_loss width mismatch: audio " + shape_str(t_audio.shape()) +
                     " vs text " + shape_str(t_text.shape()));
  }
  const size_t q = t_audio.rows();
  size_t n = t_text.rows();
  Tensor<T> text = t_text;
  if (n >= q) {
    if (!truncate_to_fit) {
      throw ShapeError("token_alignment_loss requires more audio tokens than text tokens, got |Q|=" +
                       std::to_string(q) + " and N=" + std::to_string(n));
    }
    text = slice_rows(t_text, n - (q - 1), q - 1);
    n = q - 1;
  }
  auto text_fixed = detail::detached(text);
  auto tail = slice_rows(t_audio, q - n, n);
  auto diff = sub(tail, text_fixed);
  Tensor<T> total = Tensor<T>::scalar(T(0));
  for (size_t i = 0; i < n; ++i) {
    auto row_gap = norm2(slice_rows(diff, i, 1));
    total = add(total, squared ? mul(row_gap, row_gap) : row_gap);
  }
  return total;
}

// || h_s - h_t ||_2 at the first-next-token position; the teacher side is
// detached so no gradient reaches it.
template <typename T>
Tensor<T> distill_loss(const Tensor<T>& h_s, const Tensor<T>& h_t) {
  if (h_s.numel() != h_t.numel()) {
    throw ShapeError("distill_loss width mismatch: " + shape_str(h_s.shape()) + " vs " +
                     shape_str(h_t.shape()));
  }
  return norm2(sub(reshape(h_s, {h_s.numel()}), detail::detached(reshape(h_t, {h_t.numel()}))));
}

// KL(softmax(O h_t) || softmax(O h_s)) on detached values.
template <typename T>
T reference_kl(const Tensor<T>& h_t, const Tensor<T>& h_s, const Tensor<T>& output_matrix) {
  const size_t width = output_matrix.cols();
  if (h_t.numel() != width || h_s.numel() != width) {
    throw ShapeError("reference_kl: hidden states " + shape_str(h_t.shape()) + "/" +
                     shape_str(h_s.shape()) + " do not match output matrix " +
                     shape_str(output_matrix.shape()));
  }
  auto o = detail::detached(output_matrix);
  auto lt = matmul(o, reshape(detail::detached(h_t), {width, 1}));
  auto ls = matmul(o, reshape(detail::detached(h_s), {width, 1}));
  auto p = softmax(reshape(lt, {output_matrix.rows()}), 0);
  auto q = softmax(reshape(ls, {output_matrix.rows()}), 0);
  return kl_divergence(p, q).item();
}

template <typename T>
struct StepLoss {
  Tensor<T> objective;           // arm-dependent differentiable batch mean
  LossBreakdown<T> breakdown;    // batch means of every component
};

// One batch of the combined objective. Teacher hidden states come from the
// transcript path, student hidden states from the audio path through the
// same frozen LM; losses average over the batch in input order.
template <typename T>
StepLoss<T> combined_step_loss(const ToyLM<T>& teacher, const StudentPipeline<T>& student,
                               std::span<const Tensor<T>> mels,
                               std::span<const std::vector<int>> transcripts,
                               const PromptTemplate& prompt, T lambda_con, TrainArm arm,
                               bool truncate_alignment = false, bool squared_alignment = false) {
  if (mels.size() != transcripts.size() || mels.empty()) {
    throw UsageError("combined_step_loss: batch of " + std::to_string(mels.size()) + " mels vs " +
                     std::to_string(transcripts.size()) + " transcripts");
  }
  const std::span<const int> prefix(prompt.prefix);
  const std::span<const int> suffix(prompt.suffix);

  Tensor<T> objective = Tensor<T>::scalar(T(0));
  LossBreakdown<T> sums;
  sums.lambda_con = lambda_con;

  for (size_t i = 0; i < mels.size(); ++i) {
    const std::span<const int> body(transcripts[i]);

    std::vector<int> teacher_tokens;
    teacher_tokens.insert(teacher_tokens.end(), prefix.begin(), prefix.end());
    teacher_tokens.insert(teacher_tokens.end(), body.begin(), body.end());
    teacher_tokens.insert(teacher_tokens.end(), suffix.begin(), suffix.end());
    auto teacher_hidden = teacher.forward_text(teacher_tokens);
    auto h_t = slice_rows(teacher_hidden, teacher_hidden.rows() - 1, 1);

    auto t_audio = student.forward_mel(mels[i]);
    auto student_hidden = teacher.forward_mixed(prefix, t_audio, suffix);
    auto h_s = slice_rows(student_hidden, student_hidden.rows() - 1, 1);

    auto t_text = teacher.embed_text(body);
    auto l_con = token_alignment_loss(t_audio, t_text, truncate_alignment, squared_alignment);
    auto l_dist = distill_loss(h_s, h_t);
    const T kl = reference_kl(reshape(h_t, {h_t.numel()}), reshape(h_s, {h_s.numel()}),
                              teacher.output_matrix);

    switch (arm) {
      case TrainArm::full:
        objective = add(objective, add(l_dist, scale(l_con, lambda_con)));
        break;
      case TrainArm::distill_only:
        objective = add(objective, l_dist);
        break;
      case TrainArm::align_only:
        objective = add(objective, scale(l_con, lambda_con));
        break;
    }
    sums.l_con += l_con.item();
    sums.l_distill += l_dist.item();
    sums.combined += l_dist.item() + lambda_con * l_con.item();
    sums.reference_kl += kl;
  }

  const T inv = T(1) / static_cast<T>(mels.size());
  StepLoss<T> out{scale(objective, inv), sums};
  out.breakdown.l_con *= inv;
  out.breakdown.l_distill *= inv;
  out.breakdown.combined *= inv;
  out.breakdown.reference_kl *= inv;
  return out;
}

}  // namespace cmdl
