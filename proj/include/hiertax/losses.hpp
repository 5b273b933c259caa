// Copyright 2026 The hiertax Authors.
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

#ifndef HIERTAX_LOSSES_HPP_
#define HIERTAX_LOSSES_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "hiertax/error.hpp"
#include "hiertax/linalg.hpp"
#include "hiertax/taxonomy.hpp"

namespace hiertax {

/// Every -log(p) clamps p here.
inline constexpr double kProbFloor = 1e-12;

inline double neg_log(double p) { return -std::log(std::max(p, kProbFloor)); }

/// Supervision levels of the two terms of the hierarchical loss.
struct HierLossSpec {
  std::size_t fine_level = 7;
  std::size_t coarse_level = 2;

  void validate(const Taxonomy& tax) const {
    if (fine_level < 1 || fine_level > tax.num_levels() || coarse_level < 1) {
      fail(ErrorKind::kOutOfRange, "supervision level outside the taxonomy");
    }
    if (coarse_level > fine_level) {
      fail(ErrorKind::kLevelOrder, "coarse_level must not be finer than fine_level");
    }
  }
};

struct SslConfig {
  double tau = 0.8;
  double distill_temperature = 2.0;
  double nce_temperature = 0.07;
  std::size_t queue_size = 2048;
  double key_momentum = 0.999;
  double unsup_weight = 1.0;

  void validate() const {
    if (!(tau > 0.0)) fail(ErrorKind::kConfigError, "ssl.tau must be > 0");
    if (!(distill_temperature > 0.0)) {
      fail(ErrorKind::kConfigError, "ssl.distill_temperature must be > 0");
    }
    if (!(nce_temperature > 0.0)) fail(ErrorKind::kConfigError, "ssl.nce_temperature must be > 0");
    if (queue_size < 1) fail(ErrorKind::kConfigError, "ssl.queue_size must be >= 1");
    if (!(key_momentum >= 0.0 && key_momentum <= 1.0)) {
      fail(ErrorKind::kConfigError, "ssl.key_momentum must lie in [0, 1]");
    }
    if (!(unsup_weight >= 0.0)) fail(ErrorKind::kConfigError, "ssl.unsup_weight must be >= 0");
  }
};

// ===========================================================================
// Probability-level losses. Inputs are rows of distributions over C^L; each
// term is averaged over its own batch.

/// Mean over rows of -log probs[r][labels[r]].
inline double cross_entropy(const Matrix& probs, std::span<const std::size_t> labels) {
  check_dims(labels.size(), probs.rows(), "labels");
  if (probs.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) sum += neg_log(probs(r, labels[r]));
  return sum / static_cast<double>(probs.rows());
}

/// Mean over rows of -log(marginal mass on the coarse label).
inline double coarse_cross_entropy(const Taxonomy& tax, const Matrix& leaf_probs,
                                   std::span<const std::size_t> coarse_labels,
                                   std::size_t coarse_level) {
  if (coarse_level == tax.leaf_level()) return cross_entropy(leaf_probs, coarse_labels);
  check_dims(coarse_labels.size(), leaf_probs.rows(), "coarse labels");
  check_dims(leaf_probs.cols(), tax.num_leaves(), "leaf distribution");
  if (leaf_probs.rows() == 0) return 0.0;
  const auto w = marginalization_matrix(tax, tax.leaf_level(), coarse_level);
  double sum = 0.0;
  for (std::size_t r = 0; r < leaf_probs.rows(); ++r) {
    sum += neg_log(marginalize(leaf_probs.row(r), w)[coarse_labels[r]]);
  }
  return sum / static_cast<double>(leaf_probs.rows());
}

/// L_hie: species CE on labeled rows plus marginalized CE on coarse rows.
inline double hier_loss(const Taxonomy& tax, const Matrix& labeled_probs,
                        std::span<const std::size_t> labels, const Matrix& coarse_probs,
                        std::span<const std::size_t> coarse_labels, const HierLossSpec& spec) {
  spec.validate(tax);
  check_dims(labeled_probs.cols(), tax.num_leaves(), "labeled distribution");
  return cross_entropy(labeled_probs, labels) +
         coarse_cross_entropy(tax, coarse_probs, coarse_labels, spec.coarse_level);
}

/// Confident rows (max >= tau) against their own argmax, averaged over all rows.
inline double pseudo_label_loss(const Matrix& probs, double tau) {
  if (probs.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < probs.rows(); ++r) {
    auto row = probs.row(r);
    const std::size_t top = argmax(row);
    if (row[top] >= tau) sum += neg_log(row[top]);
  }
  return sum / static_cast<double>(probs.rows());
}

/// Consistency term: pseudo-labels from `weak`, scored on `strong`.
inline double consistency_loss(const Matrix& weak, const Matrix& strong, double tau) {
  if (weak.rows() != strong.rows()) {
    fail(ErrorKind::kIndexMisalignment, "weak and strong views differ in batch size");
  }
  check_dims(strong.cols(), weak.cols(), "strong distribution");
  if (weak.rows() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t r = 0; r < weak.rows(); ++r) {
    auto row = weak.row(r);
    const std::size_t top = argmax(row);
    if (row[top] >= tau) sum += neg_log(strong(r, top));
  }
  return sum / static_cast<double>(weak.rows());
}

/// FixMatch with hierarchical supervision: labeled CE on weak views, coarse
/// CE on strong views, and weak-to-strong pseudo-label consistency.
inline double fixmatch_loss(const Taxonomy& tax, const Matrix& labeled_weak,
                            std::span<const std::size_t> labels, const Matrix& coarse_weak,
                            const Matrix& coarse_strong,
                            std::span<const std::size_t> coarse_labels, const HierLossSpec& spec,
                            double tau, double unsup_weight = 1.0) {
  if (coarse_weak.rows() != coarse_strong.rows()) {
    fail(ErrorKind::kIndexMisalignment, "weak and strong coarse batches differ in size");
  }
  return hier_loss(tax, labeled_weak, labels, coarse_strong, coarse_labels, spec) +
         unsup_weight * consistency_loss(coarse_weak, coarse_strong, tau);
}

struct DistillValue {
  double cross_entropy = 0.0;  // the training objective
  double kl = 0.0;             // CE minus teacher entropy
};

/// H(σ(z_t/T), σ(z_s/T)) averaged over rows.
inline DistillValue distill_loss(const Matrix& teacher_logits, const Matrix& student_logits,
                                 double temperature) {
  check_dims(student_logits.rows(), teacher_logits.rows(), "distill rows");
  check_dims(student_logits.cols(), teacher_logits.cols(), "distill classes");
  DistillValue out;
  if (teacher_logits.rows() == 0) return out;
  std::vector<double> zt(teacher_logits.cols()), zs(teacher_logits.cols());
  for (std::size_t r = 0; r < teacher_logits.rows(); ++r) {
    for (std::size_t c = 0; c < zt.size(); ++c) {
      zt[c] = teacher_logits(r, c) / temperature;
      zs[c] = student_logits(r, c) / temperature;
    }
    const double lse_t = log_sum_exp(zt);
    const double lse_s = log_sum_exp(zs);
    for (std::size_t c = 0; c < zt.size(); ++c) {
      const double log_pt = zt[c] - lse_t;
      const double pt = std::exp(log_pt);
      const double log_ps = zs[c] - lse_s;
      out.cross_entropy -= pt * log_ps;
      out.kl += pt * (log_pt - log_ps);
    }
  }
  out.cross_entropy /= static_cast<double>(teacher_logits.rows());
  out.kl /= static_cast<double>(teacher_logits.rows());
  return out;
}

/// -log softmax([q.k+, q.k_1, ..., q.k_K] / T)[0] for one query.
inline double infonce_loss(std::span<const double> query, std::span<const double> positive,
                           const Matrix& negatives, double temperature) {
  if (negatives.rows() == 0) fail(ErrorKind::kEmptyQueue, "InfoNCE needs at least one negative");
  check_dims(positive.size(), query.size(), "positive key");
  check_dims(negatives.cols(), query.size(), "negative keys");
  std::vector<double> sims(negatives.rows() + 1);
  sims[0] = dot(query, positive) / temperature;
  for (std::size_t k = 0; k < negatives.rows(); ++k) {
    sims[k + 1] = dot(query, negatives.row(k)) / temperature;
  }
  return std::max(0.0, log_sum_exp(sims) - sims[0]);
}

// ===========================================================================
// Logit-level losses with gradients, used for training. `grad` is
// d(value)/d(logits) and already includes the 1/batch averaging.

struct LossGrad {
  double value = 0.0;
  Matrix grad;
};

namespace detail {

inline void add_ce_row(std::span<const double> logits, std::size_t target, double scale,
                       double& value, std::span<double> grad) {
  const double lse = log_sum_exp(logits);
  const double loss = lse - logits[target];
  if (loss > -std::log(kProbFloor)) {
    value += scale * -std::log(kProbFloor);  // clamped: flat, no gradient
    return;
  }
  value += scale * loss;
  for (std::size_t c = 0; c < logits.size(); ++c) grad[c] += scale * std::exp(logits[c] - lse);
  grad[target] -= scale;
}

}  // namespace detail

/// Species-level CE from logits.
inline LossGrad leaf_ce(const Matrix& logits, std::span<const std::size_t> labels) {
  check_dims(labels.size(), logits.rows(), "labels");
  LossGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  if (logits.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (labels[r] >= logits.cols()) fail(ErrorKind::kOutOfRange, "label outside class range");
    detail::add_ce_row(logits.row(r), labels[r], scale, out.value, out.grad.row(r));
  }
  return out;
}

/**
 * Marginalized CE at a coarse level from leaf logits. With S the leaves
 * under the label and M = Σ_{c∈S} p_c, the loss is -log M and its gradient
 * is p - p·1[S]/M (the leaf distribution minus its renormalized restriction
 * to S). log M is computed as lse(z_S) - lse(z).
 */
inline LossGrad coarse_ce(const Taxonomy& tax, const Matrix& logits,
                          std::span<const std::size_t> coarse_labels, std::size_t coarse_level) {
  if (coarse_level == tax.leaf_level()) return leaf_ce(logits, coarse_labels);
  check_dims(coarse_labels.size(), logits.rows(), "coarse labels");
  check_dims(logits.cols(), tax.num_leaves(), "leaf logits");
  const auto& ancestors = tax.leaf_ancestors(coarse_level);
  LossGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  if (logits.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(logits.rows());
  std::vector<double> inside;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto z = logits.row(r);
    const std::size_t label = coarse_labels[r];
    if (label >= tax.class_count(coarse_level)) {
      fail(ErrorKind::kOutOfRange, "coarse label outside class range");
    }
    inside.clear();
    for (std::size_t c = 0; c < z.size(); ++c) {
      if (ancestors[c] == label) inside.push_back(z[c]);
    }
    const double lse_all = log_sum_exp(z);
    const double lse_in = log_sum_exp(inside);
    const double loss = lse_all - lse_in;
    if (!(loss <= -std::log(kProbFloor))) {
      out.value += scale * -std::log(kProbFloor);
      continue;
    }
    out.value += scale * loss;
    auto g = out.grad.row(r);
    for (std::size_t c = 0; c < z.size(); ++c) {
      double d = std::exp(z[c] - lse_all);
      if (ancestors[c] == label) d -= std::exp(z[c] - lse_in);
      g[c] += scale * d;
    }
  }
  return out;
}

/**
 * Thresholded pseudo-label CE. Targets come from `target_probs` (constants,
 * no gradient); the loss is scored on `logits`. For plain Pseudo-Label the
 * two describe the same view; for FixMatch they are the weak and strong
 * views. Averaged over all rows, including those under the threshold.
 */
inline LossGrad pseudo_label_ce(const Matrix& target_probs, const Matrix& logits, double tau,
                                std::size_t* confident = nullptr) {
  if (target_probs.rows() != logits.rows()) {
    fail(ErrorKind::kIndexMisalignment, "pseudo-label targets and logits differ in batch size");
  }
  check_dims(logits.cols(), target_probs.cols(), "pseudo-label classes");
  LossGrad out{0.0, Matrix(logits.rows(), logits.cols())};
  if (confident) *confident = 0;
  if (logits.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto t = target_probs.row(r);
    const std::size_t top = argmax(t);
    if (!(t[top] >= tau)) continue;
    if (confident) ++*confident;
    detail::add_ce_row(logits.row(r), top, scale, out.value, out.grad.row(r));
  }
  return out;
}

/// Distillation CE; gradient (σ(z_s/T) - σ(z_t/T)) / T per row, averaged.
inline LossGrad distill_ce(const Matrix& teacher_logits, const Matrix& student_logits,
                           double temperature) {
  check_dims(student_logits.rows(), teacher_logits.rows(), "distill rows");
  check_dims(student_logits.cols(), teacher_logits.cols(), "distill classes");
  LossGrad out{distill_loss(teacher_logits, student_logits, temperature).cross_entropy,
               Matrix(student_logits.rows(), student_logits.cols())};
  if (student_logits.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(student_logits.rows());
  std::vector<double> zt(student_logits.cols()), zs(student_logits.cols());
  for (std::size_t r = 0; r < student_logits.rows(); ++r) {
    for (std::size_t c = 0; c < zt.size(); ++c) {
      zt[c] = teacher_logits(r, c) / temperature;
      zs[c] = student_logits(r, c) / temperature;
    }
    softmax(zt, zt);
    softmax(zs, zs);
    for (std::size_t c = 0; c < zt.size(); ++c) {
      out.grad(r, c) = scale * (zs[c] - zt[c]) / temperature;
    }
  }
  return out;
}

/// Batched InfoNCE, averaged over queries. Keys are constants; the gradient
/// is with respect to the (unit) query embeddings.
inline LossGrad infonce(const Matrix& queries, const Matrix& positives, const Matrix& negatives,
                        double temperature) {
  if (negatives.rows() == 0) fail(ErrorKind::kEmptyQueue, "InfoNCE needs at least one negative");
  check_dims(positives.rows(), queries.rows(), "positive keys");
  check_dims(positives.cols(), queries.cols(), "positive key dim");
  check_dims(negatives.cols(), queries.cols(), "negative key dim");
  LossGrad out{0.0, Matrix(queries.rows(), queries.cols())};
  if (queries.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(queries.rows());
  std::vector<double> sims(negatives.rows() + 1);
  for (std::size_t r = 0; r < queries.rows(); ++r) {
    auto q = queries.row(r);
    sims[0] = dot(q, positives.row(r)) / temperature;
    for (std::size_t k = 0; k < negatives.rows(); ++k) {
      sims[k + 1] = dot(q, negatives.row(k)) / temperature;
    }
    const double lse = log_sum_exp(sims);
    out.value += scale * (lse - sims[0]);
    auto g = out.grad.row(r);
    const double w_pos = std::exp(sims[0] - lse) - 1.0;
    auto kp = positives.row(r);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * w_pos * kp[i] / temperature;
    for (std::size_t k = 0; k < negatives.rows(); ++k) {
      const double w = std::exp(sims[k + 1] - lse);
      auto kn = negatives.row(k);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += scale * w * kn[i] / temperature;
    }
  }
  return out;
}

}  // namespace hiertax

#endif  // HIERTAX_LOSSES_HPP_
