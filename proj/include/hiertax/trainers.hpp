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

#ifndef HIERTAX_TRAINERS_HPP_
#define HIERTAX_TRAINERS_HPP_

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hiertax/error.hpp"
#include "hiertax/eval.hpp"
#include "hiertax/gradcheck.hpp"
#include "hiertax/losses.hpp"
#include "hiertax/model.hpp"
#include "hiertax/ood_filter.hpp"
#include "hiertax/random.hpp"
#include "hiertax/synthdata.hpp"
#include "hiertax/taxonomy.hpp"
#include "hiertax/textio.hpp"

namespace hiertax {

enum class Method { kBaseline, kPseudoLabel, kFixMatch, kSelfTraining, kMoco, kMocoSelfTraining };

inline constexpr Method kAllMethods[] = {Method::kBaseline,     Method::kPseudoLabel,
                                         Method::kFixMatch,     Method::kSelfTraining,
                                         Method::kMoco,         Method::kMocoSelfTraining};

inline std::string_view to_string(Method method) {
  switch (method) {
    case Method::kBaseline: return "baseline";
    case Method::kPseudoLabel: return "pseudo_label";
    case Method::kFixMatch: return "fixmatch";
    case Method::kSelfTraining: return "self_training";
    case Method::kMoco: return "moco";
    case Method::kMocoSelfTraining: return "moco_self_training";
  }
  return "?";
}

inline std::optional<Method> parse_method(std::string_view text) {
  for (Method m : kAllMethods) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

enum class CoarseSource { kUin, kUinPlusUout, kFiltered };

inline std::string_view to_string(CoarseSource source) {
  switch (source) {
    case CoarseSource::kUin: return "U_in";
    case CoarseSource::kUinPlusUout: return "U_in_plus_U_out";
    case CoarseSource::kFiltered: return "filtered";
  }
  return "?";
}

inline std::optional<CoarseSource> parse_coarse_source(std::string_view text) {
  for (CoarseSource s : {CoarseSource::kUin, CoarseSource::kUinPlusUout, CoarseSource::kFiltered}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

enum class StudentInit { kFresh, kTeacher };

struct TrainConfig {
  Method method = Method::kBaseline;
  bool use_hier = true;
  std::size_t coarse_level = 2;
  CoarseSource coarse_source = CoarseSource::kUin;
  std::size_t labeled_batch = 0;  // m; 0 picks the method default
  std::size_t coarse_batch = 0;   // n; 0 picks the method default
  std::size_t steps = 2000;
  OptimizerConfig optimizer;
  bool cosine_schedule = false;
  SslConfig ssl;
  AugmentParams augment;
  /// Adds weak noise to every supervised input, not only inside FixMatch.
  bool weak_noise_everywhere = false;

  Architecture architecture = Architecture::kLinear;
  std::size_t hidden = 64;
  std::size_t embed_dim = 32;

  // Contrastive pretraining (moco methods).
  std::size_t pretrain_steps = 1000;
  std::size_t pretrain_batch = 64;
  double pretrain_lr = 0.05;

  StudentInit student_init = StudentInit::kFresh;
  /// Teacher snapshots are compared on the validation split at this period.
  std::size_t eval_every = 100;

  FilterConfig filter;
  /// The filtering model is the supervised baseline, with or without the
  /// hierarchical loss.
  bool filter_model_use_hier = true;

  std::uint64_t seed = 0;

  std::size_t labeled_batch_size() const {
    if (labeled_batch) return labeled_batch;
    return method == Method::kFixMatch ? 32 : 30;
  }
  std::size_t coarse_batch_size() const {
    if (coarse_batch) return coarse_batch;
    return method == Method::kFixMatch ? 160 : 30;
  }

  void validate() const {
    if (steps < 1) fail(ErrorKind::kConfigError, "train.steps must be >= 1");
    if (labeled_batch_size() < 1 || coarse_batch_size() < 1) {
      fail(ErrorKind::kConfigError, "batch sizes must be >= 1");
    }
    if (coarse_level < 1) fail(ErrorKind::kConfigError, "train.coarse_level must be >= 1");
    if (!(optimizer.learning_rate >= 0.0)) {
      fail(ErrorKind::kConfigError, "optim.learning_rate must be >= 0");
    }
    if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) {
      fail(ErrorKind::kConfigError, "optim.momentum must lie in [0, 1)");
    }
    if (!(optimizer.weight_decay >= 0.0)) {
      fail(ErrorKind::kConfigError, "optim.weight_decay must be >= 0");
    }
    if (eval_every < 1) fail(ErrorKind::kConfigError, "train.eval_every must be >= 1");
    if ((method == Method::kMoco || method == Method::kMocoSelfTraining) &&
        (pretrain_steps < 1 || pretrain_batch < 1 || embed_dim < 1)) {
      fail(ErrorKind::kConfigError, "moco needs pretrain_steps, pretrain_batch, embed_dim >= 1");
    }
    ssl.validate();
    augment.validate();
    filter.validate();
  }
};

// ---------------------------------------------------------------------------
// Sampling

/// Uniform sampling over [0, n) with a fresh permutation every epoch.
class EpochSampler {
 public:
  EpochSampler(std::size_t n, Rng rng) : n_(n), rng_(std::move(rng)) {}

  std::vector<std::size_t> next(std::size_t count) {
    if (n_ == 0) fail(ErrorKind::kMissingSplit, "cannot sample from an empty split");
    std::vector<std::size_t> out;
    out.reserve(count);
    while (out.size() < count) {
      if (cursor_ == order_.size()) reshuffle();
      out.push_back(order_[cursor_++]);
    }
    return out;
  }

 private:
  void reshuffle() {
    order_.resize(n_);
    for (std::size_t i = 0; i < n_; ++i) order_[i] = i;
    rng_.shuffle(order_);
    cursor_ = 0;
  }

  std::size_t n_;
  Rng rng_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

/// A coarse pool entry: features plus the label at the training level.
struct CoarseItem {
  const Sample* sample = nullptr;
  std::size_t label = 0;
};

struct Batch {
  std::vector<const Sample*> labeled;
  std::vector<CoarseItem> coarse;
};

/// Stream of (labeled batch, coarse batch) pairs. The two splits draw from
/// independent random streams.
class BatchStream {
 public:
  BatchStream(std::span<const Sample> labeled, std::vector<CoarseItem> coarse, std::size_t m,
              std::size_t n, Rng labeled_rng, Rng coarse_rng)
      : labeled_(labeled),
        coarse_(std::move(coarse)),
        m_(m),
        n_(n),
        labeled_sampler_(labeled.size(), std::move(labeled_rng)),
        coarse_sampler_(coarse_.size(), std::move(coarse_rng)) {}

  std::vector<const Sample*> next_labeled() {
    std::vector<const Sample*> out;
    for (std::size_t i : labeled_sampler_.next(m_)) out.push_back(&labeled_[i]);
    return out;
  }

  std::vector<CoarseItem> next_coarse() {
    std::vector<CoarseItem> out;
    for (std::size_t i : coarse_sampler_.next(n_)) out.push_back(coarse_[i]);
    return out;
  }

  Batch next() { return {next_labeled(), next_coarse()}; }

  std::size_t coarse_pool_size() const { return coarse_.size(); }

 private:
  std::span<const Sample> labeled_;
  std::vector<CoarseItem> coarse_;
  std::size_t m_, n_;
  EpochSampler labeled_sampler_;
  EpochSampler coarse_sampler_;
};

/// Labeled and coarse batch stream over a training view.
inline BatchStream make_batches(const DataSplit& data, std::vector<CoarseItem> coarse,
                                std::size_t m, std::size_t n, Rng& rng) {
  if (data.labeled.empty()) fail(ErrorKind::kMissingSplit, "labeled split is empty");
  if (coarse.empty()) fail(ErrorKind::kMissingSplit, "coarse split is empty");
  return BatchStream(data.labeled, std::move(coarse), m, n, rng.fork(1), rng.fork(2));
}

/// Coarse pool for `source` with labels at `level`. Samples whose label at
/// that level cannot be derived are skipped.
inline std::vector<CoarseItem> coarse_pool(const Taxonomy& tax, const DataSplit& data,
                                           CoarseSource source, std::size_t level) {
  std::vector<CoarseItem> pool;
  auto add = [&](const std::vector<Sample>& samples) {
    for (const Sample& s : samples) {
      if (auto label = label_at(tax, s, level)) pool.push_back({&s, *label});
    }
  };
  add(data.coarse_in);
  if (source == CoarseSource::kUinPlusUout) add(data.coarse_out);
  return pool;
}

// ---------------------------------------------------------------------------
// Negative queue

/// Ring buffer of the K most recent unit-norm key embeddings.
class NegativeQueue {
 public:
  NegativeQueue(std::size_t capacity, std::size_t dim) : keys_(capacity, dim) {
    if (capacity < 1) fail(ErrorKind::kConfigError, "queue capacity must be >= 1");
  }

  std::size_t capacity() const noexcept { return keys_.rows(); }
  std::size_t size() const noexcept { return size_; }
  std::size_t dim() const noexcept { return keys_.cols(); }

  void push(const Matrix& keys) {
    check_dims(keys.cols(), dim(), "queue key dim");
    for (std::size_t r = 0; r < keys.rows(); ++r) {
      auto key = keys.row(r);
      const double norm = std::sqrt(dot(key, key));
      if (std::abs(norm - 1.0) > 1e-9) fail(ErrorKind::kConfigError, "queue keys must be unit-norm");
      std::copy(key.begin(), key.end(), keys_.row(cursor_).begin());
      cursor_ = (cursor_ + 1) % capacity();
      if (size_ < capacity()) ++size_;
    }
  }

  /// Current entries, oldest first.
  Matrix entries() const {
    Matrix out(size_, dim());
    const std::size_t start = size_ < capacity() ? 0 : cursor_;
    for (std::size_t i = 0; i < size_; ++i) {
      auto src = keys_.row((start + i) % capacity());
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

 private:
  Matrix keys_;
  std::size_t size_ = 0;
  std::size_t cursor_ = 0;
};

// ---------------------------------------------------------------------------
// Training

/// Loss components of one optimizer step.
struct StepLoss {
  double total = 0.0;
  double supervised = 0.0;  // species CE on labeled data
  double coarse = 0.0;      // marginalized CE on coarse data
  double unsup = 0.0;       // pseudo-label / consistency / distillation / InfoNCE (unweighted)
  std::size_t confident = 0;
};

struct TrainResult {
  Model model;
  Trace trace;                                // periodic rows, all stages
  std::vector<StepLoss> step_losses;          // every step of the final stage
  std::vector<std::pair<std::string, std::uint64_t>> fingerprints;
  std::optional<Model> teacher;               // self-training methods
  std::optional<FilterStats> filter_stats;
  std::size_t coarse_pool = 0;
  double final_test_top1 = 0.0;
};

inline std::uint64_t fingerprint(const Model& model, std::span<const std::size_t> indices) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (std::size_t k : indices) {
    for (double v : model.params()[k].value.flat()) {
      hash = textio::fnv1a(std::string_view(reinterpret_cast<const char*>(&v), sizeof(v)), hash);
    }
  }
  return hash;
}

inline std::vector<std::size_t> classifier_param_indices(const Model& model) {
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < model.params().size(); ++k) {
    if (model.params()[k].name.rfind("classifier.", 0) == 0) out.push_back(k);
  }
  return out;
}

namespace detail {

inline constexpr const char* kTraceColumns[] = {"stage", "loss", "supervised", "coarse",
                                                "unsup", "confident", "test_top1"};

/// Independent random streams of one training stage.
struct StageStreams {
  Rng batches;
  Rng labeled_aug;
  Rng coarse_aug;
  std::uint64_t init_seed;

  StageStreams(std::uint64_t seed, std::uint64_t stage) {
    Rng root(seed * 1000003ULL + stage);
    batches = root.fork(11);
    labeled_aug = root.fork(12);
    coarse_aug = root.fork(13);
    init_seed = root.fork(14).next_u64();
  }
};

inline double learning_rate_at(const TrainConfig& config, double base, std::size_t step,
                               std::size_t steps) {
  if (!config.cosine_schedule) return base;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * double(step) / double(steps)));
}

inline Matrix features_of(std::span<const Sample* const> samples, std::size_t dim) {
  return stack_rows(samples, dim, [](const Sample* s) -> const auto& { return s->features; });
}

inline Matrix features_of(std::span<const CoarseItem> items, std::size_t dim) {
  return stack_rows(items, dim, [](const CoarseItem& c) -> const auto& {
    return c.sample->features;
  });
}

inline Matrix weak_view(Matrix x, double noise, Rng& rng) {
  if (noise == 0.0) return x;
  for (double& v : x.flat()) v += noise * rng.normal();
  return x;
}

inline Matrix strong_view(const Matrix& x, const AugmentParams& params, Rng& rng) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto aug = augment_strong(x.row(r), params, rng);
    std::copy(aug.begin(), aug.end(), out.row(r).begin());
  }
  return out;
}

inline void add_into(Matrix& acc, const Matrix& g, double weight = 1.0) {
  auto a = acc.flat();
  auto b = g.flat();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += weight * b[i];
}

/// Loop shared by every supervised-style stage.
class StageRunner {
 public:
  StageRunner(const TrainConfig& config, const Taxonomy& tax, const DataSplit& data,
              Trace& trace, std::string_view stage_name, double stage_id)
      : config_(config), tax_(tax), data_(data), trace_(trace), stage_id_(stage_id) {
    (void)stage_name;
  }

  using StepFn = std::function<StepLoss(const Model&, Gradients&)>;

  /// Runs `steps` optimizer steps. With `select_on_validation`, returns the
  /// snapshot with the best validation top-1 (ties keep the earlier one).
  std::vector<StepLoss> run(Model& model, std::size_t steps, double base_lr, const StepFn& fn,
                            bool select_on_validation = false) {
    OptimizerConfig opt_config = config_.optimizer;
    opt_config.learning_rate = base_lr;
    Optimizer optimizer(model, opt_config);
    std::vector<StepLoss> losses;
    losses.reserve(steps);
    std::optional<Model> best;
    double best_acc = -1.0;
    const bool can_select = select_on_validation && !data_.validation.empty();
    for (std::size_t t = 0; t < steps; ++t) {
      Gradients grads = model.zero_gradients();
      StepLoss sl = fn(model, grads);
      optimizer.set_learning_rate(learning_rate_at(config_, base_lr, t, steps));
      optimizer.step(model, grads);
      losses.push_back(sl);
      const bool last = t + 1 == steps;
      if ((t + 1) % config_.eval_every == 0 || last) {
        const double acc = data_.test.empty() ? 0.0 : top1(tax_, model, data_.test);
        trace_.add(model.step(), {stage_id_, sl.total, sl.supervised, sl.coarse, sl.unsup,
                                  double(sl.confident), acc});
        if (can_select) {
          const double val = top1(tax_, model, data_.validation);
          if (val > best_acc) {
            best_acc = val;
            best = model;
          }
        }
      }
    }
    if (best) model = std::move(*best);
    return losses;
  }

 private:
  const TrainConfig& config_;
  const Taxonomy& tax_;
  const DataSplit& data_;
  Trace& trace_;
  double stage_id_;
};

}  // namespace detail

/**
 * Trains one model. `view` must come from make_training_view: its taxonomy
 * is the in-class label space and its splits are indexed into it.
 *
 *   baseline            CE on L, plus the coarse marginalized CE with use_hier
 *   pseudo_label        baseline objective + thresholded self pseudo-labels on U
 *   fixmatch            weak-view labeled CE, strong-view coarse CE, and
 *                       weak-to-strong consistency on U
 *   self_training       teacher on L (CE), then a student with the baseline
 *                       objective + distillation from the teacher on U
 *   moco                InfoNCE pretraining on L ∪ U ∪ validation, then the
 *                       baseline objective on a fresh classifier
 *   moco_self_training  moco pretraining, supervised teacher fine-tune, then
 *                       a distilled student from the pretrained encoder
 */
inline TrainResult train(const TrainConfig& config, const TrainingView& view);

namespace detail {

class Trainer {
 public:
  Trainer(const TrainConfig& config, const Taxonomy& tax, const DataSplit& data,
          std::vector<CoarseItem> pool)
      : config_(config), tax_(tax), data_(data), pool_(std::move(pool)) {
    result_.trace.columns.assign(std::begin(kTraceColumns), std::end(kTraceColumns));
    result_.coarse_pool = pool_.size();
  }

  ModelShape shape(std::size_t embed_dim = 0) const {
    ModelShape s;
    s.architecture = config_.architecture;
    s.input_dim = data_.dim();
    s.hidden = config_.hidden;
    s.classes = tax_.num_leaves();
    s.embed_dim = embed_dim;
    return s;
  }

  bool needs_coarse() const {
    switch (config_.method) {
      case Method::kBaseline:
      case Method::kMoco:
        return config_.use_hier;
      default:
        return true;
    }
  }

  /// The baseline objective (CE, plus coarse CE with use_hier) on a batch,
  /// optionally followed by an extra loss on the same coarse logits.
  StepLoss supervised_step(const Model& model, Gradients& grads, BatchStream& stream,
                           StageStreams& streams, bool with_coarse,
                           const std::function<double(const Matrix&, const Matrix&, Matrix&,
                                                      std::size_t&)>* extra = nullptr) {
    StepLoss sl;
    const std::size_t dim = model.input_dim();
    auto labeled = stream.next_labeled();
    Matrix xl = features_of(labeled, dim);
    if (config_.weak_noise_everywhere) xl = weak_view(std::move(xl), config_.augment.weak_noise, streams.labeled_aug);
    std::vector<std::size_t> yl;
    for (const Sample* s : labeled) yl.push_back(s->label);
    sl.supervised = apply_logit_loss(model, xl, [&](const Matrix& z) { return leaf_ce(z, yl); },
                                     &grads);
    if (with_coarse) {
      auto coarse = stream.next_coarse();
      Matrix xc = features_of(coarse, dim);
      if (config_.weak_noise_everywhere) xc = weak_view(std::move(xc), config_.augment.weak_noise, streams.coarse_aug);
      std::vector<std::size_t> yc;
      for (const auto& c : coarse) yc.push_back(c.label);
      ForwardCache cache = model.forward(xc);
      Matrix dlogits(cache.logits.rows(), cache.logits.cols());
      if (config_.use_hier) {
        LossGrad lg = coarse_ce(tax_, cache.logits, yc, config_.coarse_level);
        sl.coarse = lg.value;
        add_into(dlogits, lg.grad);
      }
      if (extra) {
        Matrix g(cache.logits.rows(), cache.logits.cols());
        sl.unsup = (*extra)(xc, cache.logits, g, sl.confident);
        add_into(dlogits, g, config_.ssl.unsup_weight);
      }
      model.backward(cache, dlogits, grads);
    }
    sl.total = sl.supervised + sl.coarse + config_.ssl.unsup_weight * sl.unsup;
    return sl;
  }

  /// Supervised (optionally hierarchical) training from `model` for one stage.
  std::vector<StepLoss> supervised_stage(Model& model, std::uint64_t stage, bool with_hier,
                                         bool select_on_validation) {
    StageStreams streams(config_.seed, stage);
    TrainConfig cfg = config_;
    cfg.use_hier = with_hier;
    const bool with_coarse = with_hier;
    BatchStream stream = make_stream(streams, with_coarse);
    detail::StageRunner runner(cfg, tax_, data_, result_.trace, "supervised", double(stage));
    Trainer inner(cfg, tax_, data_, {});
    return runner.run(
        model, config_.steps, config_.optimizer.learning_rate,
        [&](const Model& m, Gradients& g) {
          return inner.supervised_step(m, g, stream, streams, with_coarse);
        },
        select_on_validation);
  }

  BatchStream make_stream(StageStreams& streams, bool with_coarse) {
    if (data_.labeled.empty()) fail(ErrorKind::kMissingSplit, "labeled split is empty");
    if (with_coarse && pool_.empty()) {
      fail(ErrorKind::kMissingSplit, "method " + std::string(to_string(config_.method)) +
                                         " needs coarse data but the " +
                                         std::string(to_string(config_.coarse_source)) +
                                         " pool is empty");
    }
    return BatchStream(data_.labeled, pool_, config_.labeled_batch_size(),
                       config_.coarse_batch_size(), streams.batches.fork(1),
                       streams.batches.fork(2));
  }

  std::vector<StepLoss> baseline(Model& model, std::uint64_t stage) {
    StageStreams streams(config_.seed, stage);
    BatchStream stream = make_stream(streams, needs_coarse());
    detail::StageRunner runner(config_, tax_, data_, result_.trace, "baseline", double(stage));
    const bool with_coarse = needs_coarse();
    return runner.run(model, config_.steps, config_.optimizer.learning_rate,
                      [&](const Model& m, Gradients& g) {
                        return supervised_step(m, g, stream, streams, with_coarse);
                      });
  }

  std::vector<StepLoss> pseudo_label(Model& model, std::uint64_t stage) {
    StageStreams streams(config_.seed, stage);
    BatchStream stream = make_stream(streams, true);
    const double tau = config_.ssl.tau;
    std::function<double(const Matrix&, const Matrix&, Matrix&, std::size_t&)> extra =
        [tau](const Matrix&, const Matrix& logits, Matrix& grad, std::size_t& confident) {
          LossGrad lg = pseudo_label_ce(softmax_rows(logits), logits, tau, &confident);
          grad = std::move(lg.grad);
          return lg.value;
        };
    detail::StageRunner runner(config_, tax_, data_, result_.trace, "pseudo_label", double(stage));
    return runner.run(model, config_.steps, config_.optimizer.learning_rate,
                      [&](const Model& m, Gradients& g) {
                        return supervised_step(m, g, stream, streams, true, &extra);
                      });
  }

  std::vector<StepLoss> fixmatch(Model& model, std::uint64_t stage) {
    StageStreams streams(config_.seed, stage);
    BatchStream stream = make_stream(streams, true);
    const auto& aug = config_.augment;
    auto step = [&](const Model& m, Gradients& grads) {
      StepLoss sl;
      const std::size_t dim = m.input_dim();
      auto labeled = stream.next_labeled();
      Matrix xl = weak_view(features_of(labeled, dim), aug.weak_noise, streams.labeled_aug);
      std::vector<std::size_t> yl;
      for (const Sample* s : labeled) yl.push_back(s->label);
      sl.supervised =
          apply_logit_loss(m, xl, [&](const Matrix& z) { return leaf_ce(z, yl); }, &grads);

      auto coarse = stream.next_coarse();
      Matrix xc = features_of(coarse, dim);
      Matrix weak = weak_view(xc, aug.weak_noise, streams.coarse_aug);
      Matrix strong = strong_view(xc, aug, streams.coarse_aug);
      std::vector<std::size_t> yc;
      for (const auto& c : coarse) yc.push_back(c.label);
      const Matrix targets = softmax_rows(m.forward(weak).logits);  // no gradient
      ForwardCache cache = m.forward(strong);
      Matrix dlogits(cache.logits.rows(), cache.logits.cols());
      if (config_.use_hier) {
        LossGrad lg = coarse_ce(tax_, cache.logits, yc, config_.coarse_level);
        sl.coarse = lg.value;
        add_into(dlogits, lg.grad);
      }
      LossGrad cons = pseudo_label_ce(targets, cache.logits, config_.ssl.tau, &sl.confident);
      sl.unsup = cons.value;
      add_into(dlogits, cons.grad, config_.ssl.unsup_weight);
      m.backward(cache, dlogits, grads);
      sl.total = sl.supervised + sl.coarse + config_.ssl.unsup_weight * sl.unsup;
      return sl;
    };
    detail::StageRunner runner(config_, tax_, data_, result_.trace, "fixmatch", double(stage));
    return runner.run(model, config_.steps, config_.optimizer.learning_rate, step);
  }

  /// Student training against a frozen teacher on the coarse pool.
  std::vector<StepLoss> distill(Model& student, const Model& teacher, std::uint64_t stage) {
    StageStreams streams(config_.seed, stage);
    BatchStream stream = make_stream(streams, true);
    const double temperature = config_.ssl.distill_temperature;
    std::function<double(const Matrix&, const Matrix&, Matrix&, std::size_t&)> extra =
        [&teacher, temperature](const Matrix& x, const Matrix& logits, Matrix& grad,
                                std::size_t&) {
          const Matrix teacher_logits = teacher.forward(x).logits;
          LossGrad lg = distill_ce(teacher_logits, logits, temperature);
          grad = std::move(lg.grad);
          return lg.value;
        };
    detail::StageRunner runner(config_, tax_, data_, result_.trace, "distill", double(stage));
    return runner.run(student, config_.steps, config_.optimizer.learning_rate,
                      [&](const Model& m, Gradients& g) {
                        return supervised_step(m, g, stream, streams, true, &extra);
                      });
  }

  /// Contrastive pretraining with a momentum key encoder and FIFO queue.
  /// Returns the pretrained query model (with its projection head).
  Model moco_pretrain(std::uint64_t stage) {
    StageStreams streams(config_.seed, stage);
    Model query(shape(config_.embed_dim), streams.init_seed);
    Model key = query;
    std::vector<const Sample*> pool;
    for (const Sample& s : data_.labeled) pool.push_back(&s);
    for (const auto& c : pool_) pool.push_back(c.sample);
    for (const Sample& s : data_.validation) pool.push_back(&s);
    if (pool.empty()) fail(ErrorKind::kMissingSplit, "no data for contrastive pretraining");
    EpochSampler sampler(pool.size(), streams.batches.fork(3));
    NegativeQueue queue(config_.ssl.queue_size, config_.embed_dim);
    const std::size_t dim = query.input_dim();
    const auto& aug = config_.augment;

    auto draw = [&]() {
      std::vector<const Sample*> batch;
      for (std::size_t i : sampler.next(config_.pretrain_batch)) batch.push_back(pool[i]);
      return features_of(batch, dim);
    };
    // Seed the queue with one batch of keys so the first step has negatives.
    queue.push(key.embed(strong_view(draw(), aug, streams.coarse_aug)).embedding);

    OptimizerConfig opt_config = config_.optimizer;
    opt_config.learning_rate = config_.pretrain_lr;
    Optimizer optimizer(query, opt_config);
    for (std::size_t t = 0; t < config_.pretrain_steps; ++t) {
      const Matrix x = draw();
      const Matrix view_q = strong_view(x, aug, streams.labeled_aug);
      const Matrix view_k = strong_view(x, aug, streams.coarse_aug);
      const Matrix keys = key.embed(view_k).embedding;
      EmbedCache cache = query.embed(view_q);
      LossGrad lg = infonce(cache.embedding, keys, queue.entries(), config_.ssl.nce_temperature);
      Gradients grads = query.zero_gradients();
      query.backward_embed(cache, lg.grad, grads);
      optimizer.set_learning_rate(
          learning_rate_at(config_, config_.pretrain_lr, t, config_.pretrain_steps));
      optimizer.step(query, grads);
      momentum_encoder_update(key, query, config_.ssl.key_momentum);
      queue.push(keys);
      if ((t + 1) % config_.eval_every == 0 || t + 1 == config_.pretrain_steps) {
        result_.trace.add(query.step(), {double(stage), lg.value, 0.0, 0.0, lg.value, 0.0, 0.0});
      }
    }
    return query;
  }

  /// Pretrained encoder, projection dropped, fresh classifier.
  Model finetune_start(const Model& pretrained, std::uint64_t seed) {
    Model model = pretrained;
    model.drop_projection();
    model.reset_classifier(seed);
    model.set_step(0);
    return model;
  }

  TrainResult run() {
    Model model(shape(), StageStreams(config_.seed, 1).init_seed);
    switch (config_.method) {
      case Method::kBaseline:
        result_.step_losses = baseline(model, 1);
        break;
      case Method::kPseudoLabel:
        result_.step_losses = pseudo_label(model, 1);
        break;
      case Method::kFixMatch:
        result_.step_losses = fixmatch(model, 1);
        break;
      case Method::kSelfTraining: {
        Model teacher = model;
        supervised_stage(teacher, 1, false, true);
        Model student = config_.student_init == StudentInit::kTeacher
                            ? teacher
                            : Model(shape(), StageStreams(config_.seed, 2).init_seed);
        result_.step_losses = distill(student, teacher, 2);
        result_.teacher = std::move(teacher);
        model = std::move(student);
        break;
      }
      case Method::kMoco: {
        Model pretrained = moco_pretrain(1);
        model = finetune_start(pretrained, StageStreams(config_.seed, 2).init_seed);
        record_fingerprints(pretrained, model);
        result_.step_losses = baseline(model, 2);
        break;
      }
      case Method::kMocoSelfTraining: {
        Model pretrained = moco_pretrain(1);
        Model teacher = finetune_start(pretrained, StageStreams(config_.seed, 2).init_seed);
        record_fingerprints(pretrained, teacher);
        supervised_stage(teacher, 2, false, true);
        Model student = config_.student_init == StudentInit::kTeacher
                            ? teacher
                            : finetune_start(pretrained, StageStreams(config_.seed, 3).init_seed);
        result_.step_losses = distill(student, teacher, 3);
        result_.teacher = std::move(teacher);
        model = std::move(student);
        break;
      }
    }
    result_.final_test_top1 = data_.test.empty() ? 0.0 : top1(tax_, model, data_.test);
    result_.model = std::move(model);
    return std::move(result_);
  }

  void record_fingerprints(const Model& pretrained, const Model& finetune) {
    result_.fingerprints.emplace_back("pretrained_encoder",
                                      fingerprint(pretrained, pretrained.encoder_param_indices()));
    result_.fingerprints.emplace_back("finetune_encoder",
                                      fingerprint(finetune, finetune.encoder_param_indices()));
    result_.fingerprints.emplace_back("pretrained_classifier",
                                      fingerprint(pretrained, classifier_param_indices(pretrained)));
    result_.fingerprints.emplace_back("finetune_classifier",
                                      fingerprint(finetune, classifier_param_indices(finetune)));
  }

  TrainResult& result() { return result_; }

 private:
  const TrainConfig& config_;
  const Taxonomy& tax_;
  const DataSplit& data_;
  std::vector<CoarseItem> pool_;
  TrainResult result_;
};

}  // namespace detail

/// Model used to filter out-of-domain coarse data: the supervised baseline
/// trained on U_in ∪ U_out.
inline Model train_filter_model(const TrainConfig& config, const TrainingView& view) {
  TrainConfig base = config;
  base.method = Method::kBaseline;
  base.use_hier = config.filter_model_use_hier;
  base.coarse_source = CoarseSource::kUinPlusUout;
  base.labeled_batch = 0;
  base.coarse_batch = 0;
  return train(base, view).model;
}

inline TrainResult train(const TrainConfig& config, const TrainingView& view) {
  config.validate();
  const Taxonomy& tax = view.taxonomy;
  if (config.coarse_level > tax.num_levels()) {
    fail(ErrorKind::kConfigError, "train.coarse_level exceeds the taxonomy depth");
  }
  if (view.split.labeled.empty()) {
    fail(ErrorKind::kConfigError, "the labeled split is empty");
  }
  if (config.coarse_source == CoarseSource::kFiltered) {
    const Model filter_model = train_filter_model(config, view);
    FilterStats stats;
    const DataSplit filtered = filtered_source(view.split, filter_model, tax, config.filter, &stats);
    TrainConfig inner = config;
    inner.coarse_source = CoarseSource::kUin;
    TrainingView filtered_view{view.taxonomy, filtered, view.dropped_coarse};
    detail::Trainer trainer(inner, filtered_view.taxonomy, filtered_view.split,
                            coarse_pool(tax, filtered_view.split, CoarseSource::kUin,
                                        config.coarse_level));
    TrainResult result = trainer.run();
    result.filter_stats = stats;
    return result;
  }
  detail::Trainer trainer(config, tax, view.split,
                          coarse_pool(tax, view.split, config.coarse_source, config.coarse_level));
  return trainer.run();
}

inline TrainResult train(const TrainConfig& config, const DataSplit& data, const Taxonomy& tax) {
  return train(config, make_training_view(tax, data));
}

/// Plain supervised continuation of `model` using the random streams of
/// `stage` (the same streams a distillation stage with that id uses).
inline std::vector<StepLoss> continue_supervised(Model& model, const TrainConfig& config,
                                                 const TrainingView& view, std::uint64_t stage,
                                                 bool with_hier) {
  config.validate();
  detail::Trainer trainer(config, view.taxonomy, view.split,
                          coarse_pool(view.taxonomy, view.split, config.coarse_source,
                                      config.coarse_level));
  return trainer.supervised_stage(model, stage, with_hier, false);
}

// ---------------------------------------------------------------------------
// Supervision-level sweep

struct LevelRow {
  std::size_t level = 0;
  std::string level_name;
  std::size_t class_count = 0;
  double top1 = 0.0;
};

inline std::vector<LevelRow> sweep_supervision_levels(const TrainConfig& base,
                                                      const TrainingView& view,
                                                      std::span<const std::size_t> levels) {
  std::vector<LevelRow> rows;
  for (std::size_t level : levels) {
    if (level < 1 || level > view.taxonomy.num_levels()) {
      fail(ErrorKind::kConfigError, "sweep level " + std::to_string(level) + " out of range");
    }
    TrainConfig config = base;
    config.coarse_level = level;
    config.use_hier = true;
    const TrainResult result = train(config, view);
    rows.push_back({level, view.taxonomy.level_name(level), view.taxonomy.class_count(level),
                    result.final_test_top1});
  }
  return rows;
}

}  // namespace hiertax

#endif  // HIERTAX_TRAINERS_HPP_
