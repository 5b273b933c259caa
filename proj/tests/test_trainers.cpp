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

#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "test_util.hpp"

namespace hiertax {
namespace {

TrainingView small_view(std::uint64_t seed = 0, double noise = 0.5) {
  GenConfig gen = testing::small_gen_config(seed);
  gen.noise = noise;
  const GeneratedData d = generate(gen);
  return make_training_view(d.taxonomy, d.split);
}

TrainConfig quick_config(Method method, std::size_t steps = 150) {
  TrainConfig c;
  c.method = method;
  c.steps = steps;
  c.eval_every = 50;
  c.coarse_level = 2;
  c.pretrain_steps = 40;
  c.pretrain_batch = 16;
  c.embed_dim = 4;
  c.hidden = 12;
  c.ssl.queue_size = 64;
  c.ssl.key_momentum = 0.9;
  return c;
}

std::vector<double> totals(const std::vector<StepLoss>& losses) {
  std::vector<double> out;
  for (const auto& l : losses) out.push_back(l.total);
  return out;
}

std::string checkpoint_text(const Model& m) {
  std::ostringstream out;
  write_checkpoint(out, m);
  return out.str();
}

TEST(Batches, DefaultSizesFollowMethod) {
  EXPECT_EQ(quick_config(Method::kBaseline).labeled_batch_size(), 30u);
  EXPECT_EQ(quick_config(Method::kBaseline).coarse_batch_size(), 30u);
  EXPECT_EQ(quick_config(Method::kFixMatch).labeled_batch_size(), 32u);
  EXPECT_EQ(quick_config(Method::kFixMatch).coarse_batch_size(), 160u);
}

TEST(Batches, WraparoundVisitsEachItemOncePerEpoch) {
  EpochSampler sampler(7, Rng(3));
  const auto draw = sampler.next(21);
  for (int epoch = 0; epoch < 3; ++epoch) {
    std::set<std::size_t> seen(draw.begin() + 7 * epoch, draw.begin() + 7 * (epoch + 1));
    EXPECT_EQ(seen.size(), 7u);
  }
}

TEST(Batches, SameSeedSameSequence) {
  const TrainingView view = small_view();
  auto pool = coarse_pool(view.taxonomy, view.split, CoarseSource::kUin, 2);
  Rng a(5), b(5);
  BatchStream sa = make_batches(view.split, pool, 30, 30, a);
  BatchStream sb = make_batches(view.split, pool, 30, 30, b);
  for (int i = 0; i < 20; ++i) {
    const Batch x = sa.next();
    const Batch y = sb.next();
    EXPECT_EQ(x.labeled, y.labeled);
    ASSERT_EQ(x.coarse.size(), 30u);
    for (std::size_t k = 0; k < x.coarse.size(); ++k) {
      EXPECT_EQ(x.coarse[k].sample, y.coarse[k].sample);
    }
  }
}

TEST(Batches, EmptySplitIsMissing) {
  const TrainingView view = small_view();
  Rng rng(1);
  try {
    make_batches(view.split, {}, 30, 30, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingSplit);
  }
}

TEST(NegativeQueue, SizeIsCappedAndEvictionIsFifo) {
  NegativeQueue queue(10, 2);
  const std::size_t b = 3;
  for (std::size_t step = 1; step <= 6; ++step) {
    Matrix keys(b, 2);
    for (std::size_t i = 0; i < b; ++i) {
      const double angle = double(step * b + i);
      keys(i, 0) = std::cos(angle);
      keys(i, 1) = std::sin(angle);
    }
    queue.push(keys);
    EXPECT_EQ(queue.size(), std::min<std::size_t>(10, step * b));
  }
  // Angles 3..20 were pushed; the ten newest, oldest first, remain.
  const Matrix entries = queue.entries();
  for (std::size_t r = 0; r < 10; ++r) {
    EXPECT_NEAR(entries(r, 0), std::cos(double(11 + r)), 1e-12);
    EXPECT_NEAR(entries(r, 1), std::sin(double(11 + r)), 1e-12);
  }
}

TEST(NegativeQueue, RejectsNonUnitKeys) {
  NegativeQueue queue(4, 2);
  Matrix keys(1, 2, 1.0);
  EXPECT_THROW(queue.push(keys), Error);
}

TEST(Train, FixMatchWithUnreachableThresholdIsWeaklyAugmentedBaseline) {
  const TrainingView view = small_view(1);
  TrainConfig fm = quick_config(Method::kFixMatch, 120);
  fm.use_hier = false;
  fm.ssl.tau = 1.5;
  TrainConfig base = fm;
  base.method = Method::kBaseline;
  base.weak_noise_everywhere = true;
  base.labeled_batch = fm.labeled_batch_size();
  const TrainResult a = train(fm, view);
  const TrainResult b = train(base, view);
  ASSERT_EQ(a.step_losses.size(), 120u);
  EXPECT_EQ(totals(a.step_losses), totals(b.step_losses));
  EXPECT_EQ(checkpoint_text(a.model), checkpoint_text(b.model));
}

TEST(Train, PseudoLabelWithUnreachableThresholdIsBaseline) {
  const TrainingView view = small_view(2);
  for (bool hier : {false, true}) {
    TrainConfig pl = quick_config(Method::kPseudoLabel, 120);
    pl.use_hier = hier;
    pl.ssl.tau = 1.5;
    TrainConfig base = pl;
    base.method = Method::kBaseline;
    const TrainResult a = train(pl, view);
    const TrainResult b = train(base, view);
    EXPECT_EQ(totals(a.step_losses), totals(b.step_losses));
  }
}

TEST(Train, DetachedDistillationIsContinuedSupervisedTraining) {
  const TrainingView view = small_view(3);
  TrainConfig config = quick_config(Method::kSelfTraining, 100);
  config.use_hier = false;
  config.ssl.unsup_weight = 0.0;
  config.student_init = StudentInit::kTeacher;
  const TrainResult result = train(config, view);
  ASSERT_TRUE(result.teacher.has_value());
  Model continued = *result.teacher;
  const auto expected = continue_supervised(continued, config, view, 2, false);
  EXPECT_EQ(totals(result.step_losses), totals(expected));
  EXPECT_EQ(checkpoint_text(result.model), checkpoint_text(continued));
}

TEST(Train, MocoFineTuneStartsFromPretrainedEncoder) {
  const TrainingView view = small_view(4);
  TrainConfig config = quick_config(Method::kMoco, 50);
  config.architecture = Architecture::kMlp1;
  const TrainResult result = train(config, view);
  std::map<std::string, std::uint64_t> fp(result.fingerprints.begin(), result.fingerprints.end());
  EXPECT_EQ(fp.at("pretrained_encoder"), fp.at("finetune_encoder"));
  EXPECT_NE(fp.at("pretrained_classifier"), fp.at("finetune_classifier"));
  EXPECT_FALSE(result.model.has_projection());
}

TEST(Train, EveryMethodRunsAndIsDeterministic) {
  const TrainingView view = small_view(5);
  for (Method method : kAllMethods) {
    TrainConfig config = quick_config(method, 60);
    config.architecture = Architecture::kMlp1;
    const TrainResult a = train(config, view);
    const TrainResult b = train(config, view);
    EXPECT_EQ(checkpoint_text(a.model), checkpoint_text(b.model)) << to_string(method);
    EXPECT_TRUE(a.trace == b.trace) << to_string(method);
    EXPECT_EQ(a.step_losses.size(), 60u);
    EXPECT_GE(a.final_test_top1, 0.0);
    EXPECT_LE(a.final_test_top1, 1.0);
  }
}

TEST(Train, TraceRecordsLossComponentsAndAccuracy) {
  const TrainingView view = small_view(6);
  const TrainResult r = train(quick_config(Method::kFixMatch, 100), view);
  for (const char* column : {"loss", "supervised", "coarse", "unsup", "test_top1"}) {
    EXPECT_NO_THROW(r.trace.column(column));
  }
  EXPECT_EQ(r.trace.rows.size(), 2u);
  EXPECT_EQ(r.trace.steps.back(), 100u);
}

TEST(Train, FixMatchWithoutCoarseDataIsMissingSplit) {
  TrainingView view = small_view(7);
  view.split.coarse_in.clear();
  try {
    train(quick_config(Method::kFixMatch), view);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingSplit);
  }
}

TEST(Train, FilterThatKeepsNothingIsMissingSplit) {
  const TrainingView view = small_view(8);
  TrainConfig config = quick_config(Method::kFixMatch, 20);
  config.coarse_source = CoarseSource::kFiltered;
  config.filter.tau = 1.5;
  try {
    train(config, view);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kMissingSplit);
  }
}

TEST(Train, InvalidConfigIsRejected) {
  const TrainingView view = small_view(9);
  TrainConfig config = quick_config(Method::kBaseline);
  config.steps = 0;
  EXPECT_THROW(train(config, view), Error);
  config = quick_config(Method::kBaseline);
  config.labeled_batch = 0;
  config.coarse_level = 9;
  try {
    train(config, view);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfigError);
  }
}

TEST(Train, SeparableToyDataIsLearned) {
  const TrainingView view = small_view(10, 0.05);
  TrainConfig config = quick_config(Method::kBaseline, 2000);
  config.use_hier = false;
  EXPECT_GE(train(config, view).final_test_top1, 0.99);
}

TEST(Train, SmoothedSupervisedLossDecreasesOverFirstHalf) {
  const ExperimentConfig defaults;
  const GeneratedData d = generate(defaults.gen);
  const TrainingView view = make_training_view(d.taxonomy, d.split);
  TrainConfig config = defaults.train;
  config.method = Method::kBaseline;
  config.use_hier = false;
  const TrainResult r = train(config, view);
  const std::size_t half = r.step_losses.size() / 2;
  double previous = INFINITY;
  for (std::size_t start = 0; start + 100 <= half; start += 100) {
    double mean = 0.0;
    for (std::size_t t = start; t < start + 100; ++t) mean += r.step_losses[t].total;
    mean /= 100.0;
    EXPECT_LE(mean, previous) << "window at step " << start;
    previous = mean;
  }
}

TEST(Sweep, EmptyLevelListTrainsNothing) {
  EXPECT_TRUE(sweep_supervision_levels(quick_config(Method::kBaseline), small_view(11), {}).empty());
}

TEST(Sweep, SemiInatShapeReportsLevelCounts) {
  GenConfig gen;
  gen.semi_inat_shape = true;
  gen.dim = 4;
  gen.labeled_per_species = 1;
  gen.coarse_in_per_species = 1;
  gen.coarse_out_per_species = 0;
  gen.test_per_species = 1;
  gen.validation_per_species = 0;
  gen.out_fraction = 0.0;
  gen.coarse_label_level = 7;
  const GeneratedData d = generate(gen);
  const TrainingView view = make_training_view(d.taxonomy, d.split);
  TrainConfig config = quick_config(Method::kBaseline, 1);
  const std::vector<std::size_t> levels = {1, 2, 3, 4, 5, 6, 7};
  const auto rows = sweep_supervision_levels(config, view, levels);
  std::vector<std::size_t> counts;
  for (const auto& row : rows) counts.push_back(row.class_count);
  EXPECT_EQ(counts, (std::vector<std::size_t>{3, 8, 29, 123, 339, 729, 810}));
  EXPECT_EQ(rows.front().level_name, "Kingdom");
}

}  // namespace
}  // namespace hiertax
