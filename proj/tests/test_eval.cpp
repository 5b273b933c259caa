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

#include <sstream>

#include "test_util.hpp"

namespace hiertax {
namespace {

using testing::random_matrix;

std::vector<Sample> species_samples(const std::vector<std::size_t>& leaves, std::size_t level) {
  std::vector<Sample> out;
  for (std::size_t leaf : leaves) {
    Sample s;
    s.features = {0.0};
    s.label_level = level;
    s.label = leaf;
    s.true_species = leaf;
    out.push_back(s);
  }
  return out;
}

Matrix one_hot_rows(const std::vector<std::size_t>& hot, std::size_t cols) {
  Matrix m(hot.size(), cols);
  for (std::size_t r = 0; r < hot.size(); ++r) m(r, hot[r]) = 1.0;
  return m;
}

TEST(Top1, OraclePredictorScoresOne) {
  const Taxonomy tax = testing::toy_taxonomy();
  const std::vector<std::size_t> leaves = {0, 1, 2, 3, 3, 2};
  EXPECT_EQ(top1(tax, one_hot_rows(leaves, 4), species_samples(leaves, 3)), 1.0);
}

TEST(Top1, UniformPredictorEqualsFrequencyOfClassZero) {
  const Taxonomy tax = testing::toy_taxonomy();
  const std::vector<std::size_t> leaves = {0, 1, 0, 3, 2, 2, 0};
  Matrix uniform(leaves.size(), 4, 0.25);
  EXPECT_EQ(top1(tax, uniform, species_samples(leaves, 3)), 3.0 / 7.0);
}

TEST(Top1, MatchesIndependentRecount) {
  Rng rng(1);
  const Taxonomy tax = Taxonomy::build(testing::random_paths(rng, 3, 10));
  std::vector<std::size_t> leaves;
  for (int i = 0; i < 200; ++i) leaves.push_back(rng.below(10));
  const Matrix probs = softmax_rows(random_matrix(rng, 200, 10));
  std::size_t hits = 0;
  for (std::size_t r = 0; r < 200; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < 10; ++c) {
      if (probs(r, c) > probs(r, best)) best = c;
    }
    hits += best == leaves[r];
  }
  EXPECT_EQ(top1(tax, probs, species_samples(leaves, 3)), double(hits) / 200.0);
}

TEST(Top1, EmptySplitIsAnError) {
  const Taxonomy tax = testing::toy_taxonomy();
  try {
    top1(tax, Matrix(0, 4), std::vector<Sample>{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kEmptySplit);
  }
}

TEST(LevelAccuracy, MatchesBruteForceAndTraceIdentity) {
  Rng rng(2);
  const auto paths = testing::random_paths(rng, 4, 14);
  const Taxonomy tax = Taxonomy::build(paths);
  std::vector<std::size_t> leaves;
  for (int i = 0; i < 150; ++i) leaves.push_back(rng.below(14));
  const auto samples = species_samples(leaves, 4);
  const Matrix probs = softmax_rows(random_matrix(rng, 150, 14, 2.0));
  for (std::size_t level = 1; level <= 4; ++level) {
    std::size_t hits = 0;
    for (std::size_t r = 0; r < 150; ++r) {
      std::map<std::string, double> mass;
      for (const auto& path : paths) {
        mass[path[level - 1]] += probs(r, *tax.find_class(4, path.back()));
      }
      // Lowest class index wins ties; names sort in index order.
      std::string best;
      double best_mass = -1.0;
      for (const auto& [name, m] : mass) {
        if (m > best_mass) best = name, best_mass = m;
      }
      hits += *tax.find_class(level, best) == tax.ancestor(leaves[r], level);
    }
    const double acc = level_accuracy(tax, probs, samples, level);
    EXPECT_EQ(acc, double(hits) / 150.0);
    const ConfusionMatrix cm = confusion(tax, probs, samples, level);
    EXPECT_EQ(double(cm.trace()) / double(cm.total()), acc);
  }
  EXPECT_EQ(level_accuracy(tax, probs, samples, 4), top1(tax, probs, samples));
}

TEST(LevelAccuracy, SingleKingdomIsAlwaysRight) {
  const Taxonomy tax = testing::toy_taxonomy();
  Rng rng(3);
  const std::vector<std::size_t> leaves = {0, 1, 2, 3};
  EXPECT_EQ(level_accuracy(tax, softmax_rows(random_matrix(rng, 4, 4)),
                           species_samples(leaves, 3), 1),
            1.0);
}

TEST(LevelAccuracy, NondecreasingTowardsRootForAncestorConsistentOracle) {
  Rng rng(4);
  const Taxonomy tax = Taxonomy::build(testing::random_paths(rng, 5, 30));
  std::vector<std::size_t> leaves, predicted;
  for (int i = 0; i < 300; ++i) {
    const std::size_t leaf = rng.below(30);
    leaves.push_back(leaf);
    // Predict a leaf sharing the true ancestor down to a random level.
    const std::size_t keep = 1 + rng.below(5);
    std::vector<std::size_t> candidates;
    for (std::size_t c = 0; c < 30; ++c) {
      if (tax.ancestor(c, keep) == tax.ancestor(leaf, keep)) candidates.push_back(c);
    }
    predicted.push_back(candidates[rng.below(candidates.size())]);
  }
  const Matrix probs = one_hot_rows(predicted, 30);
  const auto samples = species_samples(leaves, 5);
  double previous = 1.0;
  for (std::size_t level = 1; level <= 5; ++level) {
    const double acc = level_accuracy(tax, probs, samples, level);
    EXPECT_LE(acc, previous);
    previous = acc;
  }
}

TEST(Confusion, PerfectModelIsDiagonalWithClassCounts) {
  const Taxonomy tax = testing::toy_taxonomy();
  const std::vector<std::size_t> leaves = {0, 1, 2, 3, 3, 3};
  const ConfusionMatrix cm = confusion(tax, one_hot_rows(leaves, 4), species_samples(leaves, 3), 2);
  EXPECT_EQ(cm.counts, (std::vector<std::vector<std::uint64_t>>{{2, 0}, {0, 4}}));
  EXPECT_EQ(cm.class_names, (std::vector<std::string>{"P1", "P2"}));
}

TEST(Confusion, SemiInatPhylumMatrixIsEightByEight) {
  const Taxonomy tax = Taxonomy::build(semi_inat_leaf_paths());
  const std::vector<std::size_t> leaves = {0, 100, 500};
  const ConfusionMatrix cm =
      confusion(tax, one_hot_rows(leaves, tax.num_leaves()), species_samples(leaves, 7), 2);
  EXPECT_EQ(cm.counts.size(), 8u);
  EXPECT_EQ(cm.counts[0].size(), 8u);
}

TEST(Confusion, OutOfRangeLevel) {
  const Taxonomy tax = testing::toy_taxonomy();
  try {
    confusion(tax, Matrix(0, 4), std::vector<Sample>{}, 4);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kOutOfRange);
  }
}

TEST(Argmax, TiesGoToLowestIndex) {
  EXPECT_EQ(argmax(std::vector<double>{0.2, 0.4, 0.4}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{0.5, 0.5}), 0u);
}

EvalReport sample_report() {
  EvalReport r;
  r.experiment_id = "exp-1";
  r.config = {{"train.method", "fixmatch"}, {"optim.learning_rate", "0.01"}};
  r.top1_species = 0.1 + 0.2;
  r.per_level_top1 = {{"Kingdom", 1.0}, {"Phylum", 2.0 / 3.0}};
  ConfusionMatrix cm;
  cm.level = 2;
  cm.class_names = {"P1", "P2"};
  cm.counts = {{3, 1}, {0, 5}};
  r.confusion.push_back(cm);
  r.trace.columns = {"loss", "test_top1"};
  r.trace.add(10, {1.0 / 3.0, 0.25});
  r.trace.add(20, {1e-300, 0.5});
  return r;
}

TEST(Report, RoundTripIsLossless) {
  const EvalReport r = sample_report();
  std::stringstream buffer;
  write_report(buffer, r);
  const std::string text = buffer.str();
  const EvalReport back = read_report(buffer);
  EXPECT_TRUE(back == r);
  std::stringstream again;
  write_report(again, back);
  EXPECT_EQ(again.str(), text);
}

TEST(Report, CorruptHeaderGivesParseErrorWithLine) {
  std::stringstream buffer("# not a report\n");
  try {
    read_report(buffer);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
  std::stringstream bad("# hiertax-report v1\nid x\ntop1 abc\n");
  try {
    read_report(bad);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Summary, MergePreservesRowsAndChecksDataHash) {
  SummaryRow a{"e1", "baseline", true, "Phylum", "U_in", 0, 0.5, "aaaa", "c1"};
  SummaryRow b{"e2", "fixmatch", false, "Phylum", "U_in", 1, 0.25, "aaaa", "c2"};
  SummaryRow c{"e3", "fixmatch", false, "Phylum", "U_in", 0, 0.25, "bbbb", "c3"};
  SummaryRow d{"e4", "fixmatch", false, "Phylum", "U_in", 7, 0.25, "bbbb", "c4"};
  std::stringstream buffer;
  const std::vector<SummaryRow> first = {a};
  write_summary(buffer, first);
  const std::vector<std::vector<SummaryRow>> parts = {read_summary(buffer), {b}};
  const auto merged = merge_summaries(parts);
  EXPECT_EQ(merged, (std::vector<SummaryRow>{a, b}));
  const std::vector<std::vector<SummaryRow>> mixed = {{a}, {c}};
  EXPECT_THROW(merge_summaries(mixed), Error);
  EXPECT_EQ(merge_summaries(mixed, true).size(), 2u);
  const std::vector<std::vector<SummaryRow>> other_seed = {{a}, {d}};
  EXPECT_EQ(merge_summaries(other_seed).size(), 2u);
}

TEST(Summary, MeanAndSampleStdDev) {
  const std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
  const MeanStd m = mean_std(v);
  EXPECT_DOUBLE_EQ(m.mean, 2.5);
  EXPECT_DOUBLE_EQ(m.stddev, std::sqrt(5.0 / 3.0));
}

}  // namespace
}  // namespace hiertax
