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

/// One-input linear model whose leaf distribution is softmax(biases).
Model fixed_output_model(const std::vector<double>& biases) {
  ModelShape shape;
  shape.input_dim = 1;
  shape.classes = biases.size();
  Model m(shape, 0);
  for (auto& p : m.params()) {
    p.value.fill(0.0);
    if (p.name == "classifier.bias") {
      for (std::size_t c = 0; c < biases.size(); ++c) p.value(c, 0) = biases[c];
    }
  }
  return m;
}

Sample coarse_sample(std::size_t level, std::size_t label) {
  Sample s;
  s.features = {0.0};
  s.label_level = level;
  s.label = label;
  return s;
}

struct RandomCase {
  TrainingView view;
  Model model;
  std::vector<Sample> pool;
};

RandomCase random_case(std::uint64_t seed) {
  const GeneratedData d = generate(testing::small_gen_config(seed));
  RandomCase c{make_training_view(d.taxonomy, d.split), Model(), {}};
  ModelShape shape;
  shape.input_dim = c.view.split.dim();
  shape.classes = c.view.taxonomy.num_leaves();
  c.model = Model(shape, seed + 1);
  for (auto& p : c.model.params()) {
    for (double& v : p.value.flat()) v *= 4.0;
  }
  c.pool = c.view.split.coarse_in;
  c.pool.insert(c.pool.end(), c.view.split.coarse_out.begin(), c.view.split.coarse_out.end());
  return c;
}

std::set<std::size_t> kept_indices(const FilterResult& r) {
  std::set<std::size_t> out;
  for (const auto& d : r.decisions) {
    if (d.kept) out.insert(d.index);
  }
  return out;
}

bool is_subset(const std::set<std::size_t>& a, const std::set<std::size_t>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

TEST(Filter, ConfidentPredictionInWrongPhylumIsRejected) {
  const Taxonomy tax = testing::toy_taxonomy();
  const Model m = fixed_output_model({0.0, 0.0, 60.0, 0.0});
  const std::vector<Sample> samples = {coarse_sample(2, 0), coarse_sample(2, 1)};
  const FilterResult r = filter(m, tax, samples, FilterConfig{0.5, 2});
  EXPECT_FALSE(r.decisions[0].kept);
  EXPECT_TRUE(r.decisions[1].kept);
  EXPECT_EQ(r.decisions[0].predicted_leaf, 2u);
  EXPECT_EQ(r.decisions[0].predicted_ancestor, 1u);
  EXPECT_EQ(r.decisions[0].provided_ancestor, 0u);
}

TEST(Filter, ThresholdAboveOneKeepsNothing) {
  const RandomCase c = random_case(1);
  const FilterResult r = filter(c.model, c.view.taxonomy, c.pool, FilterConfig{1.01, 2});
  EXPECT_TRUE(r.kept.empty());
  EXPECT_EQ(r.stats.precision(), 1.0);
}

TEST(Filter, ZeroThresholdKeepsExactlyAncestorMatches) {
  const RandomCase c = random_case(2);
  const Taxonomy& tax = c.view.taxonomy;
  const FilterResult r = filter(c.model, tax, c.pool, FilterConfig{1e-300, 2});
  const Matrix probs = predict(c.model, c.pool);
  for (std::size_t i = 0; i < c.pool.size(); ++i) {
    const bool match = tax.ancestor(argmax(probs.row(i)), 2) ==
                       tax.ancestor_of(c.pool[i].label_level, c.pool[i].label, 2);
    EXPECT_EQ(r.decisions[i].kept, match);
  }
}

TEST(Filter, IsIdempotent) {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    const RandomCase c = random_case(seed);
    const FilterConfig config{0.6, 2};
    const FilterResult once = filter(c.model, c.view.taxonomy, c.pool, config);
    const FilterResult twice = filter(c.model, c.view.taxonomy, once.kept, config);
    EXPECT_EQ(twice.kept, once.kept);
  }
}

TEST(Filter, KeptSetShrinksAsThresholdRises) {
  for (std::uint64_t seed : {6u, 7u, 8u}) {
    const RandomCase c = random_case(seed);
    std::set<std::size_t> previous;
    bool first = true;
    for (double tau : {0.1, 0.3, 0.5, 0.7, 0.8, 0.9, 0.99}) {
      const auto kept = kept_indices(filter(c.model, c.view.taxonomy, c.pool, {tau, 2}));
      if (!first) EXPECT_TRUE(is_subset(kept, previous));
      previous = kept;
      first = false;
    }
  }
}

TEST(Filter, FinerMatchLevelNeverAddsSamples) {
  const RandomCase c = random_case(9);
  const auto kingdom = kept_indices(filter(c.model, c.view.taxonomy, c.pool, {0.3, 1}));
  const auto phylum = kept_indices(filter(c.model, c.view.taxonomy, c.pool, {0.3, 2}));
  EXPECT_TRUE(is_subset(phylum, kingdom));
}

TEST(Filter, OriginTagsDoNotAffectDecisions) {
  for (std::uint64_t seed : {10u, 11u}) {
    const RandomCase c = random_case(seed);
    std::vector<Sample> flipped = c.pool;
    Rng rng(seed);
    for (Sample& s : flipped) {
      s.origin = rng.bernoulli(0.5) ? Origin::kInClass : Origin::kOutOfClass;
    }
    const auto a = kept_indices(filter(c.model, c.view.taxonomy, c.pool, {0.5, 2}));
    const auto b = kept_indices(filter(c.model, c.view.taxonomy, flipped, {0.5, 2}));
    EXPECT_EQ(a, b);
  }
}

TEST(Filter, MatchLevelFinerThanProvidedLabelIsRejected) {
  const Taxonomy tax = testing::toy_taxonomy();
  const Model m = fixed_output_model({0.0, 0.0, 0.0, 0.0});
  const std::vector<Sample> samples = {coarse_sample(2, 0)};
  try {
    filter(m, tax, samples, FilterConfig{0.5, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kLevelOrder);
  }
}

TEST(FilteredSource, OnlyCoarseSplitsChange) {
  const RandomCase c = random_case(12);
  FilterStats stats;
  const DataSplit out = filtered_source(c.view.split, c.model, c.view.taxonomy, {0.5, 2}, &stats);
  EXPECT_EQ(out.labeled, c.view.split.labeled);
  EXPECT_EQ(out.test, c.view.split.test);
  EXPECT_EQ(out.validation, c.view.split.validation);
  EXPECT_TRUE(out.coarse_out.empty());
  EXPECT_EQ(out.coarse_in.size(), stats.kept);
  EXPECT_EQ(stats.total, c.pool.size());
}

TEST(FilteredSource, WithoutOutOfClassDataPrecisionIsOne) {
  RandomCase c = random_case(13);
  c.view.split.coarse_out.clear();
  FilterStats stats;
  filtered_source(c.view.split, c.model, c.view.taxonomy, {0.3, 2}, &stats);
  EXPECT_EQ(stats.precision(), 1.0);
}

TEST(FilterReport, HasOneRowPerSample) {
  const RandomCase c = random_case(14);
  const FilterConfig config{0.5, 2};
  const FilterResult r = filter(c.model, c.view.taxonomy, c.pool, config);
  std::ostringstream out;
  write_filter_report(out, c.view.taxonomy, r, config);
  std::size_t rows = 0;
  std::istringstream in(out.str());
  for (std::string line; std::getline(in, line);) rows += line.rfind("row ", 0) == 0;
  EXPECT_EQ(rows, c.pool.size());
}

}  // namespace
}  // namespace hiertax
