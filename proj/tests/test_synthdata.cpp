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

using testing::small_gen_config;

std::string dump(const GeneratedData& d) {
  std::ostringstream out;
  write_taxonomy(out, d.taxonomy);
  write_dataset(out, d.taxonomy, d.split);
  return out.str();
}

TEST(Generate, IsBitIdenticalForTheSameSeed) {
  GenConfig config;
  config.level_names = {"Kingdom", "Phylum", "Species"};
  config.level_counts = {1, 2, 8};
  config.level_scales = {1.0, 1.0, 1.0};
  config.attach_level = 2;
  config.dim = 8;
  config.seed = 0;
  EXPECT_EQ(dump(generate(config)), dump(generate(config)));
  GenConfig other = config;
  other.seed = 1;
  EXPECT_NE(dump(generate(config)), dump(generate(other)));
}

TEST(Generate, SplitSizesAndLabelLevels) {
  const GenConfig config = small_gen_config();
  const GeneratedData d = generate(config);
  const std::size_t n_in = 16;
  EXPECT_EQ(d.in_class_leaves.size(), n_in);
  EXPECT_EQ(d.out_class_leaves.size(), 32u);
  EXPECT_EQ(d.split.labeled.size(), n_in * config.labeled_per_species);
  EXPECT_EQ(d.split.test.size(), n_in * config.test_per_species);
  EXPECT_EQ(d.split.validation.size(), n_in * config.validation_per_species);
  EXPECT_EQ(d.split.coarse_in.size(), n_in * config.coarse_in_per_species);
  EXPECT_EQ(d.split.coarse_out.size(), 32 * config.coarse_out_per_species);
  for (const Sample& s : d.split.labeled) EXPECT_EQ(s.label_level, 4u);
  for (const Sample& s : d.split.coarse_in) {
    EXPECT_EQ(s.label_level, config.coarse_label_level);
    EXPECT_EQ(s.origin, Origin::kInClass);
  }
}

TEST(Generate, TestAndLabeledUseInClassSpeciesOnly) {
  const GeneratedData d = generate(small_gen_config(3));
  const std::set<std::size_t> in(d.in_class_leaves.begin(), d.in_class_leaves.end());
  for (const Sample& s : d.split.test) EXPECT_TRUE(in.count(s.label));
  for (const Sample& s : d.split.labeled) EXPECT_TRUE(in.count(s.label));
  for (const Sample& s : d.split.coarse_out) {
    EXPECT_FALSE(in.count(s.true_species));
    EXPECT_EQ(s.origin, Origin::kOutOfClass);
  }
}

TEST(Generate, OutOfClassLeavesShareAncestorsAtAttachLevel) {
  const GenConfig config = small_gen_config(4);
  const GeneratedData d = generate(config);
  std::set<std::size_t> in_genera;
  for (std::size_t leaf : d.in_class_leaves) {
    in_genera.insert(d.taxonomy.ancestor(leaf, config.attach_level));
  }
  for (std::size_t leaf : d.out_class_leaves) {
    EXPECT_TRUE(in_genera.count(d.taxonomy.ancestor(leaf, config.attach_level)));
  }
}

TEST(Generate, SemiInatShapeGivesExpectedInOutRatio) {
  GenConfig config;
  config.semi_inat_shape = true;
  config.dim = 2;
  config.labeled_per_species = 1;
  config.coarse_in_per_species = 0;
  config.coarse_out_per_species = 0;
  config.test_per_species = 0;
  config.validation_per_species = 0;
  const GeneratedData d = generate(config);
  EXPECT_EQ(d.in_class_leaves.size(), 810u);
  // Target split 810 : 1629; a 2/3 out fraction gives 1620.
  EXPECT_NEAR(double(d.out_class_leaves.size()), 1629.0, 0.01 * 1629.0);
}

TEST(Generate, ZeroNoisePlacesSamplesOnCenters) {
  GenConfig config = small_gen_config(5);
  config.noise = 0.0;
  const GeneratedData d = generate(config);
  for (const Sample& s : d.split.test) {
    for (std::size_t i = 0; i < s.features.size(); ++i) {
      EXPECT_EQ(s.features[i], d.leaf_centers(s.true_species, i));
    }
  }
}

TEST(Generate, KingdomsSitFartherApartThanSiblingSpecies) {
  double ratio_sum = 0.0;
  const int seeds = 10;
  for (int seed = 0; seed < seeds; ++seed) {
    GenConfig config;
    config.level_scales = {3.0, 2.5, 1.2, 1.0, 0.9, 0.8, 0.5};
    config.seed = seed;
    const GeneratedData d = generate(config);
    const Taxonomy& tax = d.taxonomy;
    auto distance = [&](std::size_t a, std::size_t b) {
      double ss = 0.0;
      for (std::size_t i = 0; i < config.dim; ++i) {
        const double diff = d.leaf_centers(a, i) - d.leaf_centers(b, i);
        ss += diff * diff;
      }
      return std::sqrt(ss);
    };
    double across = 0.0, within = 0.0;
    std::size_t n_across = 0, n_within = 0;
    const auto& leaves = d.in_class_leaves;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      for (std::size_t j = i + 1; j < leaves.size(); ++j) {
        const std::size_t a = leaves[i], b = leaves[j];
        if (tax.ancestor(a, 1) != tax.ancestor(b, 1)) {
          across += distance(a, b);
          ++n_across;
        } else if (tax.ancestor(a, tax.leaf_level() - 1) == tax.ancestor(b, tax.leaf_level() - 1)) {
          within += distance(a, b);
          ++n_within;
        }
      }
    }
    ASSERT_GT(n_across, 0u);
    ASSERT_GT(n_within, 0u);
    ratio_sum += (across / n_across) / (within / n_within);
  }
  EXPECT_GT(ratio_sum / seeds, 1.0);
}

TEST(Generate, LongTailSkewsCoarseCounts) {
  GenConfig config = small_gen_config(6);
  config.long_tail_exponent = 1.0;
  const GeneratedData d = generate(config);
  std::map<std::size_t, std::size_t> per_species;
  for (const Sample& s : d.split.coarse_in) ++per_species[s.true_species];
  std::size_t lo = SIZE_MAX, hi = 0;
  for (const auto& [leaf, n] : per_species) {
    lo = std::min(lo, n);
    hi = std::max(hi, n);
  }
  EXPECT_GT(hi, 2 * lo);
}

TEST(Generate, InvalidConfigNamesTheField) {
  GenConfig config = small_gen_config();
  config.level_scales = {1.0};
  try {
    generate(config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfigError);
    EXPECT_NE(std::string(e.what()).find("gen.level_scales"), std::string::npos);
  }
}

TEST(Augment, ZeroWeakNoiseIsIdentity) {
  Rng rng(1);
  const std::vector<double> x = {1.0, -2.0, 3.5};
  EXPECT_EQ(augment_weak(x, 0.0, rng), x);
}

TEST(Augment, ParameterValidation) {
  AugmentParams p;
  p.drop_prob = 1.0;
  EXPECT_THROW(p.validate(), Error);
  p = AugmentParams{};
  p.strong_noise = p.weak_noise;
  EXPECT_THROW(p.validate(), Error);
}

TEST(Augment, StrongViewPreservesMeanUnderDropout) {
  Rng rng(2);
  AugmentParams p;
  p.strong_noise = 0.2;
  p.drop_prob = 0.3;
  p.scale_jitter = 0.0;
  const std::vector<double> x(4, 1.0);
  double total = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    for (double v : augment_strong(x, p, rng)) total += v;
  }
  EXPECT_NEAR(total / (4.0 * n), 1.0, 0.02);
}

TEST(Dataset, RoundTripIsLossless) {
  const GeneratedData d = generate(small_gen_config(7));
  std::stringstream buffer;
  write_dataset(buffer, d.taxonomy, d.split);
  DataSplit back;
  read_dataset(buffer, d.taxonomy, back);
  EXPECT_TRUE(back == d.split);
}

TEST(Dataset, UnknownClassAndCorruptRowsAreReported) {
  const GeneratedData d = generate(small_gen_config(8));
  {
    std::stringstream buffer(
        "# hiertax-dataset v1\ndim 8\nlevels Kingdom,Phylum,Genus,Species\n"
        "labeled Species NoSuchSpecies - 0 0 0 0 0 0 0 0\n");
    DataSplit split;
    try {
      read_dataset(buffer, d.taxonomy, split);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::kUnknownClass);
    }
  }
  {
    std::stringstream buffer("# hiertax-dataset v1\ndim 8\nlevels Kingdom,Phylum,Genus,Species\n"
                             "labeled Species\n");
    DataSplit split;
    try {
      read_dataset(buffer, d.taxonomy, split);
      FAIL();
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), 4u);
    }
  }
}

TEST(TrainingView, RestrictsToLabeledSpecies) {
  const GeneratedData d = generate(small_gen_config(9));
  const TrainingView view = make_training_view(d.taxonomy, d.split);
  EXPECT_EQ(view.taxonomy.num_leaves(), 16u);
  EXPECT_EQ(view.split.coarse_out.size(), d.split.coarse_out.size());
  for (const Sample& s : view.split.coarse_out) {
    EXPECT_EQ(s.true_species, kUnknownSpecies);
    EXPECT_EQ(s.origin, Origin::kOutOfClass);
  }
  ASSERT_EQ(view.split.test.size(), d.split.test.size());
  for (std::size_t i = 0; i < d.split.test.size(); ++i) {
    EXPECT_EQ(view.taxonomy.class_name(4, view.split.test[i].label),
              d.taxonomy.class_name(4, d.split.test[i].label));
  }
}

TEST(TrainingView, EmptyLabeledSplitIsAConfigError) {
  GeneratedData d = generate(small_gen_config(10));
  d.split.labeled.clear();
  try {
    make_training_view(d.taxonomy, d.split);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfigError);
  }
}

TEST(TrainingView, LabelAtCoarsensAndRefines) {
  const Taxonomy tax = testing::toy_taxonomy();
  Sample s;
  s.label_level = 2;
  s.label = 1;
  s.true_species = 3;
  EXPECT_EQ(label_at(tax, s, 1), 0u);
  EXPECT_EQ(label_at(tax, s, 2), 1u);
  EXPECT_EQ(label_at(tax, s, 3), 3u);
  s.true_species = kUnknownSpecies;
  EXPECT_FALSE(label_at(tax, s, 3).has_value());
}

}  // namespace
}  // namespace hiertax
