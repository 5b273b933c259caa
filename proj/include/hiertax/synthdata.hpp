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

#ifndef HIERTAX_SYNTHDATA_HPP_
#define HIERTAX_SYNTHDATA_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hiertax/error.hpp"
#include "hiertax/linalg.hpp"
#include "hiertax/random.hpp"
#include "hiertax/taxonomy.hpp"
#include "hiertax/textio.hpp"

namespace hiertax {

inline constexpr std::size_t kUnknownSpecies = static_cast<std::size_t>(-1);

enum class Origin { kInClass, kOutOfClass };

/// One feature vector with a label at some taxonomy level. `true_species`
/// and `origin` are hidden ground truth; trainers never read them.
struct Sample {
  std::vector<double> features;
  std::size_t label_level = 0;
  std::size_t label = 0;
  std::size_t true_species = kUnknownSpecies;
  Origin origin = Origin::kInClass;

  friend bool operator==(const Sample&, const Sample&) = default;
};

enum class SplitTag { kLabeled, kCoarseIn, kCoarseOut, kTest, kValidation };

inline std::string_view to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kLabeled: return "labeled";
    case SplitTag::kCoarseIn: return "coarse_in";
    case SplitTag::kCoarseOut: return "coarse_out";
    case SplitTag::kTest: return "test";
    case SplitTag::kValidation: return "validation";
  }
  return "?";
}

inline std::optional<SplitTag> parse_split_tag(std::string_view text) {
  for (SplitTag tag : {SplitTag::kLabeled, SplitTag::kCoarseIn, SplitTag::kCoarseOut,
                       SplitTag::kTest, SplitTag::kValidation}) {
    if (to_string(tag) == text) return tag;
  }
  return std::nullopt;
}

/// Species-labeled L, coarse U_in and U_out, the in-class test set, and a
/// held-out validation pool (teacher selection and contrastive pretraining).
struct DataSplit {
  std::vector<Sample> labeled;
  std::vector<Sample> coarse_in;
  std::vector<Sample> coarse_out;
  std::vector<Sample> test;
  std::vector<Sample> validation;

  std::vector<Sample>& get(SplitTag tag) {
    switch (tag) {
      case SplitTag::kLabeled: return labeled;
      case SplitTag::kCoarseIn: return coarse_in;
      case SplitTag::kCoarseOut: return coarse_out;
      case SplitTag::kTest: return test;
      case SplitTag::kValidation: return validation;
    }
    return labeled;
  }
  const std::vector<Sample>& get(SplitTag tag) const {
    return const_cast<DataSplit*>(this)->get(tag);
  }

  std::size_t dim() const {
    for (SplitTag tag : {SplitTag::kLabeled, SplitTag::kCoarseIn, SplitTag::kCoarseOut,
                         SplitTag::kTest, SplitTag::kValidation}) {
      if (!get(tag).empty()) return get(tag).front().features.size();
    }
    return 0;
  }

  friend bool operator==(const DataSplit&, const DataSplit&) = default;
};

inline constexpr SplitTag kAllSplits[] = {SplitTag::kLabeled, SplitTag::kCoarseIn,
                                          SplitTag::kCoarseOut, SplitTag::kTest,
                                          SplitTag::kValidation};

// ---------------------------------------------------------------------------
// Tree shapes

namespace detail {

inline std::string padded_name(const std::string& prefix, std::size_t index) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%05zu", index);
  return prefix + "_" + buffer;
}

/// Spreads `children` over `parents` as evenly as possible, earlier parents
/// first. Every parent gets at least one child.
inline std::vector<std::size_t> spread(std::size_t parents, std::size_t children) {
  std::vector<std::size_t> counts(parents, children / parents);
  for (std::size_t i = 0; i < children % parents; ++i) ++counts[i];
  return counts;
}

/// Appends paths for a subtree whose per-level class counts are `counts`,
/// starting at depth `first` under the fixed `prefix`.
inline void grow_subtree(const std::vector<std::size_t>& counts, std::size_t first,
                         const std::vector<std::string>& level_names, LeafPath prefix,
                         std::vector<std::size_t>& next_id, std::vector<LeafPath>& out) {
  // Level `first` has counts[first] nodes hanging under the prefix.
  struct Node {
    LeafPath path;
  };
  std::vector<Node> frontier;
  for (std::size_t i = 0; i < counts[first]; ++i) {
    LeafPath path = prefix;
    path.push_back(padded_name(level_names[first], next_id[first]++));
    frontier.push_back({std::move(path)});
  }
  for (std::size_t l = first + 1; l < counts.size(); ++l) {
    auto per_parent = spread(frontier.size(), counts[l]);
    std::vector<Node> next;
    for (std::size_t p = 0; p < frontier.size(); ++p) {
      for (std::size_t c = 0; c < per_parent[p]; ++c) {
        LeafPath path = frontier[p].path;
        path.push_back(padded_name(level_names[l], next_id[l]++));
        next.push_back({std::move(path)});
      }
    }
    frontier = std::move(next);
  }
  for (auto& node : frontier) out.push_back(std::move(node.path));
}

inline void check_counts(const std::vector<std::size_t>& counts) {
  if (counts.size() < 2) fail(ErrorKind::kConfigError, "level_counts needs at least 2 levels");
  if (counts.front() == 0) fail(ErrorKind::kConfigError, "level_counts entries must be >= 1");
  for (std::size_t l = 1; l < counts.size(); ++l) {
    if (counts[l] < counts[l - 1]) {
      fail(ErrorKind::kConfigError, "level_counts must be nondecreasing toward the leaves");
    }
  }
}

}  // namespace detail

/// Leaf paths of a balanced tree with exactly `counts[l]` classes at level l.
inline std::vector<LeafPath> balanced_leaf_paths(const std::vector<std::size_t>& counts,
                                                 const std::vector<std::string>& level_names) {
  detail::check_counts(counts);
  check_dims(level_names.size(), counts.size(), "level names");
  std::vector<std::size_t> next_id(counts.size(), 0);
  std::vector<LeafPath> paths;
  detail::grow_subtree(counts, 0, level_names, {}, next_id, paths);
  return paths;
}

/**
 * In-class species tree shaped like Semi-iNat: the real kingdoms and phyla
 * with their in-class species counts, and Class..Genus counts of
 * 29/123/339/729 spread across phyla in proportion to species.
 */
inline std::vector<LeafPath> semi_inat_leaf_paths() {
  struct Phylum {
    const char* kingdom;
    const char* name;
    std::size_t species;
  };
  static constexpr Phylum kPhyla[] = {
      {"Animalia", "Mollusca", 11},          {"Animalia", "Chordata", 113},
      {"Animalia", "Arthropoda", 301},       {"Animalia", "Echinodermata", 4},
      {"Plantae", "Tracheophyta", 336},      {"Plantae", "Bryophyta", 6},
      {"Fungi", "Basidiomycota", 29},        {"Fungi", "Ascomycota", 10},
  };
  const std::vector<std::size_t> totals = {3, 8, 29, 123, 339, 729, 810};
  const auto names = default_level_names();
  constexpr std::size_t kPhylaCount = std::size(kPhyla);

  // alloc[l][p]: classes of phylum p at level l; filled leaves-up so every
  // level is capped by the one below it.
  std::vector<std::vector<std::size_t>> alloc(totals.size(), std::vector<std::size_t>(kPhylaCount));
  for (std::size_t p = 0; p < kPhylaCount; ++p) alloc[6][p] = kPhyla[p].species;
  for (std::size_t l = 5; l >= 2; --l) {
    auto& level = alloc[l];
    std::fill(level.begin(), level.end(), 1);
    std::size_t remaining = totals[l] - kPhylaCount;
    while (remaining > 0) {
      std::size_t best = kPhylaCount;
      double best_gap = -std::numeric_limits<double>::infinity();
      for (std::size_t p = 0; p < kPhylaCount; ++p) {
        if (level[p] >= alloc[l + 1][p]) continue;
        const double target = static_cast<double>(totals[l]) * kPhyla[p].species / totals[6];
        const double gap = target - static_cast<double>(level[p]);
        if (gap > best_gap) {
          best_gap = gap;
          best = p;
        }
      }
      ++level[best];
      --remaining;
    }
  }

  std::vector<std::size_t> next_id(totals.size(), 0);
  std::vector<LeafPath> paths;
  for (std::size_t p = 0; p < kPhylaCount; ++p) {
    std::vector<std::size_t> counts(totals.size(), 1);
    for (std::size_t l = 2; l < totals.size(); ++l) counts[l] = alloc[l][p];
    detail::grow_subtree(counts, 2, names, {kPhyla[p].kingdom, kPhyla[p].name}, next_id, paths);
  }
  return paths;
}

// ---------------------------------------------------------------------------
// Generator

/// Feature-space stand-ins for weak/strong image augmentation.
struct AugmentParams {
  double weak_noise = 0.1;     // σ_w
  double strong_noise = 0.3;   // σ_s, must exceed σ_w
  double drop_prob = 0.1;      // p_drop in [0, 1)
  double scale_jitter = 0.1;   // scale ~ U[1 - j, 1 + j]

  void validate() const {
    if (!(weak_noise >= 0.0)) fail(ErrorKind::kConfigError, "augment.weak_noise must be >= 0");
    if (!(strong_noise > weak_noise)) {
      fail(ErrorKind::kConfigError, "augment.strong_noise must exceed augment.weak_noise");
    }
    if (!(drop_prob >= 0.0 && drop_prob < 1.0)) {
      fail(ErrorKind::kConfigError, "augment.drop_prob must lie in [0, 1)");
    }
    if (!(scale_jitter >= 0.0 && scale_jitter < 1.0)) {
      fail(ErrorKind::kConfigError, "augment.scale_jitter must lie in [0, 1)");
    }
  }
};

inline std::vector<double> augment_weak(std::span<const double> x, double weak_noise, Rng& rng) {
  std::vector<double> out(x.begin(), x.end());
  if (weak_noise == 0.0) return out;
  for (double& v : out) v += weak_noise * rng.normal();
  return out;
}

inline std::vector<double> augment_strong(std::span<const double> x, const AugmentParams& params,
                                          Rng& rng) {
  std::vector<double> out(x.size());
  const double keep_scale = 1.0 / (1.0 - params.drop_prob);
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = rng.bernoulli(params.drop_prob) ? 0.0 : x[i] * keep_scale;
  }
  const double scale = 1.0 + params.scale_jitter * (2.0 * rng.uniform() - 1.0);
  for (double& v : out) v = v * scale + params.strong_noise * rng.normal();
  return out;
}

struct GenConfig {
  std::vector<std::string> level_names = default_level_names();
  /// In-class taxonomy shape; ignored when `semi_inat_shape` is set.
  std::vector<std::size_t> level_counts = {3, 8, 12, 18, 28, 40, 60};
  bool semi_inat_shape = false;
  std::size_t dim = 32;
  /// Center offset scale per level, coarsest first (σ_1..σ_L).
  std::vector<double> level_scales = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
  double noise = 2.5;  // σ_x
  std::size_t labeled_per_species = 5;
  std::size_t coarse_in_per_species = 45;
  std::size_t coarse_out_per_species = 80;
  std::size_t test_per_species = 20;
  std::size_t validation_per_species = 3;
  double out_fraction = 2.0 / 3.0;
  /// Out-of-class leaves share every ancestor at this level and above.
  std::size_t attach_level = 6;
  /// Multiplies the leaf-level center offset of out-of-class species.
  double out_offset_multiplier = 1.0;
  /// Power-law skew of per-species coarse counts; 0 is uniform.
  double long_tail_exponent = 0.0;
  /// Level at which coarse samples carry their provided label.
  std::size_t coarse_label_level = 2;
  std::uint64_t seed = 0;

  std::size_t num_levels() const { return level_names.size(); }

  void validate() const {
    const std::size_t depth = num_levels();
    if (depth < 2) fail(ErrorKind::kConfigError, "gen.level_names needs at least 2 levels");
    if (semi_inat_shape) {
      if (depth != 7) fail(ErrorKind::kConfigError, "gen.semi_inat_shape requires 7 levels");
    } else {
      if (level_counts.size() != depth) {
        fail(ErrorKind::kConfigError, "gen.level_counts must have one entry per level");
      }
      detail::check_counts(level_counts);
    }
    if (level_scales.size() != depth) {
      fail(ErrorKind::kConfigError, "gen.level_scales must have one entry per level");
    }
    for (double s : level_scales) {
      if (!(s > 0.0)) fail(ErrorKind::kConfigError, "gen.level_scales entries must be > 0");
    }
    if (dim == 0) fail(ErrorKind::kConfigError, "gen.dim must be >= 1");
    if (!(noise >= 0.0)) fail(ErrorKind::kConfigError, "gen.noise must be >= 0");
    if (!(out_fraction >= 0.0 && out_fraction < 1.0)) {
      fail(ErrorKind::kConfigError, "gen.out_fraction must lie in [0, 1)");
    }
    if (attach_level < 1 || attach_level >= depth) {
      fail(ErrorKind::kConfigError, "gen.attach_level must lie in [1, L-1]");
    }
    if (!(out_offset_multiplier > 0.0)) {
      fail(ErrorKind::kConfigError, "gen.out_offset_multiplier must be > 0");
    }
    if (!(long_tail_exponent >= 0.0)) {
      fail(ErrorKind::kConfigError, "gen.long_tail_exponent must be >= 0");
    }
    if (coarse_label_level < 1 || coarse_label_level > depth) {
      fail(ErrorKind::kConfigError, "gen.coarse_label_level must lie in [1, L]");
    }
  }
};

/// Generated data plus the hidden geometry behind it.
struct GeneratedData {
  Taxonomy taxonomy;  // C_in ∪ C_out
  DataSplit split;
  std::vector<std::size_t> in_class_leaves;
  std::vector<std::size_t> out_class_leaves;
  Matrix leaf_centers;  // num_leaves x dim, full-taxonomy leaf order
};

namespace detail {

/// Per-species counts under a power law over a seeded rank order.
inline std::vector<std::size_t> long_tail_counts(std::size_t species, std::size_t base,
                                                 double exponent, Rng& rng) {
  std::vector<std::size_t> counts(species, base);
  if (exponent == 0.0 || species == 0 || base == 0) return counts;
  std::vector<std::size_t> rank(species);
  for (std::size_t i = 0; i < species; ++i) rank[i] = i;
  rng.shuffle(rank);
  double norm = 0.0;
  for (std::size_t r = 0; r < species; ++r) norm += std::pow(r + 1.0, -exponent);
  const double total = static_cast<double>(base * species);
  for (std::size_t i = 0; i < species; ++i) {
    const double share = std::pow(rank[i] + 1.0, -exponent) / norm;
    counts[i] = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(total * share)));
  }
  return counts;
}

}  // namespace detail

/**
 * Hierarchically clustered features. Class centers are built top-down: each
 * center is its parent's center plus an isotropic Gaussian offset of scale
 * σ_l. Out-of-class species are extra leaves attached under in-class nodes
 * at `attach_level`; their names sort after every in-class name, so the
 * in-class leaves occupy indices [0, |C_in|) of the full taxonomy.
 */
inline GeneratedData generate(const GenConfig& config) {
  config.validate();
  const std::size_t depth = config.num_levels();
  const auto& names = config.level_names;

  std::vector<LeafPath> in_paths = config.semi_inat_shape
                                       ? semi_inat_leaf_paths()
                                       : balanced_leaf_paths(config.level_counts, names);
  std::sort(in_paths.begin(), in_paths.end(),
            [](const LeafPath& a, const LeafPath& b) { return a.back() < b.back(); });

  const std::size_t n_in = in_paths.size();
  const std::size_t n_out = config.out_fraction == 0.0
                                ? 0
                                : static_cast<std::size_t>(std::lround(
                                      n_in * config.out_fraction / (1.0 - config.out_fraction)));
  std::vector<LeafPath> all_paths = in_paths;
  for (std::size_t j = 0; j < n_out; ++j) {
    const LeafPath& host = in_paths[j % n_in];
    LeafPath path(host.begin(), host.begin() + static_cast<std::ptrdiff_t>(config.attach_level));
    for (std::size_t l = config.attach_level; l < depth; ++l) {
      path.push_back(detail::padded_name(names[l] + "_x", j));
    }
    all_paths.push_back(std::move(path));
  }

  GeneratedData data;
  data.taxonomy = Taxonomy::build(all_paths, names);
  const Taxonomy& tax = data.taxonomy;
  for (std::size_t leaf = 0; leaf < tax.num_leaves(); ++leaf) {
    (leaf < n_in ? data.in_class_leaves : data.out_class_leaves).push_back(leaf);
  }

  Rng root(config.seed);
  Rng center_rng = root.fork(1);

  // Centers level by level, in class-index order.
  std::vector<Matrix> centers(depth);
  for (std::size_t l = 1; l <= depth; ++l) {
    Matrix& level = centers[l - 1];
    level = Matrix(tax.class_count(l), config.dim);
    for (std::size_t c = 0; c < level.rows(); ++c) {
      double scale = config.level_scales[l - 1];
      if (l == depth && c >= n_in) scale *= config.out_offset_multiplier;
      const bool has_parent = l > 1;
      const std::size_t parent = has_parent ? tax.parent(l, c) : 0;
      for (std::size_t i = 0; i < config.dim; ++i) {
        const double base = has_parent ? centers[l - 2](parent, i) : 0.0;
        level(c, i) = base + scale * center_rng.normal();
      }
    }
  }
  data.leaf_centers = centers[depth - 1];

  auto make_sample = [&](std::size_t leaf, std::size_t label_level, Rng& rng) {
    Sample s;
    s.features.resize(config.dim);
    for (std::size_t i = 0; i < config.dim; ++i) {
      s.features[i] = data.leaf_centers(leaf, i) + config.noise * rng.normal();
    }
    s.label_level = label_level;
    s.label = tax.ancestor(leaf, label_level);
    s.true_species = leaf;
    s.origin = leaf < n_in ? Origin::kInClass : Origin::kOutOfClass;
    return s;
  };

  auto fill = [&](std::vector<Sample>& out, const std::vector<std::size_t>& leaves,
                  const std::vector<std::size_t>& counts, std::size_t label_level, Rng rng) {
    for (std::size_t i = 0; i < leaves.size(); ++i) {
      for (std::size_t k = 0; k < counts[i]; ++k) {
        out.push_back(make_sample(leaves[i], label_level, rng));
      }
    }
  };

  Rng tail_rng = root.fork(2);
  const std::vector<std::size_t> labeled_counts(n_in, config.labeled_per_species);
  const std::vector<std::size_t> test_counts(n_in, config.test_per_species);
  const std::vector<std::size_t> validation_counts(n_in, config.validation_per_species);
  const auto coarse_in_counts = detail::long_tail_counts(n_in, config.coarse_in_per_species,
                                                         config.long_tail_exponent, tail_rng);
  const auto coarse_out_counts = detail::long_tail_counts(n_out, config.coarse_out_per_species,
                                                          config.long_tail_exponent, tail_rng);

  fill(data.split.labeled, data.in_class_leaves, labeled_counts, depth, root.fork(3));
  fill(data.split.coarse_in, data.in_class_leaves, coarse_in_counts, config.coarse_label_level,
       root.fork(4));
  fill(data.split.coarse_out, data.out_class_leaves, coarse_out_counts,
       config.coarse_label_level, root.fork(5));
  fill(data.split.test, data.in_class_leaves, test_counts, depth, root.fork(6));
  fill(data.split.validation, data.in_class_leaves, validation_counts, depth, root.fork(7));
  return data;
}

// ---------------------------------------------------------------------------
// Dataset files
//
//   # hiertax-dataset v1
//   dim <d>
//   levels <name>,<name>,...
//   <split> <level-name> <class-name> <true-species-name|-> <x_1> ... <x_d>

inline void write_dataset(std::ostream& out, const Taxonomy& tax, const DataSplit& split,
                          std::span<const SplitTag> tags = kAllSplits,
                          std::string_view stamp = {}) {
  const std::size_t dim = split.dim();
  out << "# hiertax-dataset v1\n";
  if (!stamp.empty()) out << "# " << stamp << '\n';
  out << "dim " << dim << '\n';
  out << "levels ";
  for (std::size_t l = 0; l < tax.level_names().size(); ++l) {
    out << (l ? "," : "") << tax.level_names()[l];
  }
  out << '\n';
  for (SplitTag tag : tags) {
    for (const Sample& s : split.get(tag)) {
      check_dims(s.features.size(), dim, "sample features");
      out << to_string(tag) << ' ' << tax.level_name(s.label_level) << ' '
          << tax.class_name(s.label_level, s.label) << ' '
          << (s.true_species == kUnknownSpecies ? std::string("-")
                                                : tax.class_name(tax.leaf_level(), s.true_species));
      for (double v : s.features) out << ' ' << textio::format_double(v);
      out << '\n';
    }
  }
}

/// Appends every sample of `in` to `split`. Origin follows the split tag.
inline void read_dataset(std::istream& in, const Taxonomy& tax, DataSplit& split) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  bool saw_magic = false;
  bool saw_levels = false;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view view = textio::trim(line);
    if (view.empty()) continue;
    if (!saw_magic) {
      if (view != "# hiertax-dataset v1") throw ParseError(line_no, "missing dataset header");
      saw_magic = true;
      continue;
    }
    if (view.front() == '#') continue;
    auto fields = textio::split_ws(view);
    if (fields[0] == "dim") {
      if (fields.size() != 2 || !textio::parse_int(fields[1], dim)) {
        throw ParseError(line_no, "malformed dim line");
      }
      continue;
    }
    if (fields[0] == "levels") {
      if (fields.size() != 2) throw ParseError(line_no, "malformed levels line");
      if (textio::split(fields[1], ',') != tax.level_names()) {
        throw ParseError(line_no, "level names do not match the taxonomy");
      }
      saw_levels = true;
      continue;
    }
    if (dim == 0 || !saw_levels) throw ParseError(line_no, "sample before dim/levels header");
    auto tag = parse_split_tag(fields[0]);
    if (!tag) throw ParseError(line_no, "unknown split tag '" + std::string(fields[0]) + "'");
    if (fields.size() != 4 + dim) {
      throw ParseError(line_no, "expected " + std::to_string(4 + dim) + " fields, got " +
                                    std::to_string(fields.size()));
    }
    Sample s;
    auto level = tax.find_level(fields[1]);
    if (!level) throw ParseError(line_no, "unknown level '" + std::string(fields[1]) + "'");
    s.label_level = *level;
    auto label = tax.find_class(*level, fields[2]);
    if (!label) {
      fail(ErrorKind::kUnknownClass, "line " + std::to_string(line_no) + ": no " +
                                         std::string(fields[1]) + " class '" +
                                         std::string(fields[2]) + "'");
    }
    s.label = *label;
    if (fields[3] != "-") {
      auto species = tax.find_class(tax.leaf_level(), fields[3]);
      if (!species) {
        fail(ErrorKind::kUnknownClass, "line " + std::to_string(line_no) + ": no species '" +
                                           std::string(fields[3]) + "'");
      }
      if (tax.ancestor(*species, s.label_level) != s.label) {
        throw ParseError(line_no, "label is not an ancestor of the true species");
      }
      s.true_species = *species;
    }
    if ((*tag == SplitTag::kLabeled || *tag == SplitTag::kTest ||
         *tag == SplitTag::kValidation) &&
        s.label_level != tax.leaf_level()) {
      throw ParseError(line_no, std::string(to_string(*tag)) + " samples need species labels");
    }
    s.origin = *tag == SplitTag::kCoarseOut ? Origin::kOutOfClass : Origin::kInClass;
    s.features.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      if (!textio::parse_double(fields[4 + i], s.features[i]) || !std::isfinite(s.features[i])) {
        throw ParseError(line_no, "bad feature value '" + std::string(fields[4 + i]) + "'");
      }
    }
    split.get(*tag).push_back(std::move(s));
  }
  if (!saw_magic) throw ParseError(line_no, "empty dataset file");
}

inline void save_dataset(const std::string& path, const Taxonomy& tax, const DataSplit& split,
                         std::span<const SplitTag> tags = kAllSplits,
                         std::string_view stamp = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path);
  write_dataset(out, tax, split, tags, stamp);
}

inline DataSplit load_dataset(std::span<const std::string> paths, const Taxonomy& tax) {
  DataSplit split;
  for (const auto& path : paths) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::kIoError, "cannot read " + path);
    read_dataset(in, tax, split);
  }
  return split;
}

inline DataSplit load_dataset(const std::string& path, const Taxonomy& tax) {
  return load_dataset(std::span<const std::string>(&path, 1), tax);
}

// ---------------------------------------------------------------------------
// Training view

/**
 * The label space a model is trained on: the taxonomy restricted to the
 * species that have labeled samples (C_in), with every split re-indexed into
 * it. Coarse samples whose label has no in-class descendant cannot be
 * supervised and are dropped; out-of-class species lose their hidden
 * true_species index but keep their origin tag.
 */
struct TrainingView {
  Taxonomy taxonomy;
  DataSplit split;
  std::size_t dropped_coarse = 0;
};

inline TrainingView make_training_view(const Taxonomy& full, const DataSplit& split) {
  if (split.labeled.empty()) {
    fail(ErrorKind::kConfigError, "the labeled split is empty; nothing defines the class set");
  }
  std::set<std::size_t> species;
  for (const Sample& s : split.labeled) species.insert(s.label);
  const std::vector<std::size_t> leaves(species.begin(), species.end());

  TrainingView view;
  view.taxonomy = full.restrict_to(leaves);
  const Taxonomy& tax = view.taxonomy;

  auto remap_class = [&](std::size_t level, std::size_t cls) -> std::optional<std::size_t> {
    return tax.find_class(level, full.class_name(level, cls));
  };

  for (SplitTag tag : kAllSplits) {
    for (const Sample& s : split.get(tag)) {
      Sample r = s;
      auto label = remap_class(s.label_level, s.label);
      if (!label) {
        if (tag == SplitTag::kTest || tag == SplitTag::kValidation) {
          fail(ErrorKind::kConfigError, std::string(to_string(tag)) + " species '" +
                                            full.class_name(s.label_level, s.label) +
                                            "' has no labeled samples");
        }
        ++view.dropped_coarse;
        continue;
      }
      r.label = *label;
      if (s.true_species != kUnknownSpecies) {
        auto leaf = remap_class(full.leaf_level(), s.true_species);
        r.true_species = leaf ? *leaf : kUnknownSpecies;
      }
      view.split.get(tag).push_back(std::move(r));
    }
  }
  return view;
}

/// Label of `s` at `level`: coarsened along the tree, or read from the true
/// species when a finer level than the provided one is requested.
inline std::optional<std::size_t> label_at(const Taxonomy& tax, const Sample& s,
                                           std::size_t level) {
  if (level <= s.label_level) return tax.ancestor_of(s.label_level, s.label, level);
  if (s.true_species == kUnknownSpecies) return std::nullopt;
  return tax.ancestor(s.true_species, level);
}

}  // namespace hiertax

#endif  // HIERTAX_SYNTHDATA_HPP_
