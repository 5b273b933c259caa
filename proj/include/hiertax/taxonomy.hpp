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

#ifndef HIERTAX_TAXONOMY_HPP_
#define HIERTAX_TAXONOMY_HPP_

#include <algorithm>
#include <cstddef>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hiertax/error.hpp"
#include "hiertax/linalg.hpp"

namespace hiertax {

/// One class name per level, coarsest first.
using LeafPath = std::vector<std::string>;

inline std::vector<std::string> default_level_names() {
  return {"Kingdom", "Phylum", "Class", "Order", "Family", "Genus", "Species"};
}

/**
 * Tree-structured label space. Levels are 1-based: level 1 is the root tier
 * (Kingdom) and level L is the leaves. Class indices are assigned
 * lexicographically by name within each level, so two builds from the same
 * set of paths always agree.
 */
class Taxonomy {
 public:
  Taxonomy() = default;

  /// Builds from leaf paths. An empty `level_names` picks the default names
  /// when L = 7 and "L1".."Ln" otherwise.
  static Taxonomy build(std::span<const LeafPath> leaf_paths,
                        std::vector<std::string> level_names = {}) {
    if (leaf_paths.empty()) fail(ErrorKind::kEmptyInput, "taxonomy has no leaves");
    const std::size_t depth = leaf_paths.front().size();
    if (depth < 2) fail(ErrorKind::kConfigError, "taxonomy needs at least 2 levels");
    if (level_names.empty()) {
      level_names = depth == 7 ? default_level_names() : generic_level_names(depth);
    }
    if (level_names.size() != depth) {
      fail(ErrorKind::kConfigError, "level name count " + std::to_string(level_names.size()) +
                                        " does not match path length " + std::to_string(depth));
    }

    // (level, name) -> parent name; a second distinct parent makes a DAG.
    std::vector<std::map<std::string, std::string>> parent_name(depth);
    for (const LeafPath& path : leaf_paths) {
      if (path.size() != depth) {
        fail(ErrorKind::kConfigError, "leaf paths have differing lengths");
      }
      for (std::size_t l = 0; l < depth; ++l) {
        if (path[l].empty()) fail(ErrorKind::kConfigError, "empty class name in leaf path");
        const std::string parent = l == 0 ? std::string() : path[l - 1];
        auto [it, inserted] = parent_name[l].emplace(path[l], parent);
        if (!inserted && it->second != parent) {
          fail(ErrorKind::kInconsistentPath,
               level_names[l] + " '" + path[l] + "' appears under both '" + it->second +
                   "' and '" + parent + "'");
        }
      }
    }

    Taxonomy tax;
    tax.level_names_ = std::move(level_names);
    tax.names_.resize(depth);
    tax.parents_.resize(depth);
    for (std::size_t l = 0; l < depth; ++l) {
      for (const auto& entry : parent_name[l]) tax.names_[l].push_back(entry.first);
    }
    for (std::size_t l = 1; l < depth; ++l) {
      tax.parents_[l].reserve(tax.names_[l].size());
      for (const auto& [name, parent] : parent_name[l]) {
        tax.parents_[l].push_back(*tax.find_class(l, parent));
      }
    }
    tax.compute_ancestors();
    return tax;
  }

  std::size_t num_levels() const noexcept { return names_.size(); }
  std::size_t leaf_level() const noexcept { return names_.size(); }
  std::size_t num_leaves() const noexcept { return names_.empty() ? 0 : names_.back().size(); }

  std::size_t class_count(std::size_t level) const {
    check_level(level);
    return names_[level - 1].size();
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts;
    for (const auto& level : names_) counts.push_back(level.size());
    return counts;
  }

  /// Σ_l |C^l|: one edge into every class from its parent (or the root).
  std::size_t total_classes() const {
    std::size_t total = 0;
    for (const auto& level : names_) total += level.size();
    return total;
  }

  const std::vector<std::string>& level_names() const noexcept { return level_names_; }

  const std::string& level_name(std::size_t level) const {
    check_level(level);
    return level_names_[level - 1];
  }

  std::optional<std::size_t> find_level(std::string_view name) const {
    for (std::size_t l = 0; l < level_names_.size(); ++l) {
      if (level_names_[l] == name) return l + 1;
    }
    return std::nullopt;
  }

  const std::string& class_name(std::size_t level, std::size_t cls) const {
    check_class(level, cls);
    return names_[level - 1][cls];
  }

  std::optional<std::size_t> find_class(std::size_t level, std::string_view name) const {
    const auto& names = names_.at(level - 1);
    auto it = std::lower_bound(names.begin(), names.end(), name);
    if (it == names.end() || *it != name) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
  }

  /// Parent map for `level` > 1: class index at `level` -> index at level - 1.
  const std::vector<std::size_t>& parent_map(std::size_t level) const {
    check_level(level);
    if (level == 1) fail(ErrorKind::kOutOfRange, "the top level has no parents");
    return parents_[level - 1];
  }

  std::size_t parent(std::size_t level, std::size_t cls) const {
    check_class(level, cls);
    return parent_map(level)[cls];
  }

  std::size_t ancestor(std::size_t leaf, std::size_t level) const {
    check_class(leaf_level(), leaf);
    check_level(level);
    return ancestors_[level - 1][leaf];
  }

  /// Ancestors of every leaf at `level`; a leaf-indexed lookup table.
  const std::vector<std::size_t>& leaf_ancestors(std::size_t level) const {
    check_level(level);
    return ancestors_[level - 1];
  }

  /// Ancestor of an arbitrary class at `from_level`, at coarser `to_level`.
  std::size_t ancestor_of(std::size_t from_level, std::size_t cls, std::size_t to_level) const {
    check_class(from_level, cls);
    check_level(to_level);
    if (to_level > from_level) {
      fail(ErrorKind::kLevelOrder, "ancestor level must not be finer than the class level");
    }
    for (std::size_t l = from_level; l > to_level; --l) cls = parents_[l - 1][cls];
    return cls;
  }

  LeafPath leaf_path(std::size_t leaf) const {
    LeafPath path;
    for (std::size_t l = 1; l <= num_levels(); ++l) path.push_back(names_[l - 1][ancestor(leaf, l)]);
    return path;
  }

  /// Paths for every leaf, in leaf-index order (which is sorted by leaf name).
  std::vector<LeafPath> leaf_paths() const {
    std::vector<LeafPath> paths;
    for (std::size_t leaf = 0; leaf < num_leaves(); ++leaf) paths.push_back(leaf_path(leaf));
    return paths;
  }

  /// Sub-taxonomy spanned by the given leaves, reindexed.
  Taxonomy restrict_to(std::span<const std::size_t> leaves) const {
    std::vector<LeafPath> paths;
    for (std::size_t leaf : leaves) paths.push_back(leaf_path(leaf));
    return build(paths, level_names_);
  }

  friend bool operator==(const Taxonomy& a, const Taxonomy& b) {
    return a.level_names_ == b.level_names_ && a.names_ == b.names_ && a.parents_ == b.parents_;
  }

 private:
  static std::vector<std::string> generic_level_names(std::size_t depth) {
    std::vector<std::string> names;
    for (std::size_t l = 1; l <= depth; ++l) names.push_back("L" + std::to_string(l));
    return names;
  }

  void check_level(std::size_t level) const {
    if (level < 1 || level > num_levels()) {
      fail(ErrorKind::kOutOfRange, "level " + std::to_string(level) + " outside [1, " +
                                       std::to_string(num_levels()) + "]");
    }
  }

  void check_class(std::size_t level, std::size_t cls) const {
    check_level(level);
    if (cls >= names_[level - 1].size()) {
      fail(ErrorKind::kOutOfRange, "class " + std::to_string(cls) + " outside level " +
                                       level_names_[level - 1] + " of size " +
                                       std::to_string(names_[level - 1].size()));
    }
  }

  void compute_ancestors() {
    const std::size_t depth = num_levels();
    ancestors_.assign(depth, std::vector<std::size_t>(num_leaves()));
    std::iota(ancestors_[depth - 1].begin(), ancestors_[depth - 1].end(), std::size_t{0});
    for (std::size_t l = depth - 1; l >= 1; --l) {
      for (std::size_t leaf = 0; leaf < num_leaves(); ++leaf) {
        ancestors_[l - 1][leaf] = parents_[l][ancestors_[l][leaf]];
      }
    }
  }

  std::vector<std::string> level_names_;
  std::vector<std::vector<std::string>> names_;     // [level-1][class] sorted
  std::vector<std::vector<std::size_t>> parents_;   // [level-1][class] -> parent; empty at level 1
  std::vector<std::vector<std::size_t>> ancestors_; // [level-1][leaf]
};

/**
 * 0/1 matrix W_l^k mapping classes at a fine level l to their ancestors at a
 * coarse level k. Stored sparsely as one column index per row, since every
 * row has exactly one nonzero.
 */
class MarginalizationMatrix {
 public:
  MarginalizationMatrix(std::size_t fine_level, std::size_t coarse_level,
                        std::vector<std::size_t> column_of_row, std::size_t cols)
      : fine_level_(fine_level),
        coarse_level_(coarse_level),
        column_of_row_(std::move(column_of_row)),
        cols_(cols) {}

  std::size_t fine_level() const noexcept { return fine_level_; }
  std::size_t coarse_level() const noexcept { return coarse_level_; }
  std::size_t rows() const noexcept { return column_of_row_.size(); }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t column_of(std::size_t row) const { return column_of_row_.at(row); }
  const std::vector<std::size_t>& columns() const noexcept { return column_of_row_; }

  double operator()(std::size_t r, std::size_t c) const {
    return column_of_row_.at(r) == c ? 1.0 : 0.0;
  }

  Matrix dense() const {
    Matrix w(rows(), cols());
    for (std::size_t r = 0; r < rows(); ++r) w(r, column_of_row_[r]) = 1.0;
    return w;
  }

  friend bool operator==(const MarginalizationMatrix&, const MarginalizationMatrix&) = default;

 private:
  std::size_t fine_level_;
  std::size_t coarse_level_;
  std::vector<std::size_t> column_of_row_;
  std::size_t cols_;
};

inline MarginalizationMatrix marginalization_matrix(const Taxonomy& tax, std::size_t fine_level,
                                                    std::size_t coarse_level) {
  if (coarse_level >= fine_level) {
    fail(ErrorKind::kLevelOrder, "coarse level " + std::to_string(coarse_level) +
                                     " must be strictly coarser than fine level " +
                                     std::to_string(fine_level));
  }
  const std::size_t rows = tax.class_count(fine_level);
  std::vector<std::size_t> columns(rows);
  for (std::size_t r = 0; r < rows; ++r) columns[r] = tax.ancestor_of(fine_level, r, coarse_level);
  return MarginalizationMatrix(fine_level, coarse_level, std::move(columns),
                               tax.class_count(coarse_level));
}

/// Sparse product W_l^m · W_m^k = W_l^k.
inline MarginalizationMatrix compose(const MarginalizationMatrix& fine_to_mid,
                                     const MarginalizationMatrix& mid_to_coarse) {
  check_dims(mid_to_coarse.rows(), fine_to_mid.cols(), "compose");
  std::vector<std::size_t> columns(fine_to_mid.rows());
  for (std::size_t r = 0; r < columns.size(); ++r) {
    columns[r] = mid_to_coarse.column_of(fine_to_mid.column_of(r));
  }
  return MarginalizationMatrix(fine_to_mid.fine_level(), mid_to_coarse.coarse_level(),
                               std::move(columns), mid_to_coarse.cols());
}

/// q^k = q^l · W_l^k as grouped summation.
inline void marginalize(std::span<const double> probs, const MarginalizationMatrix& w,
                        std::span<double> out) {
  check_dims(probs.size(), w.rows(), "marginalize input");
  check_dims(out.size(), w.cols(), "marginalize output");
  std::fill(out.begin(), out.end(), 0.0);
  const auto& columns = w.columns();
  for (std::size_t r = 0; r < probs.size(); ++r) out[columns[r]] += probs[r];
}

inline std::vector<double> marginalize(std::span<const double> probs,
                                       const MarginalizationMatrix& w) {
  std::vector<double> out(w.cols());
  marginalize(probs, w, out);
  return out;
}

/// Leaf distribution marginalized to `level`; identity at the leaf level.
inline std::vector<double> marginalize_to(const Taxonomy& tax, std::span<const double> leaf_probs,
                                          std::size_t level) {
  check_dims(leaf_probs.size(), tax.num_leaves(), "marginalize_to input");
  std::vector<double> out(tax.class_count(level), 0.0);
  const auto& anc = tax.leaf_ancestors(level);
  for (std::size_t leaf = 0; leaf < leaf_probs.size(); ++leaf) out[anc[leaf]] += leaf_probs[leaf];
  return out;
}

// Text format: a header line with the level names, then one leaf path per
// line, fields joined by ','. Leaves are written in sorted path order. Lines
// starting with '#' are comments.

inline void write_taxonomy(std::ostream& out, const Taxonomy& tax, std::string_view stamp = {}) {
  if (!stamp.empty()) out << "# " << stamp << '\n';
  auto join = [&out](const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (fields[i].find_first_of(",\n\r") != std::string::npos) {
        fail(ErrorKind::kConfigError, "class name '" + fields[i] + "' contains a separator");
      }
      out << (i ? "," : "") << fields[i];
    }
    out << '\n';
  };
  join(tax.level_names());
  auto paths = tax.leaf_paths();
  std::sort(paths.begin(), paths.end());
  for (const auto& path : paths) join(path);
}

inline Taxonomy read_taxonomy(std::istream& in) {
  auto split = [](const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream stream(line);
    while (std::getline(stream, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
  };
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  std::vector<LeafPath> paths;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line.front() == '#') continue;
    auto fields = split(line);
    if (header.empty()) {
      if (fields.size() < 2) throw ParseError(line_no, "header needs at least 2 level names");
      header = std::move(fields);
      continue;
    }
    if (fields.size() != header.size()) {
      throw ParseError(line_no, "expected " + std::to_string(header.size()) + " fields, got " +
                                    std::to_string(fields.size()));
    }
    for (const auto& f : fields) {
      if (f.empty()) throw ParseError(line_no, "empty class name");
    }
    paths.push_back(std::move(fields));
  }
  if (paths.empty()) fail(ErrorKind::kEmptyInput, "taxonomy file has no leaves");
  return Taxonomy::build(paths, header);
}

inline void save_taxonomy(const std::string& path, const Taxonomy& tax,
                          std::string_view stamp = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path);
  write_taxonomy(out, tax, stamp);
}

inline Taxonomy load_taxonomy(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIoError, "cannot read " + path);
  return read_taxonomy(in);
}

}  // namespace hiertax

#endif  // HIERTAX_TAXONOMY_HPP_
