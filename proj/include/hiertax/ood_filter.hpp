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

#ifndef HIERTAX_OOD_FILTER_HPP_
#define HIERTAX_OOD_FILTER_HPP_

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "hiertax/error.hpp"
#include "hiertax/eval.hpp"
#include "hiertax/model.hpp"
#include "hiertax/synthdata.hpp"
#include "hiertax/taxonomy.hpp"
#include "hiertax/textio.hpp"

namespace hiertax {

struct FilterConfig {
  double tau = 0.8;
  std::size_t match_level = 2;

  void validate() const {
    if (!(tau > 0.0)) fail(ErrorKind::kConfigError, "filter.tau must be > 0");
    if (match_level < 1) fail(ErrorKind::kConfigError, "filter.match_level must be >= 1");
  }
};

/// Per-sample decision record, in input order.
struct FilterDecision {
  std::size_t index = 0;
  double max_prob = 0.0;
  std::size_t predicted_leaf = 0;
  std::size_t predicted_ancestor = 0;
  std::size_t provided_ancestor = 0;
  bool kept = false;
};

/// Keep/reject counts plus in-class retention quality. The precision and
/// recall use the hidden origin tags and are for analysis only.
struct FilterStats {
  std::size_t total = 0;
  std::size_t kept = 0;
  std::size_t kept_in_class = 0;
  std::size_t total_in_class = 0;

  double kept_fraction() const { return total ? double(kept) / double(total) : 0.0; }
  /// Fraction of kept samples that are in-class; 1 when nothing is kept.
  double precision() const { return kept ? double(kept_in_class) / double(kept) : 1.0; }
  double recall() const {
    return total_in_class ? double(kept_in_class) / double(total_in_class) : 1.0;
  }
};

struct FilterResult {
  std::vector<Sample> kept;
  std::vector<FilterDecision> decisions;
  FilterStats stats;
};

/**
 * Keeps a coarsely labeled sample iff the frozen model is confident
 * (max p^L >= tau) and the ancestor of its leaf argmax at `match_level`
 * equals the provided label's ancestor there. Only features and provided
 * labels enter the decision.
 */
inline FilterResult filter(const Model& model, const Taxonomy& tax,
                           std::span<const Sample> samples, const FilterConfig& config) {
  config.validate();
  if (config.match_level > tax.num_levels()) {
    fail(ErrorKind::kLevelOrder, "filter.match_level is outside the taxonomy");
  }
  for (const Sample& s : samples) {
    if (config.match_level > s.label_level) {
      fail(ErrorKind::kLevelOrder, "filter.match_level " + std::to_string(config.match_level) +
                                       " is finer than a provided label at level " +
                                       std::to_string(s.label_level));
    }
  }
  FilterResult result;
  const Matrix probs = predict(model, samples);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    FilterDecision d;
    d.index = i;
    auto row = probs.row(i);
    d.predicted_leaf = argmax(row);
    d.max_prob = row[d.predicted_leaf];
    d.predicted_ancestor = tax.ancestor(d.predicted_leaf, config.match_level);
    d.provided_ancestor = tax.ancestor_of(s.label_level, s.label, config.match_level);
    d.kept = d.max_prob >= config.tau && d.predicted_ancestor == d.provided_ancestor;
    result.decisions.push_back(d);

    const bool in_class = s.origin == Origin::kInClass;
    ++result.stats.total;
    result.stats.total_in_class += in_class;
    if (d.kept) {
      result.kept.push_back(s);
      ++result.stats.kept;
      result.stats.kept_in_class += in_class;
    }
  }
  return result;
}

/// Filters U_in ∪ U_out. The kept samples become the `coarse_in` split (the
/// `filtered` coarse source); `coarse_out` is emptied; other splits are
/// untouched.
inline DataSplit filtered_source(const DataSplit& data, const Model& model, const Taxonomy& tax,
                                 const FilterConfig& config, FilterStats* stats = nullptr) {
  std::vector<Sample> pool = data.coarse_in;
  pool.insert(pool.end(), data.coarse_out.begin(), data.coarse_out.end());
  FilterResult result = filter(model, tax, pool, config);
  if (stats) *stats = result.stats;
  DataSplit out = data;
  out.coarse_in = std::move(result.kept);
  out.coarse_out.clear();
  return out;
}

/// Rows: sample id, max prob, predicted leaf, predicted ancestor, provided
/// label ancestor, decision.
inline void write_filter_report(std::ostream& out, const Taxonomy& tax,
                                const FilterResult& result, const FilterConfig& config) {
  out << "# hiertax-filter v1\n";
  out << "tau " << textio::format_double(config.tau) << '\n';
  out << "match_level " << tax.level_name(config.match_level) << '\n';
  out << "kept " << result.stats.kept << " total " << result.stats.total << '\n';
  out << "retention_precision " << textio::format_double(result.stats.precision())
      << " retention_recall " << textio::format_double(result.stats.recall()) << '\n';
  out << "columns sample max_prob predicted_leaf predicted_ancestor provided_label decision\n";
  for (const auto& d : result.decisions) {
    out << "row " << d.index << ' ' << textio::format_double(d.max_prob) << ' '
        << tax.class_name(tax.leaf_level(), d.predicted_leaf) << ' '
        << tax.class_name(config.match_level, d.predicted_ancestor) << ' '
        << tax.class_name(config.match_level, d.provided_ancestor) << ' '
        << (d.kept ? "keep" : "reject") << '\n';
  }
}

}  // namespace hiertax

#endif  // HIERTAX_OOD_FILTER_HPP_
