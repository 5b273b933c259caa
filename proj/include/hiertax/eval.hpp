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

#ifndef HIERTAX_EVAL_HPP_
#define HIERTAX_EVAL_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "hiertax/error.hpp"
#include "hiertax/linalg.hpp"
#include "hiertax/model.hpp"
#include "hiertax/synthdata.hpp"
#include "hiertax/taxonomy.hpp"
#include "hiertax/textio.hpp"

namespace hiertax {

/// Leaf distributions for every sample, one row each.
inline Matrix predict(const Model& model, std::span<const Sample> samples) {
  if (samples.empty()) return Matrix(0, model.num_classes());
  Matrix x = stack_rows(samples, model.input_dim(), [](const Sample& s) -> const auto& {
    return s.features;
  });
  return softmax_rows(model.forward(x).logits);
}

/// How a leaf distribution turns into a prediction at a coarse level.
enum class LevelRule {
  kMarginalized,     // argmax of the marginalized distribution
  kArgmaxAncestor,   // ancestor of the leaf argmax
};

inline std::size_t predict_at_level(const Taxonomy& tax, std::span<const double> leaf_probs,
                                    std::size_t level,
                                    LevelRule rule = LevelRule::kMarginalized) {
  if (rule == LevelRule::kArgmaxAncestor) return tax.ancestor(argmax(leaf_probs), level);
  return argmax(marginalize_to(tax, leaf_probs, level));
}

namespace detail {

inline std::size_t true_leaf(const Taxonomy& tax, const Sample& s) {
  if (s.label_level == tax.leaf_level()) return s.label;
  if (s.true_species != kUnknownSpecies) return s.true_species;
  fail(ErrorKind::kConfigError, "evaluation sample has no species label");
}

}  // namespace detail

/// Species-level top-1 from a prediction dump.
inline double top1(const Taxonomy& tax, const Matrix& probs, std::span<const Sample> samples) {
  if (samples.empty()) fail(ErrorKind::kEmptySplit, "top1 needs a non-empty test split");
  check_dims(probs.rows(), samples.size(), "prediction rows");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < samples.size(); ++r) {
    hits += argmax(probs.row(r)) == detail::true_leaf(tax, samples[r]);
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

inline double top1(const Taxonomy& tax, const Model& model, std::span<const Sample> samples) {
  if (samples.empty()) fail(ErrorKind::kEmptySplit, "top1 needs a non-empty test split");
  return top1(tax, predict(model, samples), samples);
}

/// Count matrix: entry (a, b) counts samples of true class a predicted as b.
struct ConfusionMatrix {
  std::size_t level = 0;
  std::vector<std::string> class_names;
  std::vector<std::vector<std::uint64_t>> counts;

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (const auto& row : counts) t = std::accumulate(row.begin(), row.end(), t);
    return t;
  }
  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < counts.size(); ++i) t += counts[i][i];
    return t;
  }

  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

inline ConfusionMatrix confusion(const Taxonomy& tax, const Matrix& probs,
                                 std::span<const Sample> samples, std::size_t level,
                                 LevelRule rule = LevelRule::kMarginalized) {
  if (level < 1 || level > tax.num_levels()) {
    fail(ErrorKind::kOutOfRange, "confusion level " + std::to_string(level) + " out of range");
  }
  check_dims(probs.rows(), samples.size(), "prediction rows");
  const std::size_t k = tax.class_count(level);
  ConfusionMatrix cm;
  cm.level = level;
  for (std::size_t c = 0; c < k; ++c) cm.class_names.push_back(tax.class_name(level, c));
  cm.counts.assign(k, std::vector<std::uint64_t>(k, 0));
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const std::size_t truth = tax.ancestor(detail::true_leaf(tax, samples[r]), level);
    ++cm.counts[truth][predict_at_level(tax, probs.row(r), level, rule)];
  }
  return cm;
}

inline double level_accuracy(const Taxonomy& tax, const Matrix& probs,
                             std::span<const Sample> samples, std::size_t level,
                             LevelRule rule = LevelRule::kMarginalized) {
  if (level < 1 || level > tax.num_levels()) {
    fail(ErrorKind::kOutOfRange, "accuracy level " + std::to_string(level) + " out of range");
  }
  if (samples.empty()) fail(ErrorKind::kEmptySplit, "level_accuracy needs samples");
  check_dims(probs.rows(), samples.size(), "prediction rows");
  std::size_t hits = 0;
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const std::size_t truth = tax.ancestor(detail::true_leaf(tax, samples[r]), level);
    hits += predict_at_level(tax, probs.row(r), level, rule) == truth;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

inline double level_accuracy(const Taxonomy& tax, const Model& model,
                             std::span<const Sample> samples, std::size_t level) {
  if (samples.empty()) fail(ErrorKind::kEmptySplit, "level_accuracy needs samples");
  return level_accuracy(tax, predict(model, samples), samples, level);
}

inline ConfusionMatrix confusion(const Taxonomy& tax, const Model& model,
                                 std::span<const Sample> samples, std::size_t level) {
  return confusion(tax, predict(model, samples), samples, level);
}

// ---------------------------------------------------------------------------
// Reports

/// Step-indexed trace with named columns (loss components, accuracies).
struct Trace {
  std::vector<std::string> columns;
  std::vector<std::uint64_t> steps;
  std::vector<std::vector<double>> rows;

  void add(std::uint64_t step, std::vector<double> values) {
    check_dims(values.size(), columns.size(), "trace row");
    steps.push_back(step);
    rows.push_back(std::move(values));
  }
  std::size_t column(std::string_view name) const {
    for (std::size_t i = 0; i < columns.size(); ++i) {
      if (columns[i] == name) return i;
    }
    fail(ErrorKind::kOutOfRange, "no trace column '" + std::string(name) + "'");
  }

  friend bool operator==(const Trace&, const Trace&) = default;
};

struct EvalReport {
  std::string experiment_id;
  std::vector<std::pair<std::string, std::string>> config;  // resolved config echo
  double top1_species = 0.0;
  std::vector<std::pair<std::string, double>> per_level_top1;  // level name -> accuracy
  std::vector<ConfusionMatrix> confusion;
  Trace trace;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

inline void write_report(std::ostream& out, const EvalReport& report, const Taxonomy* tax = nullptr) {
  auto check_token = [](const std::string& s) {
    if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
      fail(ErrorKind::kConfigError, "report token '" + s + "' must be non-empty without spaces");
    }
    return s;
  };
  out << "# hiertax-report v1\n";
  out << "id " << check_token(report.experiment_id) << '\n';
  for (const auto& [key, value] : report.config) {
    out << "config " << check_token(key) << ' ' << check_token(value) << '\n';
  }
  out << "top1 " << textio::format_double(report.top1_species) << '\n';
  for (const auto& [level, acc] : report.per_level_top1) {
    out << "level " << check_token(level) << ' ' << textio::format_double(acc) << '\n';
  }
  for (const auto& cm : report.confusion) {
    const std::string level_name =
        tax ? tax->level_name(cm.level) : std::to_string(cm.level);
    out << "confusion " << cm.level << ' ' << check_token(level_name) << ' '
        << cm.class_names.size() << '\n';
    out << "classes";
    for (const auto& name : cm.class_names) out << ' ' << check_token(name);
    out << '\n';
    for (const auto& row : cm.counts) {
      out << "row";
      for (auto v : row) out << ' ' << v;
      out << '\n';
    }
  }
  out << "trace_columns step";
  for (const auto& c : report.trace.columns) out << ' ' << check_token(c);
  out << '\n';
  for (std::size_t i = 0; i < report.trace.rows.size(); ++i) {
    out << "trace " << report.trace.steps[i];
    for (double v : report.trace.rows[i]) out << ' ' << textio::format_double(v);
    out << '\n';
  }
}

inline EvalReport read_report(std::istream& in) {
  EvalReport report;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  bool saw_columns = false;
  ConfusionMatrix* open = nullptr;
  std::size_t open_rows = 0;
  auto number = [&](std::string_view text) {
    double v = 0;
    if (!textio::parse_double(text, v)) throw ParseError(line_no, "bad number '" + std::string(text) + "'");
    return v;
  };
  while (std::getline(in, line)) {
    ++line_no;
    auto view = textio::trim(line);
    if (view.empty()) continue;
    if (!header) {
      if (view != "# hiertax-report v1") throw ParseError(line_no, "missing report header");
      header = true;
      continue;
    }
    auto f = textio::split_ws(view);
    const std::string_view key = f[0];
    if (open && open_rows < open->class_names.size() && key != "row") {
      throw ParseError(line_no, "confusion matrix truncated");
    }
    if (key == "id" && f.size() == 2) {
      report.experiment_id = f[1];
    } else if (key == "config" && f.size() == 3) {
      report.config.emplace_back(f[1], f[2]);
    } else if (key == "top1" && f.size() == 2) {
      report.top1_species = number(f[1]);
    } else if (key == "level" && f.size() == 3) {
      report.per_level_top1.emplace_back(f[1], number(f[2]));
    } else if (key == "confusion" && f.size() == 4) {
      ConfusionMatrix cm;
      if (!textio::parse_int(f[1], cm.level)) throw ParseError(line_no, "bad confusion level");
      std::size_t k = 0;
      if (!textio::parse_int(f[3], k)) throw ParseError(line_no, "bad confusion size");
      cm.class_names.resize(k);
      report.confusion.push_back(std::move(cm));
      open = &report.confusion.back();
      open_rows = 0;
      if (!std::getline(in, line)) throw ParseError(line_no + 1, "missing classes line");
      ++line_no;
      auto names = textio::split_ws(textio::trim(line));
      if (names.size() != k + 1 || names[0] != "classes") {
        throw ParseError(line_no, "malformed classes line");
      }
      for (std::size_t i = 0; i < k; ++i) open->class_names[i] = names[i + 1];
    } else if (key == "row" && open && open_rows < open->class_names.size()) {
      if (f.size() != open->class_names.size() + 1) throw ParseError(line_no, "bad row width");
      std::vector<std::uint64_t> row(f.size() - 1);
      for (std::size_t i = 0; i < row.size(); ++i) {
        if (!textio::parse_int(f[i + 1], row[i])) throw ParseError(line_no, "bad count");
      }
      open->counts.push_back(std::move(row));
      ++open_rows;
    } else if (key == "trace_columns" && f.size() >= 2 && f[1] == "step") {
      for (std::size_t i = 2; i < f.size(); ++i) report.trace.columns.emplace_back(f[i]);
      saw_columns = true;
    } else if (key == "trace" && saw_columns) {
      if (f.size() != report.trace.columns.size() + 2) throw ParseError(line_no, "bad trace width");
      std::uint64_t step = 0;
      if (!textio::parse_int(f[1], step)) throw ParseError(line_no, "bad step");
      std::vector<double> values;
      for (std::size_t i = 2; i < f.size(); ++i) values.push_back(number(f[i]));
      report.trace.add(step, std::move(values));
    } else {
      throw ParseError(line_no, "unexpected record '" + std::string(key) + "'");
    }
  }
  if (!header) throw ParseError(line_no, "empty report");
  if (open && open_rows < open->class_names.size()) {
    throw ParseError(line_no, "confusion matrix truncated");
  }
  return report;
}

inline void save_report(const std::string& path, const EvalReport& report,
                        const Taxonomy* tax = nullptr) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path);
  write_report(out, report, tax);
}

inline EvalReport load_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIoError, "cannot read " + path);
  return read_report(in);
}

// ---------------------------------------------------------------------------
// Sweep summaries: one row per experiment.

struct SummaryRow {
  std::string experiment;
  std::string method;
  bool use_hier = false;
  std::string level;
  std::string coarse_source;
  std::uint64_t seed = 0;
  double top1 = 0.0;
  std::string data_hash;
  std::string config_hash;

  friend bool operator==(const SummaryRow&, const SummaryRow&) = default;
};

inline void write_summary(std::ostream& out, std::span<const SummaryRow> rows) {
  out << "# hiertax-summary v1\n";
  out << "columns experiment method use_hier level coarse_source seed top1 data_hash "
         "config_hash\n";
  for (const auto& r : rows) {
    out << "row " << r.experiment << ' ' << r.method << ' ' << (r.use_hier ? 1 : 0) << ' '
        << r.level << ' ' << r.coarse_source << ' ' << r.seed << ' '
        << textio::format_double(r.top1) << ' ' << r.data_hash << ' ' << r.config_hash << '\n';
  }
}

inline std::vector<SummaryRow> read_summary(std::istream& in) {
  std::vector<SummaryRow> rows;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    auto view = textio::trim(line);
    if (view.empty()) continue;
    if (!header) {
      if (view != "# hiertax-summary v1") throw ParseError(line_no, "missing summary header");
      header = true;
      continue;
    }
    auto f = textio::split_ws(view);
    if (f[0] == "columns") continue;
    if (f[0] != "row" || f.size() != 10) throw ParseError(line_no, "malformed summary row");
    SummaryRow r;
    r.experiment = f[1];
    r.method = f[2];
    r.use_hier = f[3] == "1";
    r.level = f[4];
    r.coarse_source = f[5];
    if (!textio::parse_int(f[6], r.seed) || !textio::parse_double(f[7], r.top1)) {
      throw ParseError(line_no, "bad number in summary row");
    }
    r.data_hash = f[8];
    r.config_hash = f[9];
    rows.push_back(std::move(r));
  }
  if (!header) throw ParseError(line_no, "empty summary");
  return rows;
}

/// Concatenates summaries. Rows with the same seed must come from the same
/// dataset; mismatches are refused unless `force` is set.
inline std::vector<SummaryRow> merge_summaries(std::span<const std::vector<SummaryRow>> parts,
                                               bool force = false) {
  std::vector<SummaryRow> merged;
  for (const auto& part : parts) merged.insert(merged.end(), part.begin(), part.end());
  if (!force) {
    std::map<std::uint64_t, std::string> by_seed;
    for (const auto& r : merged) {
      auto [it, inserted] = by_seed.emplace(r.seed, r.data_hash);
      if (!inserted && it->second != r.data_hash) {
        fail(ErrorKind::kConfigError, "summary rows for seed " + std::to_string(r.seed) +
                                          " come from different datasets (" + it->second +
                                          " vs " + r.data_hash + "); pass --force to merge anyway");
      }
    }
  }
  return merged;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t n = 0;
};

inline MeanStd mean_std(std::span<const double> values) {
  MeanStd out;
  out.n = values.size();
  if (values.empty()) return out;
  out.mean = std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.stddev = std::sqrt(ss / (values.size() - 1));
  }
  return out;
}

}  // namespace hiertax

#endif  // HIERTAX_EVAL_HPP_
