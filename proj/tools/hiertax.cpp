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

// Command-line front end: data generation, training, filtering, evaluation,
// sweeps and summary aggregation. Progress goes to stderr; results go to
// files only.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "hiertax.hpp"

namespace fs = std::filesystem;

namespace hiertax::cli {
namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitTrain = 4;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfigError:
    case ErrorKind::kLevelOrder:
      return kExitConfig;
    case ErrorKind::kInconsistentPath:
    case ErrorKind::kEmptyInput:
    case ErrorKind::kDimensionMismatch:
    case ErrorKind::kParseError:
    case ErrorKind::kUnknownClass:
    case ErrorKind::kMissingSplit:
    case ErrorKind::kEmptySplit:
    case ErrorKind::kIoError:
      return kExitData;
    case ErrorKind::kOutOfRange:
    case ErrorKind::kNonFiniteGradient:
    case ErrorKind::kArchitectureMismatch:
    case ErrorKind::kIndexMisalignment:
    case ErrorKind::kEmptyQueue:
      return kExitTrain;
  }
  return kExitTrain;
}

std::string_view category(int code) {
  switch (code) {
    case kExitConfig: return "ConfigError";
    case kExitData: return "DataError";
    default: return "TrainError";
  }
}

struct Options {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  std::vector<std::uint64_t> seeds;
  unsigned jobs = 0;
  std::string data;
  std::string model;
  std::string grid = "methods";
  std::vector<std::string> inputs;
  bool force = false;
};

ExperimentConfig resolve_config(const Options& opts) {
  ExperimentConfig config = opts.config_path.empty() ? ExperimentConfig{}
                                                     : load_config(opts.config_path);
  for (const auto& assignment : opts.overrides) apply_override(config, assignment);
  config.validate();
  return config;
}

std::vector<std::uint64_t> seeds_or_default(const Options& opts, const ExperimentConfig& config) {
  if (!opts.seeds.empty()) return opts.seeds;
  return {config.train.seed};
}

/// Seed `s` drives both data generation and training.
ExperimentConfig with_seed(ExperimentConfig config, std::uint64_t seed) {
  config.gen.seed = seed;
  config.train.seed = seed;
  return config;
}

std::string stamp(const ExperimentConfig& config) { return "config_hash " + config_hash(config); }

// ---------------------------------------------------------------------------
// Output directories are assembled under `<dir>.partial` and renamed into
// place once complete.

class OutputDir {
 public:
  explicit OutputDir(fs::path final_path)
      : final_(std::move(final_path)), partial_(final_.string() + ".partial") {
    std::error_code ec;
    fs::remove_all(partial_, ec);
    fs::create_directories(partial_, ec);
    if (ec) fail(ErrorKind::kIoError, "cannot create " + partial_.string() + ": " + ec.message());
  }
  const fs::path& path() const { return partial_; }
  std::string file(const std::string& name) const { return (partial_ / name).string(); }

  void commit() {
    std::error_code ec;
    fs::remove_all(final_, ec);
    fs::rename(partial_, final_, ec);
    if (ec) fail(ErrorKind::kIoError, "cannot move output into " + final_.string() + ": " + ec.message());
  }

 private:
  fs::path final_;
  fs::path partial_;
};

fs::path output_path(const Options& opts, std::string_view command, const ExperimentConfig& config) {
  if (!opts.out.empty()) return opts.out;
  const char* root = std::getenv("HIERTAX_OUT_ROOT");
  return fs::path(root && *root ? root : "runs") /
         (std::string(command) + "-" + config_hash(config));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path);
  out << text;
}

void save_resolved_config(const OutputDir& dir, const ExperimentConfig& config) {
  write_text(dir.file("config.txt"), config_text(config));
}

// ---------------------------------------------------------------------------
// Datasets on disk: taxonomy.txt plus one file per split.

struct Dataset {
  Taxonomy taxonomy;
  DataSplit split;
  std::string hash;
};

std::string split_file(SplitTag tag) { return std::string(to_string(tag)) + ".txt"; }

void save_data_dir(const OutputDir& dir, const Taxonomy& tax, const DataSplit& split,
                   const std::string& stamp_text) {
  save_taxonomy(dir.file("taxonomy.txt"), tax, stamp_text);
  for (SplitTag tag : kAllSplits) {
    const SplitTag one[] = {tag};
    save_dataset(dir.file(split_file(tag)), tax, split, one, stamp_text);
  }
}

std::string file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIoError, "cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

Dataset load_data_dir(const fs::path& dir) {
  Dataset data;
  const fs::path tax_path = dir / "taxonomy.txt";
  std::uint64_t hash = textio::fnv1a(file_bytes(tax_path));
  data.taxonomy = load_taxonomy(tax_path.string());
  std::vector<std::string> paths;
  for (SplitTag tag : kAllSplits) {
    const fs::path p = dir / split_file(tag);
    if (!fs::exists(p)) continue;
    hash = textio::fnv1a(file_bytes(p), hash);
    paths.push_back(p.string());
  }
  if (paths.empty()) fail(ErrorKind::kIoError, "no split files in " + dir.string());
  data.split = load_dataset(paths, data.taxonomy);
  data.hash = textio::hex64(hash);
  return data;
}

Dataset generate_dataset(const ExperimentConfig& config) {
  GeneratedData generated = generate(config.gen);
  return {std::move(generated.taxonomy), std::move(generated.split), data_hash(config)};
}

// ---------------------------------------------------------------------------
// Reports

EvalReport build_report(const std::string& id, const ExperimentConfig& config,
                        const TrainingView& view, const Model& model, const Trace& trace) {
  EvalReport report;
  report.experiment_id = id;
  report.config.emplace_back("config_hash", config_hash(config));
  for (const auto& key : config_keys()) {
    std::string value = get_value(config, key);
    report.config.emplace_back(key, value.empty() ? "-" : value);
  }
  const Taxonomy& tax = view.taxonomy;
  const auto& test = view.split.test;
  if (test.empty()) fail(ErrorKind::kMissingSplit, "the test split is empty");
  const Matrix probs = predict(model, test);
  report.top1_species = top1(tax, probs, test);
  for (std::size_t level = 1; level <= tax.num_levels(); ++level) {
    report.per_level_top1.emplace_back(tax.level_name(level),
                                       level_accuracy(tax, probs, test, level));
  }
  for (std::size_t level : config.confusion_levels) {
    if (level <= tax.num_levels()) report.confusion.push_back(confusion(tax, probs, test, level));
  }
  report.trace = trace;
  return report;
}

std::string level_label(const ExperimentConfig& config, const Taxonomy& tax) {
  if (!config.train.use_hier) return "none";
  return tax.level_name(config.train.coarse_level);
}

/// Trains one experiment into `dir` and returns its summary row.
SummaryRow run_experiment(const std::string& experiment, const ExperimentConfig& config,
                          const Dataset& data, const fs::path& dir) {
  fs::create_directories(dir);
  const TrainingView view = make_training_view(data.taxonomy, data.split);
  const TrainResult result = train(config.train, view);
  const std::string stamp_text = stamp(config);
  save_checkpoint((dir / "model.ckpt").string(), result.model, stamp_text);
  if (result.teacher) save_checkpoint((dir / "teacher.ckpt").string(), *result.teacher, stamp_text);
  write_text((dir / "config.txt").string(), config_text(config));
  const EvalReport report = build_report(experiment, config, view, result.model, result.trace);
  save_report((dir / "report.txt").string(), report, &view.taxonomy);

  SummaryRow row;
  row.experiment = experiment;
  row.method = std::string(to_string(config.train.method));
  row.use_hier = config.train.use_hier;
  row.level = level_label(config, view.taxonomy);
  row.coarse_source = std::string(to_string(config.train.coarse_source));
  row.seed = config.train.seed;
  row.top1 = report.top1_species;
  row.data_hash = data.hash;
  row.config_hash = config_hash(config);
  return row;
}

void save_summary(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path);
  write_summary(out, rows);
}

/// Mean and sample standard deviation of top-1 per experiment, in first-seen
/// order.
void save_aggregate(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<double>> values;
  for (const auto& r : rows) {
    if (!values.count(r.experiment)) order.push_back(r.experiment);
    values[r.experiment].push_back(r.top1);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path);
  out << "# hiertax-aggregate v1\n";
  out << "columns experiment seeds mean_top1 std_top1\n";
  for (const auto& name : order) {
    const MeanStd m = mean_std(values[name]);
    out << "row " << name << ' ' << m.n << ' ' << textio::format_double(m.mean) << ' '
        << textio::format_double(m.stddev) << '\n';
  }
}

// ---------------------------------------------------------------------------
// Parallel cells: each cell is single-threaded; results keep cell order.

struct Cell {
  std::string experiment;
  ExperimentConfig config;
  const Dataset* data = nullptr;
  fs::path dir;
};

std::vector<SummaryRow> run_cells(const std::vector<Cell>& cells, unsigned jobs) {
  if (jobs == 0) jobs = std::max(1u, std::thread::hardware_concurrency());
  jobs = std::min<unsigned>(jobs, std::max<std::size_t>(cells.size(), 1));
  std::vector<SummaryRow> rows(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex log;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        const Cell& c = cells[i];
        rows[i] = run_experiment(c.experiment, c.config, *c.data, c.dir);
        std::lock_guard<std::mutex> lock(log);
        std::cerr << "[" << ++done << "/" << cells.size() << "] " << c.experiment << " seed "
                  << c.config.train.seed << " top1 " << textio::format_double(rows[i].top1)
                  << '\n';
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_gen_data(const Options& opts) {
  const ExperimentConfig config = resolve_config(opts);
  OutputDir dir(output_path(opts, "gen-data", config));
  std::cerr << "generating dataset (data hash " << data_hash(config) << ")\n";
  const Dataset data = generate_dataset(config);
  save_data_dir(dir, data.taxonomy, data.split, stamp(config));
  save_resolved_config(dir, config);
  dir.commit();
  return 0;
}

int cmd_train(const Options& opts) {
  const ExperimentConfig base = resolve_config(opts);
  OutputDir dir(output_path(opts, "train", base));
  save_resolved_config(dir, base);
  std::optional<Dataset> loaded;
  if (!opts.data.empty()) loaded = load_data_dir(opts.data);

  std::vector<Dataset> generated;
  const auto seeds = seeds_or_default(opts, base);
  if (!loaded) {
    for (std::uint64_t s : seeds) generated.push_back(generate_dataset(with_seed(base, s)));
  }
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    Cell c;
    c.experiment = std::string(to_string(base.train.method));
    c.config = with_seed(base, seeds[i]);
    c.data = loaded ? &*loaded : &generated[i];
    c.dir = dir.path() / ("seed-" + std::to_string(seeds[i]));
    cells.push_back(std::move(c));
  }
  const auto rows = run_cells(cells, opts.jobs);
  save_summary(dir.file("summary.txt"), rows);
  dir.commit();
  return 0;
}

int cmd_filter(const Options& opts) {
  const ExperimentConfig config = resolve_config(opts);
  if (opts.data.empty()) fail(ErrorKind::kConfigError, "filter needs --data <dir>");
  const Dataset data = load_data_dir(opts.data);
  const TrainingView view = make_training_view(data.taxonomy, data.split);
  OutputDir dir(output_path(opts, "filter", config));
  const Model model = opts.model.empty() ? train_filter_model(config.train, view)
                                         : load_checkpoint(opts.model);
  if (opts.model.empty()) save_checkpoint(dir.file("filter_model.ckpt"), model, stamp(config));

  std::vector<Sample> pool = view.split.coarse_in;
  pool.insert(pool.end(), view.split.coarse_out.begin(), view.split.coarse_out.end());
  const FilterResult result = filter(model, view.taxonomy, pool, config.train.filter);
  {
    std::ofstream out(dir.file("filter_report.txt"), std::ios::binary);
    if (!out) fail(ErrorKind::kIoError, "cannot write filter_report.txt");
    write_filter_report(out, view.taxonomy, result, config.train.filter);
    out << "# " << stamp(config) << '\n';
  }
  DataSplit kept = view.split;
  kept.coarse_in = result.kept;
  kept.coarse_out.clear();
  save_data_dir(dir, view.taxonomy, kept, stamp(config));
  save_resolved_config(dir, config);
  std::cerr << "kept " << result.stats.kept << " of " << result.stats.total << '\n';
  dir.commit();
  return 0;
}

int cmd_eval(const Options& opts) {
  const ExperimentConfig config = resolve_config(opts);
  if (opts.data.empty()) fail(ErrorKind::kConfigError, "eval needs --data <dir>");
  if (opts.model.empty()) fail(ErrorKind::kConfigError, "eval needs --model <checkpoint>");
  const Dataset data = load_data_dir(opts.data);
  const TrainingView view = make_training_view(data.taxonomy, data.split);
  const Model model = load_checkpoint(opts.model);
  if (model.shape().classes != view.taxonomy.num_leaves()) {
    fail(ErrorKind::kArchitectureMismatch,
         "checkpoint " + opts.model + " predicts " + std::to_string(model.shape().classes) +
             " species but the data has " + std::to_string(view.taxonomy.num_leaves()));
  }
  OutputDir dir(output_path(opts, "eval", config));
  const EvalReport report = build_report("eval", config, view, model, Trace{});
  save_report(dir.file("report.txt"), report, &view.taxonomy);
  save_resolved_config(dir, config);
  dir.commit();
  return 0;
}

std::string cell_name(const TrainConfig& t) {
  return std::string(to_string(t.method)) + (t.use_hier ? "-hier-" : "-flat-") +
         std::string(to_string(t.coarse_source));
}

int cmd_sweep(const Options& opts) {
  const ExperimentConfig base = resolve_config(opts);
  if (opts.grid != "methods" && opts.grid != "levels") {
    fail(ErrorKind::kConfigError, "unknown grid '" + opts.grid + "'; valid grids: methods, levels");
  }
  OutputDir dir(output_path(opts, "sweep-" + opts.grid, base));
  save_resolved_config(dir, base);
  const auto seeds = seeds_or_default(opts, base);
  std::vector<Dataset> data;
  for (std::uint64_t s : seeds) data.push_back(generate_dataset(with_seed(base, s)));

  std::vector<std::pair<std::string, ExperimentConfig>> variants;
  if (opts.grid == "methods") {
    for (CoarseSource source : {CoarseSource::kUin, CoarseSource::kUinPlusUout}) {
      for (Method m : kAllMethods) {
        for (bool hier : {false, true}) {
          ExperimentConfig c = base;
          c.train.method = m;
          c.train.use_hier = hier;
          c.train.coarse_source = source;
          variants.emplace_back(cell_name(c.train), c);
        }
      }
    }
  } else {
    ExperimentConfig none = base;
    none.train.use_hier = false;
    variants.emplace_back("levels-none", none);
    for (std::size_t level : base.sweep_levels) {
      ExperimentConfig c = base;
      c.train.use_hier = true;
      c.train.coarse_level = level;
      variants.emplace_back("levels-" + base.gen.level_names[level - 1], c);
    }
  }
  std::vector<Cell> cells;
  for (const auto& [name, config] : variants) {
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      Cell c;
      c.experiment = name;
      c.config = with_seed(config, seeds[i]);
      c.config.validate();
      c.data = &data[i];
      c.dir = dir.path() / name / ("seed-" + std::to_string(seeds[i]));
      cells.push_back(std::move(c));
    }
  }
  const auto rows = run_cells(cells, opts.jobs);
  save_summary(dir.file("summary.txt"), rows);
  save_aggregate(dir.file("aggregate.txt"), rows);
  dir.commit();
  return 0;
}

int cmd_report(const Options& opts) {
  if (opts.inputs.empty()) fail(ErrorKind::kConfigError, "report needs at least one summary file");
  std::vector<std::vector<SummaryRow>> parts;
  for (const auto& path : opts.inputs) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::kIoError, "cannot read " + path);
    parts.push_back(read_summary(in));
  }
  const auto merged = merge_summaries(parts, opts.force);
  const fs::path out = opts.out.empty() ? fs::path("report") : fs::path(opts.out);
  OutputDir dir(out);
  save_summary(dir.file("summary.txt"), merged);
  save_aggregate(dir.file("aggregate.txt"), merged);
  dir.commit();
  return 0;
}

void add_config_flags(CLI::App* app, Options& opts) {
  app->add_option("--config", opts.config_path, "Config file")->check(CLI::ExistingFile);
  app->add_option("--set", opts.overrides, "Override a config key (key=value), repeatable")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  app->add_option("--out", opts.out, "Output directory");
}

void add_seed_flags(CLI::App* app, Options& opts) {
  app->add_option("--seeds", opts.seeds, "Comma-separated seeds (data and training)")
      ->delimiter(',');
  app->add_option("--jobs", opts.jobs, "Worker threads (default: core count)");
}

}  // namespace

int run(int argc, char** argv) {
  CLI::App app{"hiertax: semi-supervised learning with coarse taxonomic labels"};
  app.require_subcommand(1);
  Options opts;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  add_config_flags(gen, opts);

  auto* tr = app.add_subcommand("train", "Train one method, one experiment per seed");
  add_config_flags(tr, opts);
  add_seed_flags(tr, opts);
  tr->add_option("--data", opts.data, "Dataset directory (default: generate from config)");

  auto* fl = app.add_subcommand("filter", "Filter coarse data with a frozen model");
  add_config_flags(fl, opts);
  fl->add_option("--data", opts.data, "Dataset directory")->required();
  fl->add_option("--model", opts.model, "Filter model checkpoint (default: train one)");

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on the test split");
  add_config_flags(ev, opts);
  ev->add_option("--data", opts.data, "Dataset directory")->required();
  ev->add_option("--model", opts.model, "Model checkpoint")->required();

  auto* sw = app.add_subcommand("sweep", "Run a grid of experiments over seeds");
  add_config_flags(sw, opts);
  add_seed_flags(sw, opts);
  sw->add_option("--grid", opts.grid, "methods or levels");

  auto* rp = app.add_subcommand("report", "Merge sweep summaries");
  rp->add_option("summaries", opts.inputs, "Summary files")->required();
  rp->add_option("--out", opts.out, "Output directory");
  rp->add_flag("--force", opts.force, "Merge rows from different datasets");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen) return cmd_gen_data(opts);
    if (*tr) return cmd_train(opts);
    if (*fl) return cmd_filter(opts);
    if (*ev) return cmd_eval(opts);
    if (*sw) return cmd_sweep(opts);
    if (*rp) return cmd_report(opts);
  } catch (const Error& e) {
    const int code = exit_code(e.kind());
    std::cerr << "error: ";
    if (category(code) != to_string(e.kind())) std::cerr << category(code) << ": ";
    std::cerr << e.what() << '\n';
    return code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace hiertax::cli

int main(int argc, char** argv) { return hiertax::cli::run(argc, argv); }
