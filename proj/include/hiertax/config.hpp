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

#ifndef HIERTAX_CONFIG_HPP_
#define HIERTAX_CONFIG_HPP_

#include <fstream>
#include <optional>
#include <functional>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hiertax/error.hpp"
#include "hiertax/synthdata.hpp"
#include "hiertax/textio.hpp"
#include "hiertax/trainers.hpp"

namespace hiertax {

/// Everything one experiment needs: data generation, training, evaluation.
struct ExperimentConfig {
  GenConfig gen;
  TrainConfig train;
  std::vector<std::size_t> sweep_levels = {1, 2, 3, 4, 5, 6, 7};
  std::vector<std::size_t> confusion_levels = {2};

  void validate() const {
    gen.validate();
    train.validate();
    for (std::size_t level : sweep_levels) {
      if (level < 1 || level > gen.num_levels()) {
        fail(ErrorKind::kConfigError, "eval.sweep_levels entry " + std::to_string(level) +
                                          " is outside the taxonomy");
      }
    }
    for (std::size_t level : confusion_levels) {
      if (level < 1 || level > gen.num_levels()) {
        fail(ErrorKind::kConfigError, "eval.confusion_levels entry " + std::to_string(level) +
                                          " is outside the taxonomy");
      }
    }
  }
};

namespace config_detail {

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

[[noreturn]] inline void bad_value(std::string_view key, std::string_view value) {
  fail(ErrorKind::kConfigError,
       "invalid value '" + std::string(value) + "' for key " + std::string(key));
}

template <typename T>
std::string show(const T& v) {
  if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    return textio::format_double(v);
  } else if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_integral_v<T>) {
    return std::to_string(v);
  } else {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ',';
      out += show(v[i]);
    }
    return out;
  }
}

template <typename T>
bool parse(std::string_view text, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1") return out = true, true;
    if (text == "false" || text == "0") return out = false, true;
    return false;
  } else if constexpr (std::is_floating_point_v<T>) {
    return textio::parse_double(text, out);
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (text.empty()) return false;
    out = std::string(text);
    return true;
  } else if constexpr (std::is_integral_v<T>) {
    return textio::parse_int(text, out);
  } else {
    T items;
    if (!text.empty()) {
      for (std::string_view part : textio::split(text, ',')) {
        typename T::value_type item{};
        if (!parse(textio::trim(part), item)) return false;
        items.push_back(std::move(item));
      }
    }
    out = std::move(items);
    return true;
  }
}

template <typename T, typename Access>
Field plain(std::string key, Access access) {
  Field f;
  f.key = key;
  f.get = [access](const ExperimentConfig& c) {
    return show(access(const_cast<ExperimentConfig&>(c)));
  };
  f.set = [access, key](ExperimentConfig& c, std::string_view text) {
    T value{};
    if (!parse(text, value)) bad_value(key, text);
    access(c) = std::move(value);
  };
  return f;
}

template <typename E, typename Access, typename Show, typename Parse>
Field enumerated(std::string key, Access access, Show show_fn, Parse parse_fn,
                 std::string choices) {
  Field f;
  f.key = key;
  f.get = [access, show_fn](const ExperimentConfig& c) {
    return std::string(show_fn(access(const_cast<ExperimentConfig&>(c))));
  };
  f.set = [access, parse_fn, key, choices](ExperimentConfig& c, std::string_view text) {
    std::optional<E> value = parse_fn(text);
    if (!value) {
      fail(ErrorKind::kConfigError, "invalid value '" + std::string(text) + "' for key " + key +
                                        "; valid values: " + choices);
    }
    access(c) = *value;
  };
  return f;
}

inline std::string method_names() {
  std::string out;
  for (Method m : kAllMethods) out += (out.empty() ? "" : ", ") + std::string(to_string(m));
  return out;
}

inline std::string_view show_student(StudentInit s) {
  return s == StudentInit::kFresh ? "fresh" : "teacher";
}

inline std::optional<StudentInit> parse_student(std::string_view text) {
  if (text == "fresh") return StudentInit::kFresh;
  if (text == "teacher") return StudentInit::kTeacher;
  return std::nullopt;
}

// clang-format off
inline const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> kFields = {
      plain<std::vector<std::string>>("gen.level_names", [](C& c) -> auto& { return c.gen.level_names; }),
      plain<std::vector<std::size_t>>("gen.level_counts", [](C& c) -> auto& { return c.gen.level_counts; }),
      plain<bool>("gen.semi_inat_shape", [](C& c) -> auto& { return c.gen.semi_inat_shape; }),
      plain<std::size_t>("gen.dim", [](C& c) -> auto& { return c.gen.dim; }),
      plain<std::vector<double>>("gen.level_scales", [](C& c) -> auto& { return c.gen.level_scales; }),
      plain<double>("gen.noise", [](C& c) -> auto& { return c.gen.noise; }),
      plain<std::size_t>("gen.labeled_per_species", [](C& c) -> auto& { return c.gen.labeled_per_species; }),
      plain<std::size_t>("gen.coarse_in_per_species", [](C& c) -> auto& { return c.gen.coarse_in_per_species; }),
      plain<std::size_t>("gen.coarse_out_per_species", [](C& c) -> auto& { return c.gen.coarse_out_per_species; }),
      plain<std::size_t>("gen.test_per_species", [](C& c) -> auto& { return c.gen.test_per_species; }),
      plain<std::size_t>("gen.validation_per_species", [](C& c) -> auto& { return c.gen.validation_per_species; }),
      plain<double>("gen.out_fraction", [](C& c) -> auto& { return c.gen.out_fraction; }),
      plain<std::size_t>("gen.attach_level", [](C& c) -> auto& { return c.gen.attach_level; }),
      plain<double>("gen.out_offset_multiplier", [](C& c) -> auto& { return c.gen.out_offset_multiplier; }),
      plain<double>("gen.long_tail_exponent", [](C& c) -> auto& { return c.gen.long_tail_exponent; }),
      plain<std::size_t>("gen.coarse_label_level", [](C& c) -> auto& { return c.gen.coarse_label_level; }),
      plain<std::uint64_t>("gen.seed", [](C& c) -> auto& { return c.gen.seed; }),

      enumerated<Method>("train.method", [](C& c) -> auto& { return c.train.method; },
                         [](Method m) { return to_string(m); }, parse_method, method_names()),
      plain<bool>("train.use_hier", [](C& c) -> auto& { return c.train.use_hier; }),
      plain<std::size_t>("train.coarse_level", [](C& c) -> auto& { return c.train.coarse_level; }),
      enumerated<CoarseSource>("train.coarse_source", [](C& c) -> auto& { return c.train.coarse_source; },
                               [](CoarseSource s) { return to_string(s); }, parse_coarse_source,
                               "U_in, U_in_plus_U_out, filtered"),
      plain<std::size_t>("train.m", [](C& c) -> auto& { return c.train.labeled_batch; }),
      plain<std::size_t>("train.n", [](C& c) -> auto& { return c.train.coarse_batch; }),
      plain<std::size_t>("train.steps", [](C& c) -> auto& { return c.train.steps; }),
      plain<bool>("train.cosine_schedule", [](C& c) -> auto& { return c.train.cosine_schedule; }),
      plain<bool>("train.weak_noise_everywhere", [](C& c) -> auto& { return c.train.weak_noise_everywhere; }),
      enumerated<Architecture>("train.architecture", [](C& c) -> auto& { return c.train.architecture; },
                               [](Architecture a) { return to_string(a); }, parse_architecture,
                               "linear, mlp1"),
      plain<std::size_t>("train.hidden", [](C& c) -> auto& { return c.train.hidden; }),
      plain<std::size_t>("train.embed_dim", [](C& c) -> auto& { return c.train.embed_dim; }),
      plain<std::size_t>("train.pretrain_steps", [](C& c) -> auto& { return c.train.pretrain_steps; }),
      plain<std::size_t>("train.pretrain_batch", [](C& c) -> auto& { return c.train.pretrain_batch; }),
      plain<double>("train.pretrain_lr", [](C& c) -> auto& { return c.train.pretrain_lr; }),
      enumerated<StudentInit>("train.student_init", [](C& c) -> auto& { return c.train.student_init; },
                              show_student, parse_student, "fresh, teacher"),
      plain<std::size_t>("train.eval_every", [](C& c) -> auto& { return c.train.eval_every; }),
      plain<bool>("train.filter_model_use_hier", [](C& c) -> auto& { return c.train.filter_model_use_hier; }),
      plain<std::uint64_t>("train.seed", [](C& c) -> auto& { return c.train.seed; }),

      plain<double>("optim.learning_rate", [](C& c) -> auto& { return c.train.optimizer.learning_rate; }),
      plain<double>("optim.momentum", [](C& c) -> auto& { return c.train.optimizer.momentum; }),
      plain<double>("optim.weight_decay", [](C& c) -> auto& { return c.train.optimizer.weight_decay; }),

      plain<double>("ssl.tau", [](C& c) -> auto& { return c.train.ssl.tau; }),
      plain<double>("ssl.distill_temperature", [](C& c) -> auto& { return c.train.ssl.distill_temperature; }),
      plain<double>("ssl.nce_temperature", [](C& c) -> auto& { return c.train.ssl.nce_temperature; }),
      plain<std::size_t>("ssl.queue_size", [](C& c) -> auto& { return c.train.ssl.queue_size; }),
      plain<double>("ssl.key_momentum", [](C& c) -> auto& { return c.train.ssl.key_momentum; }),
      plain<double>("ssl.unsup_weight", [](C& c) -> auto& { return c.train.ssl.unsup_weight; }),

      plain<double>("augment.weak_noise", [](C& c) -> auto& { return c.train.augment.weak_noise; }),
      plain<double>("augment.strong_noise", [](C& c) -> auto& { return c.train.augment.strong_noise; }),
      plain<double>("augment.drop_prob", [](C& c) -> auto& { return c.train.augment.drop_prob; }),
      plain<double>("augment.scale_jitter", [](C& c) -> auto& { return c.train.augment.scale_jitter; }),

      plain<double>("filter.tau", [](C& c) -> auto& { return c.train.filter.tau; }),
      plain<std::size_t>("filter.match_level", [](C& c) -> auto& { return c.train.filter.match_level; }),

      plain<std::vector<std::size_t>>("eval.sweep_levels", [](C& c) -> auto& { return c.sweep_levels; }),
      plain<std::vector<std::size_t>>("eval.confusion_levels", [](C& c) -> auto& { return c.confusion_levels; }),
  };
  return kFields;
}
// clang-format on

inline const Field& find(std::string_view key) {
  for (const Field& f : fields()) {
    if (f.key == key) return f;
  }
  fail(ErrorKind::kConfigError, "unknown config key " + std::string(key));
}

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : config_detail::fields()) keys.push_back(f.key);
  return keys;
}

inline std::string get_value(const ExperimentConfig& config, std::string_view key) {
  return config_detail::find(key).get(config);
}

/// Sets one dotted key. Unknown keys and unparsable values are ConfigErrors.
inline void set_value(ExperimentConfig& config, std::string_view key, std::string_view value) {
  config_detail::find(key).set(config, textio::trim(value));
}

/// Applies a `key=value` override.
inline void apply_override(ExperimentConfig& config, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    fail(ErrorKind::kConfigError, "override '" + std::string(assignment) + "' is not key=value");
  }
  set_value(config, textio::trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

inline constexpr std::string_view kConfigHeader = "# hiertax-config v1";

/// Every key, one `key = value` line each, in a fixed order.
inline void write_config(std::ostream& out, const ExperimentConfig& config) {
  out << kConfigHeader << '\n';
  for (const auto& f : config_detail::fields()) out << f.key << " = " << f.get(config) << '\n';
}

inline std::string config_text(const ExperimentConfig& config) {
  std::ostringstream out;
  write_config(out, config);
  return out.str();
}

/// Reads a config file; absent keys keep their defaults.
inline ExperimentConfig read_config(std::istream& in) {
  ExperimentConfig config;
  std::string line;
  std::size_t number = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++number;
    const std::string_view text = textio::trim(line);
    if (!header) {
      if (text != kConfigHeader) {
        fail(ErrorKind::kConfigError, "line " + std::to_string(number) +
                                          ": expected header '" + std::string(kConfigHeader) + "'");
      }
      header = true;
      continue;
    }
    if (text.empty() || text.front() == '#') continue;
    const auto eq = text.find('=');
    if (eq == std::string_view::npos) {
      fail(ErrorKind::kConfigError, "line " + std::to_string(number) + ": expected key = value");
    }
    set_value(config, textio::trim(text.substr(0, eq)), text.substr(eq + 1));
  }
  if (!header) fail(ErrorKind::kConfigError, "empty config file");
  return config;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::kIoError, "cannot open config " + path);
  return read_config(in);
}

inline std::string config_hash(const ExperimentConfig& config) {
  return textio::hex64(textio::fnv1a(config_text(config)));
}

/// Hash of the data-generation keys only.
inline std::string data_hash(const ExperimentConfig& config) {
  std::string text;
  for (const auto& f : config_detail::fields()) {
    if (f.key.rfind("gen.", 0) == 0) text += f.key + "=" + f.get(config) + "\n";
  }
  return textio::hex64(textio::fnv1a(text));
}

}  // namespace hiertax

#endif  // HIERTAX_CONFIG_HPP_
