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

#ifndef HIERTAX_MODEL_HPP_
#define HIERTAX_MODEL_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hiertax/error.hpp"
#include "hiertax/linalg.hpp"
#include "hiertax/random.hpp"
#include "hiertax/textio.hpp"

namespace hiertax {

enum class Architecture { kLinear, kMlp1 };

inline std::string_view to_string(Architecture arch) {
  return arch == Architecture::kLinear ? "linear" : "mlp1";
}

inline std::optional<Architecture> parse_architecture(std::string_view text) {
  if (text == "linear") return Architecture::kLinear;
  if (text == "mlp1") return Architecture::kMlp1;
  return std::nullopt;
}

struct Param {
  std::string name;
  Matrix value;  // biases are (n x 1)
  bool is_bias = false;

  friend bool operator==(const Param&, const Param&) = default;
};

/// Gradient buffers, parallel to Model::params().
using Gradients = std::vector<Matrix>;

struct ModelShape {
  Architecture architecture = Architecture::kLinear;
  std::size_t input_dim = 0;
  std::size_t hidden = 64;      // mlp1 only
  std::size_t classes = 0;
  std::size_t embed_dim = 0;    // 0: no projection head

  friend bool operator==(const ModelShape&, const ModelShape&) = default;
};

/// Activations kept for the backward pass of a batch.
struct ForwardCache {
  Matrix input;
  Matrix hidden_pre;  // mlp1 only
  Matrix hidden;      // mlp1 only
  Matrix logits;
};

struct EmbedCache {
  Matrix input;
  Matrix hidden_pre;
  Matrix hidden;
  Matrix projected;   // before normalization
  Matrix embedding;   // unit rows
  std::vector<double> norms;
};

/**
 * Leaf-level classifier f(x) -> p^L. `linear`: logits = W x + b. `mlp1`:
 * logits = W2 max(0, W1 x + b1) + b2. The representation fed to the
 * classifier and to the optional projection head is x for `linear` and the
 * hidden activation for `mlp1`.
 */
class Model {
 public:
  Model() = default;

  Model(const ModelShape& shape, std::uint64_t seed) : shape_(shape), seed_(seed) {
    if (shape.input_dim == 0 || shape.classes == 0) {
      fail(ErrorKind::kConfigError, "model needs input_dim >= 1 and classes >= 1");
    }
    if (shape.architecture == Architecture::kMlp1 && shape.hidden == 0) {
      fail(ErrorKind::kConfigError, "mlp1 needs hidden >= 1");
    }
    Rng rng(seed);
    const std::size_t rep = representation_dim();
    if (shape.architecture == Architecture::kMlp1) {
      hidden_w_ = add("hidden.weight", shape.hidden, shape.input_dim, false);
      hidden_b_ = add("hidden.bias", shape.hidden, 1, true);
    }
    classifier_w_ = add("classifier.weight", shape.classes, rep, false);
    classifier_b_ = add("classifier.bias", shape.classes, 1, true);
    if (shape.embed_dim > 0) {
      projection_w_ = add("projection.weight", shape.embed_dim, rep, false);
      projection_b_ = add("projection.bias", shape.embed_dim, 1, true);
    }
    initialize(rng);
  }

  const ModelShape& shape() const noexcept { return shape_; }
  Architecture architecture() const noexcept { return shape_.architecture; }
  std::size_t input_dim() const noexcept { return shape_.input_dim; }
  std::size_t num_classes() const noexcept { return shape_.classes; }
  bool has_projection() const noexcept { return projection_w_ != kNone; }

  std::size_t representation_dim() const noexcept {
    return shape_.architecture == Architecture::kMlp1 ? shape_.hidden : shape_.input_dim;
  }

  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<Param>& params() const noexcept { return params_; }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t step() const noexcept { return step_; }
  void set_step(std::uint64_t step) noexcept { step_ = step; }

  Gradients zero_gradients() const {
    Gradients g;
    for (const auto& p : params_) g.emplace_back(p.value.rows(), p.value.cols());
    return g;
  }

  /// Re-draws the classifier (fresh head for fine-tuning).
  void reset_classifier(std::uint64_t seed) {
    Rng rng(seed);
    init_weight(params_[classifier_w_].value, rng);
    params_[classifier_b_].value.fill(0.0);
  }

  /// Removes the projection head; the classifier and encoder are kept.
  void drop_projection() {
    if (!has_projection()) return;
    params_.erase(params_.begin() + static_cast<std::ptrdiff_t>(projection_w_),
                  params_.begin() + static_cast<std::ptrdiff_t>(projection_b_) + 1);
    projection_w_ = projection_b_ = kNone;
    shape_.embed_dim = 0;
  }

  /// Parameters of the representation encoder only (empty for `linear`).
  std::vector<std::size_t> encoder_param_indices() const {
    if (hidden_w_ == kNone) return {};
    return {hidden_w_, hidden_b_};
  }

  // -- inference ----------------------------------------------------------

  std::vector<double> logits(std::span<const double> x) const {
    check_dims(x.size(), input_dim(), "model input");
    std::vector<double> rep = representation(x);
    const Matrix& w = params_[classifier_w_].value;
    const Matrix& b = params_[classifier_b_].value;
    std::vector<double> out(num_classes());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = dot(w.row(c), rep) + b(c, 0);
    return out;
  }

  std::vector<double> probabilities(std::span<const double> x) const { return softmax(logits(x)); }

  ForwardCache forward(const Matrix& x) const {
    check_dims(x.cols(), input_dim(), "model input");
    ForwardCache cache;
    cache.input = x;
    const Matrix* rep = &cache.input;
    if (shape_.architecture == Architecture::kMlp1) {
      cache.hidden_pre = affine(x, params_[hidden_w_].value, params_[hidden_b_].value);
      cache.hidden = cache.hidden_pre;
      for (double& v : cache.hidden.flat()) v = v > 0.0 ? v : 0.0;
      rep = &cache.hidden;
    }
    cache.logits = affine(*rep, params_[classifier_w_].value, params_[classifier_b_].value);
    return cache;
  }

  /// Accumulates d(loss)/d(params) given d(loss)/d(logits).
  void backward(const ForwardCache& cache, const Matrix& dlogits, Gradients& grads) const {
    check_dims(dlogits.rows(), cache.logits.rows(), "dlogits rows");
    check_dims(dlogits.cols(), num_classes(), "dlogits cols");
    const bool mlp = shape_.architecture == Architecture::kMlp1;
    const Matrix& rep = mlp ? cache.hidden : cache.input;
    accumulate_affine(rep, dlogits, grads[classifier_w_], grads[classifier_b_]);
    if (mlp) {
      Matrix drep = back_through(dlogits, params_[classifier_w_].value);
      backprop_hidden(cache.input, cache.hidden_pre, drep, grads);
    }
  }

  /// Unit-normalized projection embeddings (contrastive pretraining).
  EmbedCache embed(const Matrix& x) const {
    if (!has_projection()) fail(ErrorKind::kConfigError, "model has no projection head");
    check_dims(x.cols(), input_dim(), "model input");
    EmbedCache cache;
    cache.input = x;
    const Matrix* rep = &cache.input;
    if (shape_.architecture == Architecture::kMlp1) {
      cache.hidden_pre = affine(x, params_[hidden_w_].value, params_[hidden_b_].value);
      cache.hidden = cache.hidden_pre;
      for (double& v : cache.hidden.flat()) v = v > 0.0 ? v : 0.0;
      rep = &cache.hidden;
    }
    cache.projected = affine(*rep, params_[projection_w_].value, params_[projection_b_].value);
    cache.embedding = cache.projected;
    cache.norms.resize(x.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto row = cache.embedding.row(r);
      double norm = std::sqrt(dot(row, row));
      if (norm < 1e-12) norm = 1e-12;
      cache.norms[r] = norm;
      for (double& v : row) v /= norm;
    }
    return cache;
  }

  void backward_embed(const EmbedCache& cache, const Matrix& dembedding, Gradients& grads) const {
    check_dims(dembedding.rows(), cache.embedding.rows(), "dembedding rows");
    // e = z / |z|  =>  dz = (de - e (e . de)) / |z|
    Matrix dprojected(dembedding.rows(), dembedding.cols());
    for (std::size_t r = 0; r < dembedding.rows(); ++r) {
      auto e = cache.embedding.row(r);
      auto de = dembedding.row(r);
      const double along = dot(e, de);
      for (std::size_t i = 0; i < e.size(); ++i) {
        dprojected(r, i) = (de[i] - e[i] * along) / cache.norms[r];
      }
    }
    const bool mlp = shape_.architecture == Architecture::kMlp1;
    const Matrix& rep = mlp ? cache.hidden : cache.input;
    accumulate_affine(rep, dprojected, grads[projection_w_], grads[projection_b_]);
    if (mlp) {
      Matrix drep = back_through(dprojected, params_[projection_w_].value);
      backprop_hidden(cache.input, cache.hidden_pre, drep, grads);
    }
  }

  friend bool operator==(const Model& a, const Model& b) {
    return a.shape_ == b.shape_ && a.params_ == b.params_;
  }

 private:
  static constexpr std::size_t kNone = static_cast<std::size_t>(-1);

  std::size_t add(std::string name, std::size_t rows, std::size_t cols, bool bias) {
    params_.push_back({std::move(name), Matrix(rows, cols), bias});
    return params_.size() - 1;
  }

  static void init_weight(Matrix& w, Rng& rng) {
    const double scale = 1.0 / std::sqrt(static_cast<double>(w.cols()));
    for (double& v : w.flat()) v = scale * rng.normal();
  }

  void initialize(Rng& rng) {
    for (auto& p : params_) {
      if (!p.is_bias) init_weight(p.value, rng);
    }
  }

  std::vector<double> representation(std::span<const double> x) const {
    if (shape_.architecture == Architecture::kLinear) return {x.begin(), x.end()};
    const Matrix& w = params_[hidden_w_].value;
    const Matrix& b = params_[hidden_b_].value;
    std::vector<double> h(w.rows());
    for (std::size_t j = 0; j < h.size(); ++j) {
      const double a = dot(w.row(j), x) + b(j, 0);
      h[j] = a > 0.0 ? a : 0.0;
    }
    return h;
  }

  /// rows of x times w^T plus b.
  static Matrix affine(const Matrix& x, const Matrix& w, const Matrix& b) {
    Matrix out(x.rows(), w.rows());
    for (std::size_t r = 0; r < x.rows(); ++r) {
      auto xr = x.row(r);
      for (std::size_t c = 0; c < w.rows(); ++c) out(r, c) = dot(w.row(c), xr) + b(c, 0);
    }
    return out;
  }

  static void accumulate_affine(const Matrix& input, const Matrix& dout, Matrix& dw, Matrix& db) {
    for (std::size_t r = 0; r < input.rows(); ++r) {
      auto xr = input.row(r);
      for (std::size_t c = 0; c < dout.cols(); ++c) {
        const double g = dout(r, c);
        if (g == 0.0) continue;
        auto wr = dw.row(c);
        for (std::size_t i = 0; i < xr.size(); ++i) wr[i] += g * xr[i];
        db(c, 0) += g;
      }
    }
  }

  /// d(input) = dout · w.
  static Matrix back_through(const Matrix& dout, const Matrix& w) {
    Matrix din(dout.rows(), w.cols());
    for (std::size_t r = 0; r < dout.rows(); ++r) {
      auto dr = din.row(r);
      for (std::size_t c = 0; c < w.rows(); ++c) {
        const double g = dout(r, c);
        if (g == 0.0) continue;
        auto wr = w.row(c);
        for (std::size_t i = 0; i < dr.size(); ++i) dr[i] += g * wr[i];
      }
    }
    return din;
  }

  void backprop_hidden(const Matrix& input, const Matrix& hidden_pre, Matrix& dhidden,
                       Gradients& grads) const {
    for (std::size_t i = 0; i < dhidden.size(); ++i) {
      if (hidden_pre.flat()[i] <= 0.0) dhidden.flat()[i] = 0.0;
    }
    accumulate_affine(input, dhidden, grads[hidden_w_], grads[hidden_b_]);
  }

  ModelShape shape_;
  std::vector<Param> params_;
  std::size_t hidden_w_ = kNone, hidden_b_ = kNone;
  std::size_t classifier_w_ = kNone, classifier_b_ = kNone;
  std::size_t projection_w_ = kNone, projection_b_ = kNone;
  std::uint64_t seed_ = 0;
  std::uint64_t step_ = 0;

  friend Model read_checkpoint(std::istream& in);
};

/// Stacks sample feature vectors into a batch matrix.
template <typename Range, typename Proj>
Matrix stack_rows(const Range& items, std::size_t dim, Proj proj) {
  Matrix out(std::size(items), dim);
  std::size_t r = 0;
  for (const auto& item : items) {
    const auto& features = proj(item);
    check_dims(features.size(), dim, "feature vector");
    std::copy(features.begin(), features.end(), out.row(r++).begin());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

/// SGD with heavy-ball momentum; one velocity buffer per parameter.
class Optimizer {
 public:
  Optimizer(const Model& model, const OptimizerConfig& config)
      : config_(config), velocity_(model.zero_gradients()) {}

  const OptimizerConfig& config() const noexcept { return config_; }
  void set_learning_rate(double lr) noexcept { config_.learning_rate = lr; }
  const Gradients& velocity() const noexcept { return velocity_; }

  /// v <- momentum v + g + wd θ (weights only); θ <- θ - lr v.
  void step(Model& model, const Gradients& grads) {
    auto& params = model.params();
    check_dims(grads.size(), params.size(), "gradient count");
    check_dims(velocity_.size(), params.size(), "velocity count");
    for (std::size_t k = 0; k < params.size(); ++k) {
      if (!all_finite(grads[k].flat())) {
        fail(ErrorKind::kNonFiniteGradient,
             "non-finite gradient in '" + params[k].name + "' at step " +
                 std::to_string(model.step()));
      }
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto theta = params[k].value.flat();
      auto v = velocity_[k].flat();
      auto g = grads[k].flat();
      const double wd = params[k].is_bias ? 0.0 : config_.weight_decay;
      for (std::size_t i = 0; i < theta.size(); ++i) {
        v[i] = config_.momentum * v[i] + g[i] + wd * theta[i];
        theta[i] -= config_.learning_rate * v[i];
      }
    }
    model.set_step(model.step() + 1);
  }

 private:
  OptimizerConfig config_;
  Gradients velocity_;
};

inline void sgd_step(Model& model, Optimizer& optimizer, const Gradients& grads) {
  optimizer.step(model, grads);
}

/// θ_k <- m θ_k + (1 - m) θ_q for every parameter.
inline void momentum_encoder_update(Model& key_model, const Model& query_model, double momentum) {
  if (!(key_model.shape() == query_model.shape())) {
    fail(ErrorKind::kArchitectureMismatch, "key and query models differ in shape");
  }
  if (!(momentum >= 0.0 && momentum <= 1.0)) {
    fail(ErrorKind::kConfigError, "encoder momentum must lie in [0, 1]");
  }
  auto& keys = key_model.params();
  const auto& queries = query_model.params();
  for (std::size_t k = 0; k < keys.size(); ++k) {
    auto tk = keys[k].value.flat();
    auto tq = queries[k].value.flat();
    for (std::size_t i = 0; i < tk.size(); ++i) tk[i] = momentum * tk[i] + (1.0 - momentum) * tq[i];
  }
}

// ---------------------------------------------------------------------------
// Checkpoints: a versioned text dump; floats in shortest round-trip form.

/// `stamp`, when set, is written as a comment line (e.g. a config hash).
inline void write_checkpoint(std::ostream& out, const Model& model, std::string_view stamp = {}) {
  const auto& s = model.shape();
  out << "# hiertax-checkpoint v1\n";
  if (!stamp.empty()) out << "# " << stamp << '\n';
  out << "architecture " << to_string(s.architecture) << '\n';
  out << "input_dim " << s.input_dim << '\n';
  out << "hidden " << s.hidden << '\n';
  out << "classes " << s.classes << '\n';
  out << "embed_dim " << s.embed_dim << '\n';
  out << "seed " << model.seed() << '\n';
  out << "step " << model.step() << '\n';
  for (const auto& p : model.params()) {
    out << "param " << p.name << ' ' << p.value.rows() << ' ' << p.value.cols() << '\n';
    bool first = true;
    for (double v : p.value.flat()) {
      out << (first ? "" : " ") << textio::format_double(v);
      first = false;
    }
    out << '\n';
  }
}

inline Model read_checkpoint(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() -> std::string {
    do {
      if (!std::getline(in, line)) throw ParseError(line_no + 1, "unexpected end of checkpoint");
      ++line_no;
    } while (line_no > 1 && line.starts_with('#'));
    return line;
  };
  if (next() != "# hiertax-checkpoint v1") throw ParseError(line_no, "not a checkpoint");
  auto field = [&](std::string_view key) -> std::string {
    next();
    auto fields = textio::split_ws(line);
    if (fields.size() != 2 || fields[0] != key) {
      throw ParseError(line_no, "expected '" + std::string(key) + "'");
    }
    return std::string(fields[1]);
  };
  auto number = [&](std::string_view key) {
    std::uint64_t v = 0;
    if (!textio::parse_int(field(key), v)) throw ParseError(line_no, "bad integer");
    return v;
  };
  ModelShape shape;
  auto arch = parse_architecture(field("architecture"));
  if (!arch) throw ParseError(line_no, "unknown architecture");
  shape.architecture = *arch;
  shape.input_dim = number("input_dim");
  shape.hidden = number("hidden");
  shape.classes = number("classes");
  shape.embed_dim = number("embed_dim");
  const std::uint64_t seed = number("seed");
  const std::uint64_t step = number("step");
  Model model(shape, seed);
  model.set_step(step);
  for (auto& p : model.params()) {
    next();
    auto header = textio::split_ws(line);
    std::size_t rows = 0, cols = 0;
    if (header.size() != 4 || header[0] != "param" || header[1] != p.name ||
        !textio::parse_int(header[2], rows) || !textio::parse_int(header[3], cols) ||
        rows != p.value.rows() || cols != p.value.cols()) {
      throw ParseError(line_no, "expected parameter block '" + p.name + "'");
    }
    next();
    auto values = textio::split_ws(line);
    if (values.size() != p.value.size()) throw ParseError(line_no, "wrong value count");
    for (std::size_t i = 0; i < values.size(); ++i) {
      if (!textio::parse_double(values[i], p.value.flat()[i])) {
        throw ParseError(line_no, "bad value");
      }
    }
  }
  return model;
}

inline void save_checkpoint(const std::string& path, const Model& model,
                            std::string_view stamp = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIoError, "cannot write " + path);
  write_checkpoint(out, model, stamp);
}

inline Model load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIoError, "cannot read " + path);
  return read_checkpoint(in);
}

}  // namespace hiertax

#endif  // HIERTAX_MODEL_HPP_
