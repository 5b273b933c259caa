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

#ifndef HIERTAX_GRADCHECK_HPP_
#define HIERTAX_GRADCHECK_HPP_

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "hiertax/error.hpp"
#include "hiertax/losses.hpp"
#include "hiertax/model.hpp"
#include "hiertax/random.hpp"

namespace hiertax {

/// A scalar training objective. Returns the loss; when `grads` is non-null
/// it also accumulates the analytic gradient into it.
using Objective = std::function<double(const Model&, Gradients*)>;

/// Forward `x`, apply a logit-level loss, backpropagate into `grads`.
inline double apply_logit_loss(const Model& model, const Matrix& x,
                               const std::function<LossGrad(const Matrix&)>& loss,
                               Gradients* grads, double weight = 1.0) {
  ForwardCache cache = model.forward(x);
  LossGrad lg = loss(cache.logits);
  if (grads && weight != 0.0) {
    if (weight != 1.0) {
      for (double& g : lg.grad.flat()) g *= weight;
    }
    model.backward(cache, lg.grad, *grads);
  }
  return weight * lg.value;
}

/// Evaluates `objective` with analytic gradients.
inline std::pair<double, Gradients> evaluate(const Model& model, const Objective& objective) {
  Gradients grads = model.zero_gradients();
  const double value = objective(model, &grads);
  return {value, std::move(grads)};
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
};

/**
 * Central differences against the analytic gradient on a random subsample
 * of at least `min_coordinates` parameter coordinates (all of them when the
 * model is smaller). Relative error per coordinate is
 * |g_a - g_fd| / max(|g_a|, |g_fd|, 1e-8).
 */
inline GradCheckResult grad_check(const Model& model, const Objective& objective, double epsilon,
                                  std::uint64_t seed = 0, std::size_t min_coordinates = 200) {
  if (!(epsilon >= 1e-6 && epsilon <= 1e-3)) {
    fail(ErrorKind::kConfigError, "grad_check epsilon must lie in [1e-6, 1e-3]");
  }
  const auto [value, analytic] = evaluate(model, objective);
  (void)value;

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t k = 0; k < model.params().size(); ++k) {
    for (std::size_t i = 0; i < model.params()[k].value.size(); ++i) coords.emplace_back(k, i);
  }
  Rng rng(seed);
  rng.shuffle(coords);
  if (coords.size() > min_coordinates) coords.resize(min_coordinates);

  GradCheckResult result;
  Model probe = model;
  for (const auto& [k, i] : coords) {
    double& theta = probe.params()[k].value.flat()[i];
    const double saved = theta;
    theta = saved + epsilon;
    const double plus = objective(probe, nullptr);
    theta = saved - epsilon;
    const double minus = objective(probe, nullptr);
    theta = saved;
    const double numeric = (plus - minus) / (2.0 * epsilon);
    const double exact = analytic[k].flat()[i];
    const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
    result.max_rel_error = std::max(result.max_rel_error, std::abs(exact - numeric) / denom);
    ++result.coordinates;
  }
  return result;
}

}  // namespace hiertax

#endif  // HIERTAX_GRADCHECK_HPP_
