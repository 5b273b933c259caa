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

#include <cmath>
#include <sstream>

#include "test_util.hpp"

namespace hiertax {
namespace {

using testing::random_matrix;

ModelShape shape_of(Architecture arch, std::size_t embed = 0) {
  ModelShape s;
  s.architecture = arch;
  s.input_dim = 4;
  s.hidden = 6;
  s.classes = 5;
  s.embed_dim = embed;
  return s;
}

const Matrix& param(const Model& m, std::string_view name) {
  for (const auto& p : m.params()) {
    if (p.name == name) return p.value;
  }
  throw std::runtime_error("missing param");
}

TEST(Model, LinearLogitsAreAffine) {
  const Model m(shape_of(Architecture::kLinear), 3);
  const Matrix& w = param(m, "classifier.weight");
  const Matrix& b = param(m, "classifier.bias");
  const std::vector<double> x = {0.5, -1.0, 2.0, 0.25};
  const auto z = m.logits(x);
  for (std::size_t c = 0; c < 5; ++c) {
    double expected = b(c, 0);
    for (std::size_t i = 0; i < 4; ++i) expected += w(c, i) * x[i];
    EXPECT_NEAR(z[c], expected, 1e-14);
  }
}

TEST(Model, MlpLogitsUseRectifiedHiddenLayer) {
  Model m(shape_of(Architecture::kMlp1), 4);
  const Matrix& w1 = param(m, "hidden.weight");
  const Matrix& w2 = param(m, "classifier.weight");
  const std::vector<double> x = {1.0, 0.5, -0.5, -1.0};
  std::vector<double> h(6);
  for (std::size_t j = 0; j < 6; ++j) {
    double a = 0.0;
    for (std::size_t i = 0; i < 4; ++i) a += w1(j, i) * x[i];
    h[j] = std::max(0.0, a);
  }
  const auto z = m.logits(x);
  for (std::size_t c = 0; c < 5; ++c) {
    double expected = 0.0;
    for (std::size_t j = 0; j < 6; ++j) expected += w2(c, j) * h[j];
    EXPECT_NEAR(z[c], expected, 1e-14);
  }
}

TEST(Model, BatchForwardMatchesSingleSample) {
  Rng rng(1);
  const Model m(shape_of(Architecture::kMlp1), 5);
  const Matrix x = random_matrix(rng, 3, 4);
  const Matrix z = m.forward(x).logits;
  for (std::size_t r = 0; r < 3; ++r) {
    const auto single = m.logits(x.row(r));
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(z(r, c), single[c], 1e-14);
  }
}

TEST(Model, EmbeddingsAreUnitNorm) {
  Rng rng(2);
  const Model m(shape_of(Architecture::kMlp1, 3), 6);
  const Matrix e = m.embed(random_matrix(rng, 8, 4)).embedding;
  for (std::size_t r = 0; r < e.rows(); ++r) EXPECT_NEAR(dot(e.row(r), e.row(r)), 1.0, 1e-12);
}

TEST(Model, DimensionMismatchIsReported) {
  const Model m(shape_of(Architecture::kLinear), 1);
  try {
    m.forward(Matrix(2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimensionMismatch);
  }
}

TEST(Model, SameSeedSameWeights) {
  EXPECT_TRUE(Model(shape_of(Architecture::kMlp1, 2), 9) ==
              Model(shape_of(Architecture::kMlp1, 2), 9));
  EXPECT_FALSE(Model(shape_of(Architecture::kMlp1), 9) == Model(shape_of(Architecture::kMlp1), 10));
}

TEST(Model, DropProjectionAndResetClassifierKeepEncoder) {
  Model m(shape_of(Architecture::kMlp1, 3), 7);
  const Matrix hidden = param(m, "hidden.weight");
  const Matrix classifier = param(m, "classifier.weight");
  m.drop_projection();
  m.reset_classifier(99);
  EXPECT_FALSE(m.has_projection());
  EXPECT_TRUE(param(m, "hidden.weight") == hidden);
  EXPECT_FALSE(param(m, "classifier.weight") == classifier);
  for (double v : param(m, "classifier.bias").flat()) EXPECT_EQ(v, 0.0);
}

TEST(Optimizer, MomentumAccumulatesRepeatedGradient) {
  Model m(shape_of(Architecture::kLinear), 1);
  const Model start = m;
  OptimizerConfig config;
  config.learning_rate = 0.1;
  config.momentum = 0.9;
  config.weight_decay = 0.0;
  Optimizer opt(m, config);
  Gradients g = m.zero_gradients();
  for (auto& gk : g) {
    for (double& v : gk.flat()) v = 0.5;
  }
  opt.step(m, g);
  const Model after_one = m;
  opt.step(m, g);
  for (std::size_t k = 0; k < m.params().size(); ++k) {
    for (std::size_t i = 0; i < m.params()[k].value.size(); ++i) {
      const double t0 = start.params()[k].value.flat()[i];
      const double t1 = after_one.params()[k].value.flat()[i];
      const double t2 = m.params()[k].value.flat()[i];
      EXPECT_NEAR(t1, t0 - 0.1 * 0.5, 1e-15);
      EXPECT_NEAR(t2, t1 - 1.9 * 0.1 * 0.5, 1e-15);
    }
  }
  EXPECT_EQ(m.step(), 2u);
}

TEST(Optimizer, WeightDecaySkipsBiases) {
  Model m(shape_of(Architecture::kLinear), 1);
  for (auto& p : m.params()) {
    for (double& v : p.value.flat()) v = 2.0;
  }
  OptimizerConfig config;
  config.learning_rate = 0.1;
  config.momentum = 0.0;
  config.weight_decay = 0.01;
  Optimizer opt(m, config);
  opt.step(m, m.zero_gradients());
  for (const auto& p : m.params()) {
    const double expected = p.is_bias ? 2.0 : 2.0 - 0.1 * 0.01 * 2.0;
    for (double v : p.value.flat()) EXPECT_NEAR(v, expected, 1e-15);
  }
}

TEST(Optimizer, NonFiniteGradientIsRejected) {
  Model m(shape_of(Architecture::kLinear), 1);
  Optimizer opt(m, OptimizerConfig{});
  Gradients g = m.zero_gradients();
  g[0].flat()[0] = std::nan("");
  try {
    opt.step(m, g);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFiniteGradient);
  }
}

TEST(MomentumEncoder, ConvexCombinationOfParameters) {
  Model key(shape_of(Architecture::kMlp1, 2), 1);
  const Model query(shape_of(Architecture::kMlp1, 2), 2);
  const Model before = key;
  momentum_encoder_update(key, query, 0.75);
  for (std::size_t k = 0; k < key.params().size(); ++k) {
    for (std::size_t i = 0; i < key.params()[k].value.size(); ++i) {
      const double expected = 0.75 * before.params()[k].value.flat()[i] +
                              0.25 * query.params()[k].value.flat()[i];
      EXPECT_NEAR(key.params()[k].value.flat()[i], expected, 1e-15);
    }
  }
  Model frozen = before;
  momentum_encoder_update(frozen, query, 1.0);
  EXPECT_TRUE(frozen == before);
  momentum_encoder_update(frozen, query, 0.0);
  EXPECT_TRUE(frozen == query);
}

TEST(MomentumEncoder, ShapeMismatchIsRejected) {
  Model key(shape_of(Architecture::kMlp1, 2), 1);
  const Model query(shape_of(Architecture::kLinear, 2), 2);
  try {
    momentum_encoder_update(key, query, 0.9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kArchitectureMismatch);
  }
}

TEST(Checkpoint, RoundTripIsLossless) {
  Model m(shape_of(Architecture::kMlp1, 3), 12);
  m.set_step(41);
  std::stringstream buffer;
  write_checkpoint(buffer, m);
  const std::string text = buffer.str();
  const Model back = read_checkpoint(buffer);
  EXPECT_TRUE(back == m);
  EXPECT_EQ(back.step(), 41u);
  std::stringstream again;
  write_checkpoint(again, back);
  EXPECT_EQ(again.str(), text);
}

TEST(Checkpoint, StampLineIsSkippedOnRead) {
  const Model m(shape_of(Architecture::kLinear, 0), 3);
  std::stringstream plain, stamped;
  write_checkpoint(plain, m);
  write_checkpoint(stamped, m, "config_hash 0123abcd");
  EXPECT_NE(stamped.str().find("# config_hash 0123abcd\n"), std::string::npos);
  EXPECT_TRUE(read_checkpoint(stamped) == read_checkpoint(plain));
}

TEST(Checkpoint, CorruptHeaderIsAParseError) {
  std::stringstream buffer("# something else\n");
  EXPECT_THROW(read_checkpoint(buffer), ParseError);
}

}  // namespace
}  // namespace hiertax
