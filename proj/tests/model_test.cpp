// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
//
// Layer-graph tests: forward against hand-written oracles, backward against
// central finite differences, config parsing, and update arithmetic.

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "laminar/dataset.hpp"
#include "laminar/error.hpp"
#include "laminar/model.hpp"
#include "laminar/model_config.hpp"
#include "support/test_util.hpp"

using namespace laminar;
using namespace laminar::testing;

namespace {

Tensor identity_matrix(std::int64_t n) {
  Tensor t({n, n});
  for (std::int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

void zero_params(ModelGraph& m) {
  for (int id : m.param_layer_ids()) {
    auto& n = m.node(id);
    for (auto& v : n.W.storage()) v = 0.0;
    for (auto& v : n.b.storage()) v = 0.0;
  }
}

// Straight-line softmax cross-entropy, written independently of the library.
double oracle_softmax_loss(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  const std::int64_t rows = logits.dim(0), cols = logits.dim(1);
  double total = 0.0;
  for (std::int64_t i = 0; i < rows; ++i) {
    double mx = logits.at(i, 0);
    for (std::int64_t j = 1; j < cols; ++j) mx = std::max(mx, logits.at(i, j));
    double denom = 0.0;
    for (std::int64_t j = 0; j < cols; ++j) denom += std::exp(logits.at(i, j) - mx);
    const double z = logits.at(i, labels[static_cast<std::size_t>(i)]) - mx;
    total += std::log(denom) - z;
  }
  return total / static_cast<double>(rows);
}

double model_loss(ModelGraph& m, const std::vector<double>& flat, const Tensor& batch,
                  const std::vector<std::int64_t>& labels) {
  set_params_from_flat(m, flat);
  return forward_seq(m, batch, labels).loss;
}

}  // namespace

TEST(ModelForwardTest, IdentityDenseChainPassesInputThrough) {
  // Two square dense layers with identity weights and zero biases compose
  // to the identity, so the logits equal the raw input bitwise.
  ModelGraph m = make_mlp(3, {3}, 3, /*relu_between=*/false, 1);
  for (int id : m.param_layer_ids()) {
    m.node(id).W = identity_matrix(3);
    for (auto& v : m.node(id).b.storage()) v = 0.0;
  }
  Rng rng(7);
  Tensor batch = random_tensor(rng, {4, 3}, 0.5, 2.0);
  auto fwd = forward_seq(m, batch, {0, 1, 2, 0});
  const Tensor& logits = fwd.activations[static_cast<std::size_t>(m.output_id)];
  ASSERT_TRUE(logits.same_shape(batch));
  for (std::int64_t i = 0; i < batch.size(); ++i) EXPECT_EQ(logits.at(i), batch.at(i));
}

TEST(ModelForwardTest, ZeroWeightsGiveUniformSoftmaxLoss) {
  for (std::int64_t classes : {2, 3, 7}) {
    ModelGraph m = make_mlp(4, {5}, classes, true, 2);
    zero_params(m);
    Rng rng(9);
    auto [batch, labels] = random_batch(rng, m, 6);
    auto fwd = forward_seq(m, batch, labels);
    EXPECT_NEAR(fwd.loss, std::log(static_cast<double>(classes)), 1e-12);
  }
}

TEST(ModelForwardTest, ThreeLayerMlpMatchesStraightLineOracle) {
  // Independently coded forward: naive matmuls, explicit bias/relu loops.
  ModelGraph m = make_mlp(4, {16, 8}, 3, true, 33);
  Rng rng(17);
  auto [batch, labels] = random_batch(rng, m, 4);

  const auto& d1 = m.node(1);
  const auto& d2 = m.node(3);
  const auto& d3 = m.node(5);
  auto affine = [](const Tensor& x, const Tensor& w, const Tensor& b) {
    Tensor y = naive_matmul(x, w);
    for (std::int64_t i = 0; i < y.dim(0); ++i) {
      for (std::int64_t j = 0; j < y.dim(1); ++j) y.at(i, j) += b.at(j);
    }
    return y;
  };
  auto relu_loop = [](Tensor x) {
    for (std::int64_t i = 0; i < x.size(); ++i) x.at(i) = x.at(i) > 0.0 ? x.at(i) : 0.0;
    return x;
  };
  Tensor h1 = relu_loop(affine(batch, d1.W, d1.b));
  Tensor h2 = relu_loop(affine(h1, d2.W, d2.b));
  Tensor logits = affine(h2, d3.W, d3.b);
  const double want = oracle_softmax_loss(logits, labels);

  auto fwd = forward_seq(m, batch, labels);
  EXPECT_LE(std::abs(fwd.loss - want) / std::max(1.0, std::abs(want)), 1e-12);
}

TEST(ModelBackwardTest, SaturatedSoftmaxGivesZeroGradients) {
  // A huge bias on the labeled class saturates softmax to probability one,
  // so the upstream error underflows to exactly zero everywhere.
  ModelGraph m = make_mlp(3, {4}, 3, false, 5);
  zero_params(m);
  m.node(2).b.at(0) = 1000.0;  // output dense bias, class 0
  Rng rng(2);
  Tensor batch = random_tensor(rng, {4, 3});
  auto fwd = forward_seq(m, batch, {0, 0, 0, 0});
  EXPECT_EQ(fwd.loss, 0.0);
  auto grads = backward_seq(m, fwd);
  for (double g : flatten_grads(m, grads)) EXPECT_EQ(g, 0.0);
}

TEST(ModelBackwardTest, ScalarChainMatchesFiniteDifferences) {
  // 1-d input through two dense layers: the textbook two-weight chain where
  // the hidden layer's incoming gradient is (upstream error) x (input).
  ModelGraph m = make_mlp(1, {1}, 2, false, 3);
  m.node(1).W.at(0, 0) = 2.0;
  m.node(1).b.at(0) = 0.0;
  m.node(2).W.at(0, 0) = 3.0;
  m.node(2).W.at(0, 1) = -1.0;
  m.node(2).b.at(0) = 0.0;
  m.node(2).b.at(1) = 0.0;
  Tensor batch({1, 1}, {1.0});
  std::vector<std::int64_t> labels = {0};

  auto fwd = forward_seq(m, batch, labels);
  auto grads = flatten_grads(m, backward_seq(m, fwd));
  auto fd = fd_gradient(
      [&](const std::vector<double>& flat) { return model_loss(m, flat, batch, labels); },
      flatten_params(m), 1e-5);
  EXPECT_LE(max_abs_rel_err(grads, fd), 1e-5);
}

TEST(ModelBackwardTest, RandomModelsMatchFiniteDifferences) {
  // Property over random DAGs (skips included): analytic gradients vs
  // central differences on every weight and bias.
  Rng rng(404);
  for (int trial = 0; trial < 10; ++trial) {
    ModelGraph m = random_model(rng, 6 + rng.below_int(3), 4 + rng.below_int(4),
                                2 + rng.below_int(3), 2, 3);
    auto [batch, labels] = random_batch(rng, m, 3);
    auto fwd = forward_seq(m, batch, labels);
    auto grads = flatten_grads(m, backward_seq(m, fwd));
    auto fd = fd_gradient(
        [&](const std::vector<double>& flat) { return model_loss(m, flat, batch, labels); },
        flatten_params(m), 1e-5);
    EXPECT_LE(max_abs_rel_err(grads, fd), 1e-5) << "trial " << trial;
  }
}

TEST(ModelBackwardTest, ZeroedBranchLeavesChainGradientsUnchanged) {
  // add(x, zero-path) forwards x bitwise, and the gradients of the shared
  // layers equal the plain chain's gradients exactly.
  const std::uint64_t seed = 11;
  ModelGraph plain = make_mlp(4, {6}, 3, false, seed);

  ModelGraph skip;
  auto push = [&skip](LayerKind kind, std::vector<int> inputs, std::int64_t units) {
    LayerNode n;
    n.id = skip.layer_count();
    n.kind = kind;
    n.inputs = std::move(inputs);
    n.units = units;
    skip.layers.push_back(std::move(n));
    return skip.layer_count() - 1;
  };
  push(LayerKind::Input, {}, 0);
  skip.layers[0].out_shape = {4};
  int main_path = push(LayerKind::Dense, {0}, 6);   // mirrors plain's layer 1
  int zero_path = push(LayerKind::Dense, {0}, 6);   // contributes exactly zero
  int joined = push(LayerKind::Add, {main_path, zero_path}, 0);
  int out = push(LayerKind::Dense, {joined}, 3);    // mirrors plain's layer 2
  push(LayerKind::SoftmaxXent, {out}, 0);
  skip.validate();
  skip.infer_shapes();
  skip.init_params(seed);
  skip.node(main_path).W = plain.node(1).W;
  skip.node(main_path).b = plain.node(1).b;
  skip.node(out).W = plain.node(2).W;
  skip.node(out).b = plain.node(2).b;
  for (auto& v : skip.node(zero_path).W.storage()) v = 0.0;
  for (auto& v : skip.node(zero_path).b.storage()) v = 0.0;

  Rng rng(8);
  auto [batch, labels] = random_batch(rng, plain, 5);
  auto fwd_plain = forward_seq(plain, batch, labels);
  auto fwd_skip = forward_seq(skip, batch, labels);
  EXPECT_EQ(fwd_plain.loss, fwd_skip.loss);

  auto g_plain = backward_seq(plain, fwd_plain);
  auto g_skip = backward_seq(skip, fwd_skip);
  for (std::int64_t i = 0; i < g_plain.at(1).dW.size(); ++i) {
    EXPECT_EQ(g_plain.at(1).dW.at(i), g_skip.at(main_path).dW.at(i));
  }
  for (std::int64_t i = 0; i < g_plain.at(2).dW.size(); ++i) {
    EXPECT_EQ(g_plain.at(2).dW.at(i), g_skip.at(out).dW.at(i));
  }
}

TEST(ModelTrainingTest, SgdStepsDecreaseLossOnSeparableData) {
  Dataset data = make_blobs(96, 3, 2, 55);
  ModelGraph m = make_mlp(2, {16}, 3, true, 19);
  const Tensor batch = data.features;
  int decreases = 0;
  const int steps = 50;
  double prev = forward_seq(m, batch, data.labels).loss;
  const double first = prev;
  double last = prev;
  for (int s = 0; s < steps; ++s) {
    auto fwd = forward_seq(m, batch, data.labels);
    auto grads = backward_seq(m, fwd);
    sgd_apply(m, grads, 0.1);
    last = forward_seq(m, batch, data.labels).loss;
    if (last < prev) ++decreases;
    prev = last;
  }
  EXPECT_GE(decreases, steps * 9 / 10);
  EXPECT_LT(last, first);
}

TEST(ModelUpdateTest, SgdArithmeticIsExact) {
  ModelGraph m = make_mlp(1, {}, 2, false, 1);  // single dense 1->2
  auto& n = m.node(1);
  n.W = Tensor({1, 2}, {1.0, 4.0});
  n.b = Tensor({2}, {0.5, -0.5});
  GradientSet grads;
  grads[1].dW = Tensor({1, 2}, {2.0, 0.0});
  grads[1].db = Tensor({2}, {0.0, 0.0});

  ModelGraph before = m;
  sgd_apply(m, grads, 0.0);  // zero rate: unchanged bitwise
  EXPECT_EQ(m.param_checksum(), before.param_checksum());

  sgd_apply(m, grads, 0.5);  // 1 - 0.5*2 = 0, others untouched
  EXPECT_EQ(m.node(1).W.at(0, 0), 0.0);
  EXPECT_EQ(m.node(1).W.at(0, 1), 4.0);
  EXPECT_EQ(m.node(1).b.at(0), 0.5);

  GradientSet zero;
  zero[1].dW = Tensor({1, 2});
  zero[1].db = Tensor({2});
  before = m;
  sgd_apply(m, zero, 0.9);  // zero gradient: unchanged bitwise
  EXPECT_EQ(m.param_checksum(), before.param_checksum());
}

TEST(ModelConfigTest, ChainConfigBuildsFourNodeGraph) {
  const char* doc = R"({
    "version": 1, "seed": 5, "input_shape": [2],
    "layers": [
      {"kind": "input"},
      {"kind": "dense", "units": 4},
      {"kind": "dense", "units": 2},
      {"kind": "softmax_xent"}
    ]})";
  ModelGraph m = build_model_from_json(doc);
  ASSERT_EQ(m.layer_count(), 4);
  EXPECT_EQ(m.node(0).kind, LayerKind::Input);
  EXPECT_EQ(m.node(1).kind, LayerKind::Dense);
  EXPECT_EQ(m.node(3).kind, LayerKind::SoftmaxXent);
  EXPECT_EQ(m.output_id, 3);
  EXPECT_EQ(m.node(1).inputs, (std::vector<int>{0}));  // default: previous layer
  EXPECT_EQ(m.node(1).out_shape, (std::vector<std::int64_t>{4}));
  EXPECT_EQ(m.num_classes(), 2);

  // Weights initialized within the fan-based uniform bound, biases zero.
  const double limit1 = std::sqrt(6.0 / (2 + 4));
  for (double w : m.node(1).W.storage()) EXPECT_LE(std::abs(w), limit1);
  for (double b : m.node(1).b.storage()) EXPECT_EQ(b, 0.0);
}

TEST(ModelConfigTest, AddJoinBuildsInDegreeTwoNode) {
  const char* doc = R"({
    "version": 1, "seed": 5, "input_shape": [3],
    "layers": [
      {"kind": "input"},
      {"kind": "dense", "units": 4},
      {"kind": "relu"},
      {"kind": "dense", "units": 4},
      {"kind": "add", "inputs": [2, 3]},
      {"kind": "dense", "units": 2},
      {"kind": "softmax_xent"}
    ]})";
  ModelGraph m = build_model_from_json(doc);
  EXPECT_EQ(m.node(4).inputs, (std::vector<int>{2, 3}));
  EXPECT_EQ(m.node(4).out_shape, (std::vector<std::int64_t>{4}));
  // Layer 2 feeds both the chain and the join.
  EXPECT_EQ(m.consumers()[2], (std::vector<int>{3, 4}));
}

TEST(ModelConfigTest, ErrorsNameTheOffendingField) {
  auto expect_error = [](const char* doc, const std::string& needle) {
    try {
      build_model_from_json(doc);
      FAIL() << "expected ConfigError containing '" << needle << "'";
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
          << "got: " << e.what();
    }
  };
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"input"},{"kind":"blorp"},{"kind":"softmax_xent"}]})",
               "layers[1].kind");
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"input"},{"kind":"dense"},{"kind":"softmax_xent"}]})",
               "layers[1].units");
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"input"},{"kind":"relu","units":3},
                             {"kind":"softmax_xent"}]})",
               "layers[1].units");
  expect_error(R"({"version":2,"seed":1,"input_shape":[2],"layers":[{"kind":"input"}]})",
               "version");
  expect_error(R"({"version":1,"input_shape":[2],"layers":[{"kind":"input"}]})", "seed");
  expect_error(R"({"version":1,"seed":1,"input_shape":[],"layers":[{"kind":"input"}]})",
               "input_shape");
}

TEST(ModelConfigTest, StructuralValidationErrors) {
  auto expect_error = [](const char* doc, const std::string& needle) {
    try {
      build_model_from_json(doc);
      FAIL() << "expected ConfigError containing '" << needle << "'";
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
          << "got: " << e.what();
    }
  };
  // Input not first.
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"relu"},{"kind":"input"},
                             {"kind":"softmax_xent"}]})",
               "first layer");
  // Add with duplicate inputs.
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"input"},{"kind":"dense","units":2},
                             {"kind":"add","inputs":[1,1]},{"kind":"softmax_xent"}]})",
               "distinct");
  // Forward reference.
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"input"},{"kind":"relu","inputs":[2]},
                             {"kind":"softmax_xent"}]})",
               "not an earlier layer");
  // No loss layer.
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"input"},{"kind":"dense","units":2}]})",
               "no softmax_xent");
  // Two loss layers.
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"input"},{"kind":"dense","units":2},
                             {"kind":"softmax_xent"},
                             {"kind":"softmax_xent","inputs":[1]}]})",
               "second loss layer");
  // Dense on an unflattened input.
  expect_error(R"({"version":1,"seed":1,"input_shape":[4,4],
                   "layers":[{"kind":"input"},{"kind":"dense","units":2},
                             {"kind":"softmax_xent"}]})",
               "flat input");
  // Add joining different shapes.
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"input"},{"kind":"dense","units":3},
                             {"kind":"dense","units":4},
                             {"kind":"add","inputs":[1,2]},{"kind":"softmax_xent"}]})",
               "disagree");
  // Dead layer: no path to the loss.
  expect_error(R"({"version":1,"seed":1,"input_shape":[2],
                   "layers":[{"kind":"input"},{"kind":"dense","units":3},
                             {"kind":"dense","units":2,"inputs":[0]},
                             {"kind":"softmax_xent","inputs":[2]}]})",
               "layer 1");
}

TEST(ModelConfigTest, SerializedConfigRebuildsIdentically) {
  Rng rng(77);
  ModelGraph m = random_model(rng, 10, 6, 3, 2, 4);
  const std::uint64_t seed = 123;
  m.init_params(seed);
  ModelGraph rebuilt = build_model_from_json(model_to_json(m, seed));
  ASSERT_EQ(rebuilt.layer_count(), m.layer_count());
  for (int i = 0; i < m.layer_count(); ++i) {
    EXPECT_EQ(rebuilt.node(i).kind, m.node(i).kind);
    EXPECT_EQ(rebuilt.node(i).inputs, m.node(i).inputs);
    EXPECT_EQ(rebuilt.node(i).units, m.node(i).units);
  }
  EXPECT_EQ(rebuilt.param_checksum(), m.param_checksum());
}

TEST(ModelGraphTest, RandomModelsTrainEndToEnd) {
  Rng rng(31337);
  for (int trial = 0; trial < 25; ++trial) {
    ModelGraph m = random_model(rng, 12, 4 + rng.below_int(8), 2 + rng.below_int(4), 2, 3);
    auto [batch, labels] = random_batch(rng, m, 4);
    auto fwd = forward_seq(m, batch, labels);
    EXPECT_TRUE(std::isfinite(fwd.loss));
    auto grads = backward_seq(m, fwd);
    EXPECT_EQ(static_cast<int>(grads.size()),
              static_cast<int>(m.param_layer_ids().size()));
    for (auto& [id, g] : grads) {
      EXPECT_TRUE(g.dW.same_shape(m.node(id).W));
      EXPECT_TRUE(g.db.same_shape(m.node(id).b));
    }
    const auto before = m.param_checksum();
    sgd_apply(m, grads, 0.05);
    EXPECT_NE(m.param_checksum(), before);
  }
}

TEST(ModelGraphTest, CostAccessorsMatchDefinition) {
  ModelGraph m = make_mlp(4, {8}, 3, true, 2);
  const auto& dense = m.node(1);
  EXPECT_EQ(dense.param_count(), 4 * 8 + 8);
  EXPECT_EQ(dense.activation_volume(), 8);
  const auto& act = m.node(2);
  EXPECT_EQ(act.param_count(), 0);
  EXPECT_EQ(act.activation_volume(), 8);
}
