// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/model.hpp"

#include <algorithm>
#include <cmath>

#include "laminar/error.hpp"
#include "laminar/rng.hpp"

namespace laminar {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "input";
    case LayerKind::Dense: return "dense";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Add: return "add";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::SoftmaxXent: return "softmax_xent";
  }
  return "?";
}

std::int64_t LayerNode::activation_volume() const {
  std::int64_t v = 1;
  for (auto d : out_shape) v *= d;
  return v;
}

std::vector<std::int64_t> ModelGraph::input_shape() const {
  for (const auto& n : layers) {
    if (n.kind == LayerKind::Input) return n.out_shape;
  }
  throw ConfigError("model has no input layer");
}

std::int64_t ModelGraph::num_classes() const {
  return node(output_id).out_shape.at(0);
}

std::vector<int> ModelGraph::param_layer_ids() const {
  std::vector<int> ids;
  for (const auto& n : layers) {
    if (n.has_params()) ids.push_back(n.id);
  }
  return ids;
}

void ModelGraph::validate() {
  if (layers.empty()) throw ConfigError("model has no layers");
  int sink = -1;
  int input_count = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerNode& n = layers[i];
    if (n.id != static_cast<int>(i)) {
      throw ConfigError(msg("layer ", i, ": id ", n.id, " does not match position"));
    }
    std::size_t want_inputs = 0;
    switch (n.kind) {
      case LayerKind::Input: want_inputs = 0; break;
      case LayerKind::Add: want_inputs = 2; break;
      default: want_inputs = 1; break;
    }
    if (n.inputs.size() != want_inputs) {
      throw ConfigError(msg("layer ", i, " (", layer_kind_name(n.kind), "): expected ",
                            want_inputs, " inputs, got ", n.inputs.size()));
    }
    for (int in : n.inputs) {
      if (in < 0 || in >= static_cast<int>(i)) {
        throw ConfigError(msg("layer ", i, ": input ", in, " is not an earlier layer"));
      }
      if (layers[static_cast<std::size_t>(in)].kind == LayerKind::SoftmaxXent) {
        throw ConfigError(msg("layer ", i, ": consumes the loss layer ", in));
      }
    }
    if (n.kind == LayerKind::Add && n.inputs[0] == n.inputs[1]) {
      throw ConfigError(msg("layer ", i, ": add inputs must be distinct"));
    }
    if (n.kind == LayerKind::Dense && n.units <= 0) {
      throw ConfigError(msg("layer ", i, ": dense units must be positive"));
    }
    if (n.kind == LayerKind::SoftmaxXent) {
      if (sink != -1) {
        throw ConfigError(msg("layer ", i, ": second loss layer (first at ", sink, ")"));
      }
      sink = static_cast<int>(i);
    }
    if (n.kind == LayerKind::Input) {
      if (i != 0) throw ConfigError(msg("layer ", i, ": input must be the first layer"));
      ++input_count;
    }
  }
  if (input_count != 1) throw ConfigError("model must have exactly one input layer");
  if (sink == -1) throw ConfigError("model has no softmax_xent loss layer");
  output_id = sink;

  consumers_.assign(layers.size(), {});
  for (const auto& n : layers) {
    for (int in : n.inputs) consumers_[static_cast<std::size_t>(in)].push_back(n.id);
  }
  for (auto& c : consumers_) std::sort(c.begin(), c.end());

  // The sink must be the unique layer without consumers.
  for (const auto& n : layers) {
    if (n.id != sink && consumers_[static_cast<std::size_t>(n.id)].empty()) {
      throw ConfigError(msg("layer ", n.id, " (", layer_kind_name(n.kind),
                            "): dead layer, nothing consumes it"));
    }
  }
  // Every non-input layer must trace back to an input. Inputs have no
  // predecessors, so walking predecessors from any layer must reach one.
  std::vector<char> reaches_input(layers.size(), 0);
  for (const auto& n : layers) {
    if (n.kind == LayerKind::Input) {
      reaches_input[static_cast<std::size_t>(n.id)] = 1;
      continue;
    }
    bool ok = false;
    for (int in : n.inputs) ok = ok || reaches_input[static_cast<std::size_t>(in)];
    if (!ok) {
      throw ConfigError(msg("layer ", n.id, ": not reachable from an input layer"));
    }
    reaches_input[static_cast<std::size_t>(n.id)] = 1;
  }
}

void ModelGraph::infer_shapes() {
  for (auto& n : layers) {
    switch (n.kind) {
      case LayerKind::Input:
        if (n.out_shape.empty() || n.out_shape.size() > 3) {
          throw ConfigError(msg("layer ", n.id, ": input shape must have rank 1..3"));
        }
        for (auto d : n.out_shape) {
          if (d <= 0) throw ConfigError(msg("layer ", n.id, ": input dims must be positive"));
        }
        break;
      case LayerKind::Dense: {
        const auto& in = node(n.inputs[0]).out_shape;
        if (in.size() != 1) {
          throw ConfigError(msg("layer ", n.id, ": dense needs a flat input, got rank ",
                                in.size(), " from layer ", n.inputs[0]));
        }
        n.out_shape = {n.units};
        break;
      }
      case LayerKind::ReLU:
        n.out_shape = node(n.inputs[0]).out_shape;
        break;
      case LayerKind::Add: {
        const auto& a = node(n.inputs[0]).out_shape;
        const auto& b = node(n.inputs[1]).out_shape;
        if (a != b) {
          throw ConfigError(msg("layer ", n.id, ": add inputs disagree, ", shape_str(a), " vs ",
                                shape_str(b)));
        }
        n.out_shape = a;
        break;
      }
      case LayerKind::Flatten: {
        std::int64_t v = 1;
        for (auto d : node(n.inputs[0]).out_shape) v *= d;
        n.out_shape = {v};
        break;
      }
      case LayerKind::SoftmaxXent: {
        const auto& in = node(n.inputs[0]).out_shape;
        if (in.size() != 1 || in[0] < 2) {
          throw ConfigError(msg("layer ", n.id,
                                ": loss needs flat logits with at least 2 classes, got ",
                                shape_str(in)));
        }
        n.out_shape = in;
        break;
      }
    }
  }
}

void ModelGraph::init_params(std::uint64_t seed) {
  for (auto& n : layers) {
    if (n.kind != LayerKind::Dense) continue;
    const std::int64_t fan_in = node(n.inputs[0]).out_shape.at(0);
    const std::int64_t fan_out = n.units;
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(n.id)));
    n.W = Tensor({fan_in, fan_out});
    for (std::int64_t i = 0; i < n.W.size(); ++i) n.W.at(i) = rng.uniform(-limit, limit);
    n.b = Tensor({fan_out});
  }
}

std::uint64_t ModelGraph::param_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& n : layers) {
    if (!n.has_params()) continue;
    h = fnv1a_combine(h, static_cast<std::uint64_t>(n.id));
    h = fnv1a_combine(h, fnv1a_checksum(n.W));
    h = fnv1a_combine(h, fnv1a_checksum(n.b));
  }
  return h;
}

namespace {

Tensor flatten_batch(const Tensor& x) {
  std::int64_t rows = x.dim(0);
  std::int64_t cols = 1;
  for (int i = 1; i < x.rank(); ++i) cols *= x.dim(i);
  return x.reshaped({rows, cols});
}

}  // namespace

Tensor layer_forward(const LayerNode& node, const std::vector<const Tensor*>& ins) {
  switch (node.kind) {
    case LayerKind::Input:
      return *ins.at(0);  // the batch itself, staged by the caller
    case LayerKind::Dense:
      return add_row_broadcast(matmul(*ins.at(0), node.W), node.b);
    case LayerKind::ReLU:
      return relu(*ins.at(0));
    case LayerKind::Add:
      return add(*ins.at(0), *ins.at(1));
    case LayerKind::Flatten:
      return flatten_batch(*ins.at(0));
    case LayerKind::SoftmaxXent:
      return *ins.at(0);  // logits pass through; loss computed separately
  }
  throw Error("layer_forward: unreachable");
}

SoftmaxXentResult output_loss(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  return softmax_xent(logits, labels);
}

LayerGrads layer_backward_params(const LayerNode& node, const std::vector<const Tensor*>& ins,
                                 const Tensor& grad_out) {
  LayerGrads g;
  if (node.kind == LayerKind::Dense) {
    g.dW = matmul_transpose_a(*ins.at(0), grad_out);
    g.db = col_sum(grad_out);
  }
  return g;
}

std::vector<Tensor> layer_backward_inputs(const LayerNode& node,
                                          const std::vector<const Tensor*>& ins,
                                          const Tensor& grad_out) {
  switch (node.kind) {
    case LayerKind::Input:
      return {};
    case LayerKind::Dense:
      return {matmul_transpose_b(grad_out, node.W)};
    case LayerKind::ReLU:
      return {relu_grad(*ins.at(0), grad_out)};
    case LayerKind::Add: {
      std::vector<Tensor> g;
      g.push_back(grad_out);
      g.push_back(grad_out);
      return g;
    }
    case LayerKind::Flatten:
      return {grad_out.reshaped(ins.at(0)->shape())};
    case LayerKind::SoftmaxXent:
      // grad w.r.t. logits comes from output_loss, not from here.
      throw Error("layer_backward_inputs: loss layer has no upstream gradient");
  }
  throw Error("layer_backward_inputs: unreachable");
}

ForwardResult forward_seq(const ModelGraph& model, const Tensor& batch,
                          const std::vector<std::int64_t>& labels) {
  ForwardResult out;
  out.activations.resize(model.layers.size());
  for (const LayerNode& n : model.layers) {
    try {
      if (n.kind == LayerKind::Input) {
        std::vector<std::int64_t> want = {batch.dim(0)};
        for (auto d : n.out_shape) want.push_back(d);
        if (batch.shape() != want) {
          throw ShapeError(
              msg("batch shape ", shape_str(batch), " does not match input ", shape_str(want)));
        }
        out.activations[static_cast<std::size_t>(n.id)] = batch;
        continue;
      }
      std::vector<const Tensor*> ins;
      for (int in : n.inputs) ins.push_back(&out.activations[static_cast<std::size_t>(in)]);
      out.activations[static_cast<std::size_t>(n.id)] = layer_forward(n, ins);
    } catch (const Error& e) {
      throw Error(msg("forward at layer ", n.id, " (", layer_kind_name(n.kind), "): ", e.what()));
    }
  }
  auto loss = output_loss(out.activations[static_cast<std::size_t>(model.output_id)], labels);
  out.loss = loss.loss;
  out.grad_logits = std::move(loss.grad_logits);
  return out;
}

GradientSet backward_seq(const ModelGraph& model, const ForwardResult& fwd) {
  if (fwd.activations.size() != model.layers.size() || fwd.grad_logits.empty()) {
    throw Error("backward_seq: forward result does not match the model");
  }
  // Edge gradients keyed by (producer, consumer).
  std::map<std::pair<int, int>, Tensor> edge_grads;
  edge_grads[{model.node(model.output_id).inputs[0], model.output_id}] = fwd.grad_logits;

  GradientSet grads;
  for (int id = model.output_id - 1; id >= 0; --id) {
    const LayerNode& n = model.node(id);
    const auto& consumers = model.consumers()[static_cast<std::size_t>(id)];
    // Gather d(loss)/d(output of n) from consumers, descending id; the
    // first term is moved, the rest accumulate.
    Tensor grad_out;
    for (auto it = consumers.rbegin(); it != consumers.rend(); ++it) {
      auto key = std::make_pair(id, *it);
      auto found = edge_grads.find(key);
      if (found == edge_grads.end()) {
        throw Error(msg("backward at layer ", id, ": missing gradient from consumer ", *it));
      }
      if (grad_out.empty()) {
        grad_out = std::move(found->second);
      } else {
        accumulate(grad_out, found->second);
      }
      edge_grads.erase(found);
    }
    std::vector<const Tensor*> ins;
    for (int in : n.inputs) ins.push_back(&fwd.activations[static_cast<std::size_t>(in)]);
    if (n.has_params()) {
      grads[id] = layer_backward_params(n, ins, grad_out);
    }
    if (n.kind != LayerKind::Input) {
      auto gin = layer_backward_inputs(n, ins, grad_out);
      for (std::size_t s = 0; s < gin.size(); ++s) {
        edge_grads[{n.inputs[s], id}] = std::move(gin[s]);
      }
    }
  }
  return grads;
}

void sgd_apply(ModelGraph& model, const GradientSet& grads, double lr) {
  for (const auto& [id, g] : grads) {
    LayerNode& n = model.node(id);
    if (!n.has_params()) throw Error(msg("sgd_apply: layer ", id, " has no parameters"));
    check_same_shape(n.W, g.dW, "sgd_apply");
    check_same_shape(n.b, g.db, "sgd_apply");
    for (std::int64_t i = 0; i < n.W.size(); ++i) n.W.at(i) -= lr * g.dW.at(i);
    for (std::int64_t i = 0; i < n.b.size(); ++i) n.b.at(i) -= lr * g.db.at(i);
  }
}

}  // namespace laminar
