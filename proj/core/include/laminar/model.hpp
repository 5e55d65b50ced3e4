// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "laminar/tensor.hpp"

namespace laminar {

enum class LayerKind { Input, Dense, ReLU, Add, Flatten, SoftmaxXent };

const char* layer_kind_name(LayerKind k);

/// One node of the layer DAG. `id` equals the node's index in the graph's
/// topologically ordered layer list; `inputs` may only reference lower ids.
struct LayerNode {
  int id = 0;
  LayerKind kind = LayerKind::Input;
  std::vector<int> inputs;
  std::int64_t units = 0;  // Dense output features
  Tensor W;                // Dense: [in_features, units]
  Tensor b;                // Dense: [units]
  // Per-sample output shape (without the batch dimension), filled by shape
  // inference at build time.
  std::vector<std::int64_t> out_shape;
  // Optional partitioner cost override from the model config; < 0 means
  // "use the default estimate".
  double cost_override = -1.0;

  bool has_params() const { return kind == LayerKind::Dense; }
  std::int64_t param_count() const { return has_params() ? W.size() + b.size() : 0; }
  std::int64_t activation_volume() const;
};

struct LayerGrads {
  Tensor dW;
  Tensor db;
};

/// Parameter gradients keyed by layer id (ordered).
using GradientSet = std::map<int, LayerGrads>;

/// DAG of layers in topological order with a unique SoftmaxXent sink.
struct ModelGraph {
  std::vector<LayerNode> layers;
  int output_id = -1;

  const LayerNode& node(int id) const { return layers[static_cast<std::size_t>(id)]; }
  LayerNode& node(int id) { return layers[static_cast<std::size_t>(id)]; }
  int layer_count() const { return static_cast<int>(layers.size()); }

  /// Consumers of each layer (edges out), ascending. Rebuilt by validate().
  const std::vector<std::vector<int>>& consumers() const { return consumers_; }

  std::vector<std::int64_t> input_shape() const;  // per-sample
  std::int64_t num_classes() const;
  std::vector<int> param_layer_ids() const;

  /// Structural checks (topological inputs, arities, unique sink,
  /// reachability both ways), then consumer-list rebuild. Throws
  /// ConfigError naming the offending layer.
  void validate();

  /// Fills every node's out_shape; throws naming the offending layer id.
  void infer_shapes();

  /// Seeded init: Dense weights uniform(±sqrt(6/(fan_in+fan_out))) from a
  /// per-layer derived stream, biases zero.
  void init_params(std::uint64_t seed);

  /// FNV-1a over all parameter bits in ascending layer order.
  std::uint64_t param_checksum() const;

 private:
  std::vector<std::vector<int>> consumers_;
};

// --- shared layer kernels ---------------------------------------------------
// Sequential reference and distributed workers both call these, so their
// arithmetic is expression-for-expression identical.

/// Forward one layer. `ins` are the producers' activations in slot order.
/// For SoftmaxXent this passes the logits through; the loss itself comes
/// from output_loss(). Batch size is the leading dimension of each input.
Tensor layer_forward(const LayerNode& node, const std::vector<const Tensor*>& ins);

/// Loss + d(loss)/d(logits) at the SoftmaxXent sink.
SoftmaxXentResult output_loss(const Tensor& logits, const std::vector<std::int64_t>& labels);

/// Parameter gradients of one layer given the gradient w.r.t. its output.
LayerGrads layer_backward_params(const LayerNode& node, const std::vector<const Tensor*>& ins,
                                 const Tensor& grad_out);

/// Gradients w.r.t. each input slot given the gradient w.r.t. the output.
std::vector<Tensor> layer_backward_inputs(const LayerNode& node,
                                          const std::vector<const Tensor*>& ins,
                                          const Tensor& grad_out);

// --- sequential reference ---------------------------------------------------

struct ForwardResult {
  double loss = 0.0;
  std::vector<Tensor> activations;  // by layer id; [output_id] holds logits
  Tensor grad_logits;               // d(mean loss)/d logits, consumed by backward
};

ForwardResult forward_seq(const ModelGraph& model, const Tensor& batch,
                          const std::vector<std::int64_t>& labels);

/// Backward through the DAG. The gradient w.r.t. a layer's output is
/// gathered from its consumers in descending-id order (the same order the
/// distributed path uses), so the two paths agree bitwise.
GradientSet backward_seq(const ModelGraph& model, const ForwardResult& fwd);

/// W <- W - lr*dW for every entry, ascending layer id, in place.
void sgd_apply(ModelGraph& model, const GradientSet& grads, double lr);

}  // namespace laminar
