// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <map>
#include <string>
#include <vector>

#include "laminar/comm.hpp"
#include "laminar/model.hpp"

namespace laminar {

/// Contiguous assignment of layers to partitions, replicated across
/// replicas. rank = replica * num_partitions + partition.
struct PartitionPlan {
  int num_partitions = 1;
  int num_replicas = 1;
  std::vector<int> assignment;  // layer id -> partition index

  int world_size() const { return num_partitions * num_replicas; }
  int rank_of(int replica, int partition) const {
    return replica * num_partitions + partition;
  }
  int partition_of_rank(int rank) const { return rank % num_partitions; }
  int replica_of_rank(int rank) const { return rank / num_partitions; }
  int partition_of_layer(int layer) const {
    return assignment[static_cast<std::size_t>(layer)];
  }
  std::vector<int> layers_of(int partition) const;
  int last_partition() const { return num_partitions - 1; }
};

/// Balanced contiguous split over a per-layer cost estimate (parameter
/// count + per-sample activation volume, overridable per layer in the model
/// config). Deterministic; every partition non-empty.
PartitionPlan make_partition_plan(const ModelGraph& model, int num_partitions,
                                  int num_replicas);

double layer_cost(const LayerNode& node);

/// A DAG edge whose endpoints live on different partitions.
struct CrossEdge {
  int src = 0;       // producing layer
  int dst = 0;       // consuming layer
  int src_part = 0;
  int dst_part = 0;

  bool operator==(const CrossEdge&) const = default;
};

/// All boundary-crossing edges, sorted by (src, dst).
std::vector<CrossEdge> cross_edges(const ModelGraph& model, const PartitionPlan& plan);

/// Per-layer communication dependencies of one partition. Entries are
/// grouped by peer partition with peers strictly ascending — the
/// deadlock-avoidance order. `sends` lists edges whose activation this
/// layer ships out (and whose partial error comes back); `recvs` lists
/// edges whose activation arrives here (and whose partial error is sent
/// back) — the backward lists are these same entries, mirrored.
struct PeerEdges {
  int peer = 0;  // peer partition index
  std::vector<CrossEdge> edges;
};

struct LayerDeps {
  int layer = 0;
  std::vector<PeerEdges> sends;
  std::vector<PeerEdges> recvs;
};

struct DependencyLists {
  int partition = 0;
  std::vector<LayerDeps> per_layer;  // local layers, ascending id
};

DependencyLists build_dependency_lists(const ModelGraph& model, const PartitionPlan& plan,
                                       int partition);

/// Runtime messaging orders. For every (here -> peer) channel, messages
/// within one stage must flow in exactly this sequence; the consumer takes
/// them in the same sequence, which is what makes capacity-1 buffers safe.
/// Forward sequences are consumer-major ascending (dst, then src);
/// backward sequences are descending (src, then dst), mirroring the order
/// backward gathers run in.
struct ChannelPlan {
  std::map<int, std::vector<CrossEdge>> fwd_out;  // peer partition -> ordered edges
  std::map<int, std::vector<CrossEdge>> fwd_in;
  std::map<int, std::vector<CrossEdge>> bwd_out;
  std::map<int, std::vector<CrossEdge>> bwd_in;
};

ChannelPlan build_channel_plan(const ModelGraph& model, const PartitionPlan& plan,
                               int partition);

/// One group per partition: { rank_of(r, p) for all replicas r }.
std::vector<RankGroup> replica_groups(const PartitionPlan& plan);

RankGroup world_group(const PartitionPlan& plan);

/// Diagnostic text dump: assignment, one line per cross edge, per-layer
/// dependency lists, allreduce groups.
std::string plan_dump(const ModelGraph& model, const PartitionPlan& plan);

}  // namespace laminar
