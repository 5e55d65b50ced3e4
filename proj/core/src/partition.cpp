// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/partition.hpp"

#include <algorithm>
#include <sstream>

#include "laminar/error.hpp"

namespace laminar {

std::vector<int> PartitionPlan::layers_of(int partition) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == partition) out.push_back(static_cast<int>(i));
  }
  return out;
}

double layer_cost(const LayerNode& node) {
  if (node.cost_override >= 0) return node.cost_override;
  return static_cast<double>(node.param_count() + node.activation_volume());
}

PartitionPlan make_partition_plan(const ModelGraph& model, int num_partitions,
                                  int num_replicas) {
  const int n = model.layer_count();
  if (num_partitions < 1 || num_partitions > n) {
    throw ConfigError(msg("num_partitions ", num_partitions, " not in 1..", n,
                          " (cannot exceed the layer count)"));
  }
  if (num_replicas < 1) throw ConfigError(msg("num_replicas ", num_replicas, " must be >= 1"));

  std::vector<double> prefix(static_cast<std::size_t>(n) + 1, 0.0);
  for (int i = 0; i < n; ++i) {
    prefix[static_cast<std::size_t>(i) + 1] =
        prefix[static_cast<std::size_t>(i)] + layer_cost(model.node(i));
  }
  const double total = prefix.back();

  // Quota split: partition p ends at the smallest prefix reaching its share
  // of the total cost, clamped so every partition keeps at least one layer.
  PartitionPlan plan;
  plan.num_partitions = num_partitions;
  plan.num_replicas = num_replicas;
  plan.assignment.assign(static_cast<std::size_t>(n), 0);
  int begin = 0;  // first layer of partition p
  for (int p = 0; p < num_partitions; ++p) {
    int end;  // one past the last layer of partition p
    if (p == num_partitions - 1) {
      end = n;
    } else {
      const double quota = total * (static_cast<double>(p) + 1.0) /
                           static_cast<double>(num_partitions);
      end = begin + 1;
      while (end < n && prefix[static_cast<std::size_t>(end)] < quota) ++end;
      // Leave at least one layer for each remaining partition.
      end = std::min(end, n - (num_partitions - 1 - p));
      end = std::max(end, begin + 1);
    }
    for (int i = begin; i < end; ++i) plan.assignment[static_cast<std::size_t>(i)] = p;
    begin = end;
  }
  return plan;
}

std::vector<CrossEdge> cross_edges(const ModelGraph& model, const PartitionPlan& plan) {
  std::vector<CrossEdge> out;
  for (const auto& node : model.layers) {
    for (int in : node.inputs) {
      const int sp = plan.partition_of_layer(in);
      const int dp = plan.partition_of_layer(node.id);
      if (sp != dp) out.push_back({in, node.id, sp, dp});
    }
  }
  std::sort(out.begin(), out.end(), [](const CrossEdge& a, const CrossEdge& b) {
    return std::tie(a.src, a.dst) < std::tie(b.src, b.dst);
  });
  return out;
}

namespace {

std::vector<PeerEdges> group_by_peer(std::vector<CrossEdge> edges, bool peer_is_dst) {
  // Group edges of one layer by peer partition, peers strictly ascending;
  // within a group, order by the far layer id.
  std::sort(edges.begin(), edges.end(), [&](const CrossEdge& a, const CrossEdge& b) {
    const int pa = peer_is_dst ? a.dst_part : a.src_part;
    const int pb = peer_is_dst ? b.dst_part : b.src_part;
    const int la = peer_is_dst ? a.dst : a.src;
    const int lb = peer_is_dst ? b.dst : b.src;
    return std::tie(pa, la) < std::tie(pb, lb);
  });
  std::vector<PeerEdges> out;
  for (const auto& e : edges) {
    const int peer = peer_is_dst ? e.dst_part : e.src_part;
    if (out.empty() || out.back().peer != peer) out.push_back({peer, {}});
    out.back().edges.push_back(e);
  }
  return out;
}

}  // namespace

DependencyLists build_dependency_lists(const ModelGraph& model, const PartitionPlan& plan,
                                       int partition) {
  DependencyLists deps;
  deps.partition = partition;
  const auto edges = cross_edges(model, plan);
  for (int layer : plan.layers_of(partition)) {
    LayerDeps ld;
    ld.layer = layer;
    std::vector<CrossEdge> sends, recvs;
    for (const auto& e : edges) {
      if (e.src == layer) sends.push_back(e);
      if (e.dst == layer) recvs.push_back(e);
    }
    ld.sends = group_by_peer(std::move(sends), /*peer_is_dst=*/true);
    ld.recvs = group_by_peer(std::move(recvs), /*peer_is_dst=*/false);
    deps.per_layer.push_back(std::move(ld));
  }
  return deps;
}

ChannelPlan build_channel_plan(const ModelGraph& model, const PartitionPlan& plan,
                               int partition) {
  ChannelPlan cp;
  const auto fwd_order = [](const CrossEdge& a, const CrossEdge& b) {
    return std::tie(a.dst, a.src) < std::tie(b.dst, b.src);
  };
  const auto bwd_order = [](const CrossEdge& a, const CrossEdge& b) {
    return std::tie(b.src, b.dst) < std::tie(a.src, a.dst);  // descending
  };
  for (const auto& e : cross_edges(model, plan)) {
    if (e.src_part == partition) {
      cp.fwd_out[e.dst_part].push_back(e);
      cp.bwd_in[e.dst_part].push_back(e);
    }
    if (e.dst_part == partition) {
      cp.fwd_in[e.src_part].push_back(e);
      cp.bwd_out[e.src_part].push_back(e);
    }
  }
  for (auto& [peer, v] : cp.fwd_out) std::sort(v.begin(), v.end(), fwd_order);
  for (auto& [peer, v] : cp.fwd_in) std::sort(v.begin(), v.end(), fwd_order);
  for (auto& [peer, v] : cp.bwd_out) std::sort(v.begin(), v.end(), bwd_order);
  for (auto& [peer, v] : cp.bwd_in) std::sort(v.begin(), v.end(), bwd_order);
  return cp;
}

std::vector<RankGroup> replica_groups(const PartitionPlan& plan) {
  std::vector<RankGroup> groups;
  for (int p = 0; p < plan.num_partitions; ++p) {
    RankGroup g;
    g.purpose = GroupPurpose::AllreducePerPartition;
    for (int r = 0; r < plan.num_replicas; ++r) g.members.push_back(plan.rank_of(r, p));
    g.validate();
    groups.push_back(std::move(g));
  }
  return groups;
}

RankGroup world_group(const PartitionPlan& plan) {
  RankGroup g;
  g.purpose = GroupPurpose::World;
  for (int r = 0; r < plan.world_size(); ++r) g.members.push_back(r);
  g.validate();
  return g;
}

std::string plan_dump(const ModelGraph& model, const PartitionPlan& plan) {
  std::ostringstream os;
  os << "partitions " << plan.num_partitions << " replicas " << plan.num_replicas
     << " world " << plan.world_size() << "\n";
  for (const auto& n : model.layers) {
    os << "layer " << n.id << " kind " << layer_kind_name(n.kind) << " partition "
       << plan.partition_of_layer(n.id) << " cost " << layer_cost(n) << "\n";
  }
  for (const auto& e : cross_edges(model, plan)) {
    os << "edge " << e.src << "->" << e.dst << " partition " << e.src_part << "->"
       << e.dst_part << "\n";
  }
  for (int p = 0; p < plan.num_partitions; ++p) {
    const auto deps = build_dependency_lists(model, plan, p);
    for (const auto& ld : deps.per_layer) {
      if (ld.sends.empty() && ld.recvs.empty()) continue;
      os << "deps partition " << p << " layer " << ld.layer << " fwd [";
      bool first = true;
      for (const auto& pe : ld.sends) {
        for (const auto& e : pe.edges) {
          if (!first) os << ", ";
          first = false;
          os << "send " << e.src << "->" << e.dst << " to " << pe.peer;
        }
      }
      os << "] bwd [";
      first = true;
      for (const auto& pe : ld.recvs) {
        for (const auto& e : pe.edges) {
          if (!first) os << ", ";
          first = false;
          os << "recv " << e.src << "->" << e.dst << " from " << pe.peer;
        }
      }
      os << "]\n";
    }
  }
  for (const auto& g : replica_groups(plan)) {
    os << "allreduce group [";
    for (std::size_t i = 0; i < g.members.size(); ++i) {
      if (i) os << ", ";
      os << g.members[i];
    }
    os << "]\n";
  }
  return os.str();
}

}  // namespace laminar
