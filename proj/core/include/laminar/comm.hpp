// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "laminar/tensor.hpp"

namespace laminar {

enum class MsgKind : std::uint8_t {
  Activation = 0,
  PartialError = 1,
  GradientContribution = 2,
  ControlBarrier = 3,
};

const char* msg_kind_name(MsgKind k);

/// One point-to-point message. (kind, tag, src, dst) identifies a message
/// uniquely within a training step; the payload shape is implied by the tag.
struct Message {
  MsgKind kind = MsgKind::Activation;
  std::uint64_t tag = 0;
  int src = -1;
  int dst = -1;
  Tensor payload;  // empty for ControlBarrier
};

/// Tag construction. Three disjoint namespaces telling traffic apart:
/// data-plane edge tags, collective tags (bit 63), control tags (bit 62).
namespace tags {

constexpr std::uint64_t kCollectiveBit = 1ULL << 63;
constexpr std::uint64_t kControlBit = 1ULL << 62;

/// Activation / partial-error tag for a DAG edge at one pipeline stage.
std::uint64_t edge(int src_layer, int dst_layer, int stage);
int edge_src(std::uint64_t tag);
int edge_dst(std::uint64_t tag);
int edge_stage(std::uint64_t tag);

/// Collective traffic: keyed by group (its smallest member), a per-group
/// monotonically increasing sequence number, and a phase/part pair so
/// chunked ring steps never alias.
std::uint64_t collective(int group_key, std::uint32_t seq, int phase, int part);

enum class Control : std::uint8_t {
  LossReport = 1,
  ParamGather = 2,
  EvalReport = 3,
  Barrier = 4,
};

std::uint64_t control(Control purpose, int a, std::uint32_t b);

}  // namespace tags

enum class GroupPurpose { World, AllreducePerPartition };

/// A sorted set of ranks taking part in one collective pattern.
struct RankGroup {
  GroupPurpose purpose = GroupPurpose::World;
  std::vector<int> members;  // strictly ascending

  int size() const { return static_cast<int>(members.size()); }
  /// Index of `rank` within members; throws if absent.
  int index_of(int rank) const;
  bool contains(int rank) const;
  void validate() const;
};

/// Point-to-point transport owned by exactly one rank worker.
///
/// send() blocks while the destination's per-peer buffer is full (simulated
/// transport only; sockets rely on TCP backpressure). try_send() never
/// blocks: it either accepts the message (moving out of `msg`) or returns
/// false leaving `msg` intact. recv() blocks until the matching (src, tag)
/// message arrives, calling `idle` between waits so callers can keep
/// flushing their own outgoing queues while blocked.
class Endpoint {
 public:
  virtual ~Endpoint() = default;
  virtual int rank() const = 0;
  virtual int world_size() const = 0;
  virtual void send(Message msg) = 0;
  virtual bool try_send(Message& msg) = 0;
  virtual Message recv(int src, std::uint64_t tag) = 0;
  virtual Message recv_idle(int src, std::uint64_t tag, const std::function<void()>& idle) = 0;
  /// Deadline applied to each blocking send/recv.
  virtual void set_timeout(double seconds) = 0;
  virtual double timeout() const = 0;
  virtual void close() = 0;
};

enum class ReduceOp { Sum, Mean };

/// Group collectives over an Endpoint. One Communicator per RankGroup per
/// rank; all members must construct them over the same group and issue the
/// same collective sequence.
class Communicator {
 public:
  Communicator(Endpoint& ep, RankGroup group);

  const RankGroup& group() const { return group_; }

  /// Reduction runs in ascending-rank order (result bitwise equal to a
  /// straight-line left-to-right sum over members), identical on every
  /// member. Mean = sum then scale by 1/n, applied identically everywhere.
  Tensor allreduce(const Tensor& payload, ReduceOp op);

  /// All members return the root's payload bitwise.
  Tensor broadcast(int root, const Tensor& payload);

  /// Deferred-start handle: wait() performs the collective. Handles must be
  /// awaited in creation order on every member.
  class AllreduceHandle {
   public:
    Tensor wait();

   private:
    friend class Communicator;
    AllreduceHandle(Communicator* comm, Tensor payload, ReduceOp op)
        : comm_(comm), payload_(std::move(payload)), op_(op) {}
    Communicator* comm_;
    Tensor payload_;
    ReduceOp op_;
    bool done_ = false;
  };

  AllreduceHandle start_allreduce(Tensor payload, ReduceOp op);

  /// Ring pass with empty payloads; returns when every member has entered.
  void barrier();

 private:
  Tensor ring_allreduce_sum(const Tensor& payload);
  void exchange_shape_headers(const Tensor& payload);
  Message make_msg(std::uint64_t tag, int dst, Tensor payload, MsgKind kind) const;

  Endpoint& ep_;
  RankGroup group_;
  int my_index_;
  std::uint32_t seq_ = 0;
};

}  // namespace laminar
