// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include <algorithm>
#include <cstdint>

#include "laminar/comm.hpp"
#include "laminar/error.hpp"

namespace laminar {

const char* msg_kind_name(MsgKind k) {
  switch (k) {
    case MsgKind::Activation: return "activation";
    case MsgKind::PartialError: return "partial_error";
    case MsgKind::GradientContribution: return "gradient_contribution";
    case MsgKind::ControlBarrier: return "control_barrier";
  }
  return "unknown";
}

namespace tags {

namespace {
void check_16bit(const char* field, std::int64_t v) {
  if (v < 0 || v >= 65536) throw Error(msg("tag field ", field, " out of range: ", v));
}
}  // namespace

std::uint64_t edge(int src_layer, int dst_layer, int stage) {
  check_16bit("src_layer", src_layer);
  check_16bit("dst_layer", dst_layer);
  check_16bit("stage", stage);
  return (static_cast<std::uint64_t>(src_layer) << 32) |
         (static_cast<std::uint64_t>(dst_layer) << 16) | static_cast<std::uint64_t>(stage);
}

int edge_src(std::uint64_t tag) { return static_cast<int>((tag >> 32) & 0xFFFF); }
int edge_dst(std::uint64_t tag) { return static_cast<int>((tag >> 16) & 0xFFFF); }
int edge_stage(std::uint64_t tag) { return static_cast<int>(tag & 0xFFFF); }

std::uint64_t collective(int group_key, std::uint32_t seq, int phase, int part) {
  check_16bit("group_key", group_key);
  if (seq > 0xFFFFFF) throw Error(msg("collective sequence number overflow: ", seq));
  if (phase < 0 || phase >= 256) throw Error(msg("tag field phase out of range: ", phase));
  if (part < 0 || part >= 256) throw Error(msg("tag field part out of range: ", part));
  return kCollectiveBit | (static_cast<std::uint64_t>(group_key) << 40) |
         (static_cast<std::uint64_t>(seq) << 16) | (static_cast<std::uint64_t>(phase) << 8) |
         static_cast<std::uint64_t>(part);
}

std::uint64_t control(Control purpose, int a, std::uint32_t b) {
  check_16bit("control a", a);
  return kControlBit | (static_cast<std::uint64_t>(purpose) << 48) |
         (static_cast<std::uint64_t>(a) << 32) | static_cast<std::uint64_t>(b);
}

}  // namespace tags

int RankGroup::index_of(int rank) const {
  auto it = std::lower_bound(members.begin(), members.end(), rank);
  if (it == members.end() || *it != rank) {
    throw Error(msg("rank ", rank, " is not a member of this group"));
  }
  return static_cast<int>(it - members.begin());
}

bool RankGroup::contains(int rank) const {
  return std::binary_search(members.begin(), members.end(), rank);
}

void RankGroup::validate() const {
  if (members.empty()) throw ConfigError("rank group must have at least one member");
  for (std::size_t i = 0; i < members.size(); ++i) {
    if (members[i] < 0) throw ConfigError(msg("rank group member ", members[i], " is negative"));
    if (i > 0 && members[i] <= members[i - 1]) {
      throw ConfigError("rank group members must be strictly ascending");
    }
  }
}

namespace {

/// Distinct tag key per group. The purpose bit keeps a world group and a
/// single-member-overlapping data-parallel group from sharing tag space.
int group_key(const RankGroup& g) {
  int key = g.members.front();
  if (g.purpose == GroupPurpose::World) key |= 0x8000;
  return key;
}

// Collective tag phases.
constexpr int kPhaseShape = 0;
constexpr int kPhaseAccumulate = 1;
constexpr int kPhaseDistribute = 2;
constexpr int kPhaseBroadcast = 3;
constexpr int kPhaseBarrierUp = 4;
constexpr int kPhaseBarrierDown = 5;

Tensor chunk_of(const Tensor& t, std::int64_t begin, std::int64_t end) {
  std::vector<double> values(t.storage().begin() + begin, t.storage().begin() + end);
  return Tensor({end - begin}, std::move(values));
}

}  // namespace

Communicator::Communicator(Endpoint& ep, RankGroup group) : ep_(ep), group_(std::move(group)) {
  group_.validate();
  my_index_ = group_.index_of(ep_.rank());  // throws if we are not a member
}

Message Communicator::make_msg(std::uint64_t tag, int dst, Tensor payload, MsgKind kind) const {
  Message m;
  m.kind = kind;
  m.tag = tag;
  m.src = ep_.rank();
  m.dst = dst;
  m.payload = std::move(payload);
  return m;
}

void Communicator::exchange_shape_headers(const Tensor& payload) {
  const int n = group_.size();
  if (n == 1) return;
  const int key = group_key(group_);
  const auto tag = tags::collective(key, seq_, kPhaseShape, 0);
  std::vector<double> hdr;
  hdr.push_back(static_cast<double>(payload.rank()));
  for (auto d : payload.shape()) hdr.push_back(static_cast<double>(d));
  const int next = group_.members[static_cast<std::size_t>((my_index_ + 1) % n)];
  const int prev = group_.members[static_cast<std::size_t>((my_index_ + n - 1) % n)];
  ep_.send(make_msg(tag, next, Tensor({static_cast<std::int64_t>(hdr.size())}, hdr),
                    MsgKind::GradientContribution));
  Message got = ep_.recv(prev, tag);
  std::vector<std::int64_t> peer_shape;
  const auto& pv = got.payload.storage();
  for (std::size_t i = 1; i < pv.size(); ++i) peer_shape.push_back(static_cast<std::int64_t>(pv[i]));
  if (peer_shape != payload.shape()) {
    throw ShapeError(msg("allreduce shape mismatch: rank ", ep_.rank(), " has ",
                         shape_str(payload.shape()), ", rank ", prev, " has ",
                         shape_str(peer_shape)));
  }
}

Tensor Communicator::ring_allreduce_sum(const Tensor& payload) {
  const int n = group_.size();
  const int key = group_key(group_);
  const std::uint32_t seq = seq_;
  if (n == 1) return payload;

  const std::int64_t len = payload.size();
  const std::int64_t chunks = std::min<std::int64_t>(n, len);
  auto chunk_begin = [&](std::int64_t c) { return c * len / chunks; };

  Tensor result(payload.shape());
  const auto member = [&](int idx) { return group_.members[static_cast<std::size_t>(idx)]; };

  // Accumulate pass: chunk sums travel member 0 -> 1 -> ... -> n-1, each hop
  // adding its own slice. Association is therefore left-to-right in member
  // order, so the total matches a straight-line sum bitwise.
  std::vector<Tensor> summed(static_cast<std::size_t>(chunks));
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t b = chunk_begin(c), e = chunk_begin(c + 1);
    const auto tag = tags::collective(key, seq, kPhaseAccumulate, static_cast<int>(c));
    if (my_index_ == 0) {
      ep_.send(make_msg(tag, member(1), chunk_of(payload, b, e), MsgKind::GradientContribution));
    } else {
      Message got = ep_.recv(member(my_index_ - 1), tag);
      Tensor acc = add(got.payload, chunk_of(payload, b, e));
      if (my_index_ + 1 < n) {
        ep_.send(make_msg(tag, member(my_index_ + 1), std::move(acc),
                          MsgKind::GradientContribution));
      } else {
        summed[static_cast<std::size_t>(c)] = std::move(acc);
      }
    }
  }

  // Distribute pass: finished sums travel n-1 -> 0 -> 1 -> ... -> n-2.
  for (std::int64_t c = 0; c < chunks; ++c) {
    const std::int64_t b = chunk_begin(c), e = chunk_begin(c + 1);
    const auto tag = tags::collective(key, seq, kPhaseDistribute, static_cast<int>(c));
    Tensor sum_c;
    if (my_index_ == n - 1) {
      sum_c = std::move(summed[static_cast<std::size_t>(c)]);
      ep_.send(make_msg(tag, member(0), sum_c, MsgKind::GradientContribution));
    } else {
      const int prev = (my_index_ == 0) ? member(n - 1) : member(my_index_ - 1);
      Message got = ep_.recv(prev, tag);
      sum_c = std::move(got.payload);
      if (my_index_ + 1 <= n - 2) {
        ep_.send(make_msg(tag, member(my_index_ + 1), sum_c, MsgKind::GradientContribution));
      }
    }
    std::copy(sum_c.storage().begin(), sum_c.storage().end(), result.storage().begin() + b);
  }
  return result;
}

Tensor Communicator::allreduce(const Tensor& payload, ReduceOp op) {
  if (payload.empty()) throw ShapeError("allreduce payload must be non-empty");
  exchange_shape_headers(payload);
  Tensor result = ring_allreduce_sum(payload);
  ++seq_;
  if (op == ReduceOp::Mean) {
    scale_inplace(result, 1.0 / static_cast<double>(group_.size()));
  }
  return result;
}

Tensor Communicator::broadcast(int root, const Tensor& payload) {
  const int root_idx = group_.index_of(root);
  const int n = group_.size();
  const auto tag = tags::collective(group_key(group_), seq_, kPhaseBroadcast, 0);
  ++seq_;
  if (n == 1) return payload;
  if (my_index_ == root_idx) {
    for (int i = 0; i < n; ++i) {
      if (i == root_idx) continue;
      ep_.send(make_msg(tag, group_.members[static_cast<std::size_t>(i)], payload,
                        MsgKind::GradientContribution));
    }
    return payload;
  }
  Message got = ep_.recv(root, tag);
  return std::move(got.payload);
}

Communicator::AllreduceHandle Communicator::start_allreduce(Tensor payload, ReduceOp op) {
  return AllreduceHandle(this, std::move(payload), op);
}

Tensor Communicator::AllreduceHandle::wait() {
  if (done_) throw Error("allreduce handle awaited twice");
  done_ = true;
  return comm_->allreduce(payload_, op_);
}

void Communicator::barrier() {
  const int n = group_.size();
  const std::uint32_t seq = seq_;
  ++seq_;
  if (n == 1) return;
  const int key = group_key(group_);
  const auto member = [&](int idx) { return group_.members[static_cast<std::size_t>(idx)]; };
  const auto up = tags::collective(key, seq, kPhaseBarrierUp, 0);
  const auto down = tags::collective(key, seq, kPhaseBarrierDown, 0);
  // Up pass 0 -> n-1 proves everyone entered; down pass n-1 -> 0 releases.
  if (my_index_ > 0) ep_.recv(member(my_index_ - 1), up);
  if (my_index_ + 1 < n) {
    ep_.send(make_msg(up, member(my_index_ + 1), Tensor(), MsgKind::ControlBarrier));
    ep_.recv(member(my_index_ + 1), down);
  }
  if (my_index_ > 0) {
    ep_.send(make_msg(down, member(my_index_ - 1), Tensor(), MsgKind::ControlBarrier));
  }
}

}  // namespace laminar
