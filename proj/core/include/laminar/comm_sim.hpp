// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <memory>
#include <mutex>
#include <vector>

#include "laminar/comm.hpp"
#include "laminar/message_store.hpp"

namespace laminar {

struct SimStats {
  std::uint64_t sends_total = 0;
  std::uint64_t sends_blocked = 0;   // sends that had to wait for buffer space
  std::uint64_t try_send_full = 0;   // try_send refusals
  std::uint64_t messages_taken = 0;
};

struct TraceEntry {
  enum class Event { Deposit, Take };
  Event event = Event::Deposit;
  MsgKind kind = MsgKind::Activation;
  std::uint64_t tag = 0;
  int src = -1;
  int dst = -1;
  Tensor payload;  // copied only when payload recording is on
};

/// In-process world: one mailbox per rank, bounded per-(src,dst) channels.
/// A send blocks while its channel already holds `capacity` undelivered
/// messages; the space frees when the receiver takes one. Endpoints are
/// handed to exactly one worker thread each; the world must outlive them.
class SimWorld {
 public:
  explicit SimWorld(int world_size, int capacity = 64);

  int world_size() const { return world_; }
  int capacity() const { return capacity_; }

  std::unique_ptr<Endpoint> endpoint(int rank);

  /// Record per-message trace entries; with payloads if asked (test use).
  void enable_trace(bool record_payloads);

  /// Fails all pending and future operations.
  void close(const std::string& reason);

  SimStats stats() const;
  std::vector<TraceEntry> trace() const;
  /// The consumption sequence of one receiver (deterministic across runs).
  std::vector<TraceEntry> takes_for(int rank) const;

 private:
  friend class SimEndpoint;

  void record(TraceEntry::Event ev, const Message& m);

  const int world_;
  const int capacity_;
  std::vector<std::unique_ptr<MessageStore>> stores_;

  mutable std::mutex mu_;  // channels, stats, trace
  std::condition_variable cap_cv_;
  std::vector<int> in_flight_;  // index src * world + dst
  bool closed_ = false;
  bool trace_on_ = false;
  bool trace_payloads_ = false;
  SimStats stats_;
  std::vector<TraceEntry> trace_;
};

}  // namespace laminar
