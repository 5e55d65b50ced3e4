// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <unordered_map>

#include "laminar/comm.hpp"

namespace laminar {

/// Thread-safe mailbox holding one rank's undelivered messages, grouped by
/// source rank. take() matches on (src, tag) — FIFO among equal tags — and
/// blocks until a match arrives, invoking `idle` between waits so the
/// caller can keep draining its own outgoing queues.
class MessageStore {
 public:
  explicit MessageStore(int owner_rank) : owner_(owner_rank) {}

  void deposit(Message msg);

  /// Throws TimeoutError after `timeout_sec`, TransportError once closed.
  Message take(int src, std::uint64_t tag, double timeout_sec,
               const std::function<void()>& idle);

  bool try_take(int src, std::uint64_t tag, Message* out);

  /// Wakes all blocked takers; subsequent takes fail fast.
  void close(const std::string& reason);

  std::size_t pending() const;

 private:
  bool match_locked(int src, std::uint64_t tag, Message* out);

  const int owner_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::unordered_map<int, std::deque<Message>> by_src_;
  bool closed_ = false;
  std::string close_reason_;
};

}  // namespace laminar
