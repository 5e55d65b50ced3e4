// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/message_store.hpp"

#include <chrono>

#include "laminar/error.hpp"

namespace laminar {

void MessageStore::deposit(Message msg) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    by_src_[msg.src].push_back(std::move(msg));
  }
  cv_.notify_all();
}

bool MessageStore::match_locked(int src, std::uint64_t tag, Message* out) {
  auto it = by_src_.find(src);
  if (it == by_src_.end()) return false;
  auto& dq = it->second;
  for (auto mit = dq.begin(); mit != dq.end(); ++mit) {
    if (mit->tag == tag) {
      *out = std::move(*mit);
      dq.erase(mit);
      return true;
    }
  }
  return false;
}

Message MessageStore::take(int src, std::uint64_t tag, double timeout_sec,
                           const std::function<void()>& idle) {
  using clock = std::chrono::steady_clock;
  const auto deadline = clock::now() + std::chrono::duration_cast<clock::duration>(
                                           std::chrono::duration<double>(timeout_sec));
  Message out;
  for (;;) {
    {
      std::unique_lock<std::mutex> lk(mu_);
      if (match_locked(src, tag, &out)) return out;
      if (closed_) {
        throw TransportError(msg("rank ", owner_, ": transport closed while waiting for tag ",
                                 tag, " from rank ", src, " (", close_reason_, ")"));
      }
      cv_.wait_for(lk, std::chrono::milliseconds(1));
      if (match_locked(src, tag, &out)) return out;
      if (closed_) {
        throw TransportError(msg("rank ", owner_, ": transport closed while waiting for tag ",
                                 tag, " from rank ", src, " (", close_reason_, ")"));
      }
    }
    if (idle) idle();
    if (clock::now() >= deadline) {
      throw TimeoutError(msg("rank ", owner_, ": timed out after ", timeout_sec,
                             "s waiting for tag ", tag, " from rank ", src));
    }
  }
}

bool MessageStore::try_take(int src, std::uint64_t tag, Message* out) {
  std::lock_guard<std::mutex> lk(mu_);
  return match_locked(src, tag, out);
}

void MessageStore::close(const std::string& reason) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    closed_ = true;
    close_reason_ = reason;
  }
  cv_.notify_all();
}

std::size_t MessageStore::pending() const {
  std::lock_guard<std::mutex> lk(mu_);
  std::size_t n = 0;
  for (const auto& [src, dq] : by_src_) n += dq.size();
  return n;
}

}  // namespace laminar
