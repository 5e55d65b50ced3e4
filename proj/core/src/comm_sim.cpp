// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/comm_sim.hpp"

#include <chrono>

#include "laminar/error.hpp"

namespace laminar {

namespace {

void check_peer(int rank, int peer, int world, const char* what) {
  if (peer < 0 || peer >= world) {
    throw TransportError(msg("rank ", rank, ": ", what, " with unknown rank ", peer,
                             " (world size ", world, ")"));
  }
  if (peer == rank) {
    throw TransportError(msg("rank ", rank, ": ", what, " with itself"));
  }
}

}  // namespace

class SimEndpoint final : public Endpoint {
 public:
  SimEndpoint(SimWorld* world, int rank) : world_(world), rank_(rank) {}

  int rank() const override { return rank_; }
  int world_size() const override { return world_->world_; }

  void send(Message m) override {
    prepare(m, "send");
    using clock = std::chrono::steady_clock;
    const auto deadline = clock::now() + std::chrono::duration_cast<clock::duration>(
                                             std::chrono::duration<double>(timeout_));
    const std::size_t chan = channel_index(rank_, m.dst);
    {
      std::unique_lock<std::mutex> lk(world_->mu_);
      ++world_->stats_.sends_total;
      if (world_->in_flight_[chan] >= world_->capacity_) ++world_->stats_.sends_blocked;
      while (world_->in_flight_[chan] >= world_->capacity_) {
        if (world_->closed_) throw TransportError(msg("rank ", rank_, ": world closed in send"));
        if (world_->cap_cv_.wait_until(lk, deadline) == std::cv_status::timeout) {
          throw TimeoutError(msg("rank ", rank_, ": send to rank ", m.dst, " tag ", m.tag,
                                 " blocked over ", timeout_, "s on a full buffer (capacity ",
                                 world_->capacity_, ")"));
        }
      }
      if (world_->closed_) throw TransportError(msg("rank ", rank_, ": world closed in send"));
      ++world_->in_flight_[chan];
      world_->record(TraceEntry::Event::Deposit, m);
    }
    world_->stores_[static_cast<std::size_t>(m.dst)]->deposit(std::move(m));
  }

  bool try_send(Message& m) override {
    prepare(m, "send");
    const std::size_t chan = channel_index(rank_, m.dst);
    bool took_slot = false;
    {
      std::lock_guard<std::mutex> lk(world_->mu_);
      if (world_->closed_) throw TransportError(msg("rank ", rank_, ": world closed in send"));
      if (world_->in_flight_[chan] >= world_->capacity_) {
        ++world_->stats_.try_send_full;
      } else {
        ++world_->stats_.sends_total;
        ++world_->in_flight_[chan];
        world_->record(TraceEntry::Event::Deposit, m);
        took_slot = true;
      }
    }
    if (!took_slot) return false;
    const int dst = m.dst;
    world_->stores_[static_cast<std::size_t>(dst)]->deposit(std::move(m));
    return true;
  }

  Message recv(int src, std::uint64_t tag) override { return recv_idle(src, tag, nullptr); }

  Message recv_idle(int src, std::uint64_t tag, const std::function<void()>& idle) override {
    check_peer(rank_, src, world_->world_, "recv");
    Message m = world_->stores_[static_cast<std::size_t>(rank_)]->take(src, tag, timeout_, idle);
    {
      std::lock_guard<std::mutex> lk(world_->mu_);
      --world_->in_flight_[channel_index(src, rank_)];
      ++world_->stats_.messages_taken;
      world_->record(TraceEntry::Event::Take, m);
    }
    world_->cap_cv_.notify_all();
    return m;
  }

  void set_timeout(double seconds) override { timeout_ = seconds; }
  double timeout() const override { return timeout_; }

  void close() override {}  // world-owned; nothing per-endpoint

 private:
  void prepare(Message& m, const char* what) {
    check_peer(rank_, m.dst, world_->world_, what);
    m.src = rank_;
  }

  std::size_t channel_index(int src, int dst) const {
    return static_cast<std::size_t>(src) * static_cast<std::size_t>(world_->world_) +
           static_cast<std::size_t>(dst);
  }

  SimWorld* world_;
  int rank_;
  double timeout_ = 30.0;
};

SimWorld::SimWorld(int world_size, int capacity) : world_(world_size), capacity_(capacity) {
  if (world_size < 1) throw TransportError("world size must be >= 1");
  if (capacity < 1) throw TransportError("buffer capacity must be >= 1");
  for (int r = 0; r < world_size; ++r) stores_.push_back(std::make_unique<MessageStore>(r));
  in_flight_.assign(static_cast<std::size_t>(world_size) * static_cast<std::size_t>(world_size),
                    0);
}

std::unique_ptr<Endpoint> SimWorld::endpoint(int rank) {
  if (rank < 0 || rank >= world_) {
    throw TransportError(msg("endpoint rank ", rank, " outside world of ", world_));
  }
  return std::make_unique<SimEndpoint>(this, rank);
}

void SimWorld::enable_trace(bool record_payloads) {
  std::lock_guard<std::mutex> lk(mu_);
  trace_on_ = true;
  trace_payloads_ = record_payloads;
}

void SimWorld::close(const std::string& reason) {
  {
    std::lock_guard<std::mutex> lk(mu_);
    closed_ = true;
  }
  cap_cv_.notify_all();
  for (auto& s : stores_) s->close(reason);
}

SimStats SimWorld::stats() const {
  std::lock_guard<std::mutex> lk(mu_);
  return stats_;
}

std::vector<TraceEntry> SimWorld::trace() const {
  std::lock_guard<std::mutex> lk(mu_);
  return trace_;
}

std::vector<TraceEntry> SimWorld::takes_for(int rank) const {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<TraceEntry> out;
  for (const auto& e : trace_) {
    if (e.event == TraceEntry::Event::Take && e.dst == rank) out.push_back(e);
  }
  return out;
}

void SimWorld::record(TraceEntry::Event ev, const Message& m) {
  if (!trace_on_) return;
  TraceEntry e;
  e.event = ev;
  e.kind = m.kind;
  e.tag = m.tag;
  e.src = m.src;
  e.dst = m.dst;
  if (trace_payloads_) e.payload = m.payload;
  trace_.push_back(std::move(e));
}

}  // namespace laminar
