// SPDX-License-Identifier: Apache-2.0
//
// Microbenchmarks for the in-process transport: point-to-point round trips
// and ring allreduce at several payload sizes and group sizes.

#include <benchmark/benchmark.h>

#include <thread>
#include <vector>

#include "laminar/comm.hpp"
#include "laminar/comm_sim.hpp"
#include "laminar/tensor.hpp"

namespace {

laminar::Tensor payload_of(std::int64_t n, double fill) {
  return laminar::Tensor::full({n}, fill);
}

// One round trip per iteration. A helper thread echoes every Activation
// message back and exits on the first ControlBarrier-kind message.
void BM_PingPong(benchmark::State& state) {
  const std::int64_t n = state.range(0);
  laminar::SimWorld world(2);
  auto ep0 = world.endpoint(0);
  auto ep1 = world.endpoint(1);
  const std::uint64_t tag = laminar::tags::edge(0, 1, 0);

  std::thread echo([&] {
    for (;;) {
      laminar::Message m = ep1->recv(0, tag);
      if (m.kind == laminar::MsgKind::ControlBarrier) return;
      m.src = 1;
      m.dst = 0;
      ep1->send(std::move(m));
    }
  });

  laminar::Tensor t = payload_of(n, 0.5);
  for (auto _ : state) {
    laminar::Message m;
    m.kind = laminar::MsgKind::Activation;
    m.tag = tag;
    m.src = 0;
    m.dst = 1;
    m.payload = t;
    ep0->send(std::move(m));
    laminar::Message back = ep0->recv(1, tag);
    benchmark::DoNotOptimize(back.payload.data());
  }

  laminar::Message stop;
  stop.kind = laminar::MsgKind::ControlBarrier;
  stop.tag = tag;
  stop.src = 0;
  stop.dst = 1;
  ep0->send(std::move(stop));
  echo.join();
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * n * 8 * 2);
}
BENCHMARK(BM_PingPong)->Arg(8)->Arg(1024)->Arg(65536);

// Full allreduce across `ranks` members, one collective per iteration.
// Rank 0 runs inside the benchmark loop; helpers follow a 1-element
// continue/stop broadcast before each round, so every member issues the
// same collective sequence. The control broadcast is part of the measured
// time; it is negligible against the payload sizes used here.
void BM_RingAllreduce(benchmark::State& state) {
  const int ranks = static_cast<int>(state.range(0));
  const std::int64_t n = state.range(1);

  laminar::SimWorld world(ranks);
  std::vector<std::unique_ptr<laminar::Endpoint>> eps;
  for (int r = 0; r < ranks; ++r) eps.push_back(world.endpoint(r));

  laminar::RankGroup group;
  group.purpose = laminar::GroupPurpose::World;
  for (int r = 0; r < ranks; ++r) group.members.push_back(r);

  std::vector<std::thread> helpers;
  for (int r = 1; r < ranks; ++r) {
    helpers.emplace_back([&, r] {
      laminar::Communicator comm(*eps[static_cast<std::size_t>(r)], group);
      laminar::Tensor mine = payload_of(n, static_cast<double>(r));
      for (;;) {
        laminar::Tensor go = comm.broadcast(0, laminar::Tensor({1}));
        if (go.at(0) == 0.0) return;
        laminar::Tensor out = comm.allreduce(mine, laminar::ReduceOp::Sum);
        benchmark::DoNotOptimize(out.data());
      }
    });
  }

  laminar::Communicator comm(*eps[0], group);
  laminar::Tensor mine = payload_of(n, 0.0);
  for (auto _ : state) {
    comm.broadcast(0, laminar::Tensor({1}, {1.0}));
    laminar::Tensor out = comm.allreduce(mine, laminar::ReduceOp::Sum);
    benchmark::DoNotOptimize(out.data());
  }
  comm.broadcast(0, laminar::Tensor({1}, {0.0}));
  for (auto& h : helpers) h.join();
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations()) * n * 8);
}
BENCHMARK(BM_RingAllreduce)
    ->Args({2, 1024})
    ->Args({2, 65536})
    ->Args({4, 1024})
    ->Args({4, 65536})
    ->Args({8, 16384});

}  // namespace

BENCHMARK_MAIN();
