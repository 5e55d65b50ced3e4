// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
//
// Transport and collective tests over the in-process simulated world:
// point-to-point contracts, bounded-buffer blocking, ring allreduce against
// a rank-order oracle, broadcast, trace determinism, and tag encoding.

#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <thread>
#include <vector>

#include "laminar/comm.hpp"
#include "laminar/comm_sim.hpp"
#include "laminar/error.hpp"
#include "support/test_util.hpp"

using namespace laminar;
using namespace laminar::testing;

namespace {

Message make_message(MsgKind kind, std::uint64_t tag, int src, int dst, Tensor payload) {
  Message m;
  m.kind = kind;
  m.tag = tag;
  m.src = src;
  m.dst = dst;
  m.payload = std::move(payload);
  return m;
}

RankGroup group_of(std::vector<int> members,
                   GroupPurpose purpose = GroupPurpose::AllreducePerPartition) {
  RankGroup g;
  g.purpose = purpose;
  g.members = std::move(members);
  return g;
}

/// Drives `fn(rank, endpoint)` on one thread per rank; rethrows the first error.
void run_ranks(SimWorld& world, const std::function<void(int, Endpoint&)>& fn) {
  const int n = world.world_size();
  std::vector<std::unique_ptr<Endpoint>> eps;
  for (int r = 0; r < n; ++r) eps.push_back(world.endpoint(r));
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    threads.emplace_back([&, r] {
      try {
        fn(r, *eps[static_cast<std::size_t>(r)]);
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
        world.close("test rank failed");
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

TEST(SimTransportTest, SendThenRecvDeliversPayloadBitwise) {
  SimWorld world(2);
  Rng rng(1);
  const Tensor payload = random_tensor(rng, {3, 4});
  run_ranks(world, [&](int rank, Endpoint& ep) {
    const std::uint64_t tag = tags::edge(1, 2, 0);
    if (rank == 0) {
      ep.send(make_message(MsgKind::Activation, tag, 0, 1, payload));
    } else {
      Message m = ep.recv(0, tag);
      EXPECT_EQ(m.kind, MsgKind::Activation);
      EXPECT_EQ(m.src, 0);
      ASSERT_TRUE(m.payload.same_shape(payload));
      for (std::int64_t i = 0; i < payload.size(); ++i) {
        EXPECT_EQ(m.payload.at(i), payload.at(i));
      }
    }
  });
}

TEST(SimTransportTest, DistinctTagsMatchInAnyReceiveOrder) {
  SimWorld world(2);
  run_ranks(world, [&](int rank, Endpoint& ep) {
    const std::uint64_t tag_a = tags::edge(1, 2, 0);
    const std::uint64_t tag_b = tags::edge(1, 2, 1);
    if (rank == 0) {
      ep.send(make_message(MsgKind::Activation, tag_a, 0, 1, Tensor({1}, {10.0})));
      ep.send(make_message(MsgKind::Activation, tag_b, 0, 1, Tensor({1}, {20.0})));
    } else {
      // Take the later tag first: tags must not cross-match.
      Message b = ep.recv(0, tag_b);
      Message a = ep.recv(0, tag_a);
      EXPECT_EQ(b.payload.at(0), 20.0);
      EXPECT_EQ(a.payload.at(0), 10.0);
    }
  });
}

TEST(SimTransportTest, SameTagPreservesFifoOrder) {
  SimWorld world(2);
  run_ranks(world, [&](int rank, Endpoint& ep) {
    const std::uint64_t tag = tags::edge(3, 4, 0);
    if (rank == 0) {
      for (int i = 0; i < 5; ++i) {
        ep.send(make_message(MsgKind::Activation, tag, 0, 1,
                             Tensor({1}, {static_cast<double>(i)})));
      }
    } else {
      for (int i = 0; i < 5; ++i) {
        EXPECT_EQ(ep.recv(0, tag).payload.at(0), static_cast<double>(i));
      }
    }
  });
}

TEST(SimTransportTest, CapacityOneBlocksSenderUntilReceiverTakes) {
  SimWorld world(2, /*capacity=*/1);
  std::atomic<int> sends_done{0};
  run_ranks(world, [&](int rank, Endpoint& ep) {
    const std::uint64_t tag = tags::edge(0, 1, 0);
    if (rank == 0) {
      ep.send(make_message(MsgKind::Activation, tag, 0, 1, Tensor({1}, {1.0})));
      sends_done.store(1);
      ep.send(make_message(MsgKind::Activation, tag, 0, 1, Tensor({1}, {2.0})));
      sends_done.store(2);
    } else {
      // Let the sender hit the full buffer before draining it.
      while (sends_done.load() < 1) std::this_thread::yield();
      std::this_thread::sleep_for(std::chrono::milliseconds(50));
      EXPECT_EQ(sends_done.load(), 1);  // second send is stuck on capacity
      EXPECT_EQ(ep.recv(0, tag).payload.at(0), 1.0);
      EXPECT_EQ(ep.recv(0, tag).payload.at(0), 2.0);
    }
  });
  EXPECT_EQ(sends_done.load(), 2);
  EXPECT_GE(world.stats().sends_blocked, 1u);
}

TEST(SimTransportTest, TrySendRefusesWhenFullAndKeepsMessage) {
  SimWorld world(2, /*capacity=*/1);
  auto ep0 = world.endpoint(0);
  auto ep1 = world.endpoint(1);
  const std::uint64_t tag = tags::edge(0, 1, 0);
  Message first = make_message(MsgKind::Activation, tag, 0, 1, Tensor({1}, {1.0}));
  ASSERT_TRUE(ep0->try_send(first));
  Message second = make_message(MsgKind::Activation, tag, 0, 1, Tensor({1}, {2.0}));
  EXPECT_FALSE(ep0->try_send(second));
  EXPECT_EQ(second.payload.at(0), 2.0);  // refused send leaves the message intact
  EXPECT_EQ(ep1->recv(0, tag).payload.at(0), 1.0);
  EXPECT_TRUE(ep0->try_send(second));
  EXPECT_EQ(ep1->recv(0, tag).payload.at(0), 2.0);
  EXPECT_GE(world.stats().try_send_full, 1u);
}

TEST(SimTransportTest, UnknownDestinationIsRejected) {
  SimWorld world(2);
  auto ep = world.endpoint(0);
  EXPECT_THROW(
      ep->send(make_message(MsgKind::Activation, 1, 0, 7, Tensor({1}, {0.0}))),
      TransportError);
  EXPECT_THROW(
      ep->send(make_message(MsgKind::Activation, 1, 0, 0, Tensor({1}, {0.0}))),
      TransportError);
}

TEST(SimTransportTest, RecvTimesOutWhenNothingArrives) {
  SimWorld world(2);
  auto ep = world.endpoint(1);
  ep->set_timeout(0.2);
  EXPECT_THROW(ep->recv(0, tags::edge(0, 1, 0)), TimeoutError);
}

TEST(SimTransportTest, CloseFailsPendingAndFutureOps) {
  SimWorld world(2);
  auto ep0 = world.endpoint(0);
  auto ep1 = world.endpoint(1);
  std::thread closer([&] {
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
    world.close("peer gone");
  });
  EXPECT_THROW(ep1->recv(0, tags::edge(0, 1, 0)), TransportError);
  closer.join();
  EXPECT_THROW(ep0->send(make_message(MsgKind::Activation, 1, 0, 1, Tensor({1}, {0.0}))),
               TransportError);
}

TEST(AllreduceTest, SingletonGroupReturnsPayloadUnchanged) {
  SimWorld world(1);
  auto ep = world.endpoint(0);
  Communicator comm(*ep, group_of({0}));
  Rng rng(3);
  const Tensor t = random_tensor(rng, {4});
  Tensor out = comm.allreduce(t, ReduceOp::Sum);
  for (std::int64_t i = 0; i < t.size(); ++i) EXPECT_EQ(out.at(i), t.at(i));
}

TEST(AllreduceTest, TwoRankMeanAveragesContributions) {
  SimWorld world(2);
  run_ranks(world, [&](int rank, Endpoint& ep) {
    Communicator comm(ep, group_of({0, 1}));
    Tensor mine({1}, {rank == 0 ? 1.0 : 3.0});
    Tensor out = comm.allreduce(mine, ReduceOp::Mean);
    EXPECT_EQ(out.at(0), 2.0);
  });
}

TEST(AllreduceTest, MatchesRankOrderStraightLineSum) {
  // 4 ranks, random 8-element tensors: the ring must reproduce the
  // left-to-right rank-order accumulation bitwise.
  SimWorld world(4);
  Rng rng(99);
  std::vector<Tensor> contribs;
  for (int r = 0; r < 4; ++r) contribs.push_back(random_tensor(rng, {8}));
  Tensor want = contribs[0];
  for (int r = 1; r < 4; ++r) want = add(want, contribs[r]);

  run_ranks(world, [&](int rank, Endpoint& ep) {
    Communicator comm(ep, group_of({0, 1, 2, 3}));
    Tensor out = comm.allreduce(contribs[static_cast<std::size_t>(rank)], ReduceOp::Sum);
    for (std::int64_t i = 0; i < want.size(); ++i) EXPECT_EQ(out.at(i), want.at(i));
  });
}

TEST(AllreduceTest, AllGroupSizesMatchOracleBitwise) {
  // Group sizes 2..8, lengths that are smaller, equal, and larger than the
  // member count (metadata-chunked ring paths all exercised).
  for (int n = 2; n <= 8; ++n) {
    for (std::int64_t len : {1, n - 1, n, 3 * n + 1, 64}) {
      if (len < 1) continue;
      SimWorld world(n);
      Rng rng(static_cast<std::uint64_t>(n * 1000 + len));
      std::vector<Tensor> contribs;
      for (int r = 0; r < n; ++r) contribs.push_back(random_tensor(rng, {len}));
      Tensor want = contribs[0];
      for (int r = 1; r < n; ++r) want = add(want, contribs[r]);

      std::vector<int> members(static_cast<std::size_t>(n));
      std::iota(members.begin(), members.end(), 0);
      run_ranks(world, [&](int rank, Endpoint& ep) {
        Communicator comm(ep, group_of(members));
        Tensor out = comm.allreduce(contribs[static_cast<std::size_t>(rank)], ReduceOp::Sum);
        for (std::int64_t i = 0; i < want.size(); ++i) {
          ASSERT_EQ(out.at(i), want.at(i)) << "n=" << n << " len=" << len << " i=" << i;
        }
      });
    }
  }
}

TEST(AllreduceTest, MeanEqualsSumThenScaleBitwise) {
  SimWorld world(3);
  Rng rng(7);
  std::vector<Tensor> contribs;
  for (int r = 0; r < 3; ++r) contribs.push_back(random_tensor(rng, {10}));
  Tensor want = contribs[0];
  for (int r = 1; r < 3; ++r) want = add(want, contribs[r]);
  scale_inplace(want, 1.0 / 3.0);

  run_ranks(world, [&](int rank, Endpoint& ep) {
    Communicator comm(ep, group_of({0, 1, 2}));
    Tensor out = comm.allreduce(contribs[static_cast<std::size_t>(rank)], ReduceOp::Mean);
    for (std::int64_t i = 0; i < want.size(); ++i) EXPECT_EQ(out.at(i), want.at(i));
  });
}

TEST(AllreduceTest, ShapeMismatchNamesBothShapes) {
  SimWorld world(2);
  std::atomic<int> failures{0};
  run_ranks(world, [&](int rank, Endpoint& ep) {
    Communicator comm(ep, group_of({0, 1}));
    Tensor mine = rank == 0 ? Tensor({4}) : Tensor({2, 3});
    try {
      comm.allreduce(mine, ReduceOp::Sum);
    } catch (const ShapeError& e) {
      const std::string what = e.what();
      EXPECT_NE(what.find("[4]"), std::string::npos) << what;
      EXPECT_NE(what.find("[2,3]"), std::string::npos) << what;
      ++failures;
    } catch (const TransportError&) {
      // The peer may tear the world down before this rank's exchange ends.
      ++failures;
    }
  });
  EXPECT_GE(failures.load(), 1);
}

TEST(AllreduceTest, EmptyPayloadIsRejected) {
  SimWorld world(1);
  auto ep = world.endpoint(0);
  Communicator comm(*ep, group_of({0}));
  EXPECT_THROW(comm.allreduce(Tensor(), ReduceOp::Sum), Error);
}

TEST(AllreduceTest, DeferredHandleMatchesImmediateCall) {
  SimWorld world(2);
  Rng rng(21);
  std::vector<Tensor> a, b;
  for (int r = 0; r < 2; ++r) {
    a.push_back(random_tensor(rng, {6}));
    b.push_back(random_tensor(rng, {3}));
  }
  Tensor want_a = add(a[0], a[1]);
  Tensor want_b = add(b[0], b[1]);

  run_ranks(world, [&](int rank, Endpoint& ep) {
    Communicator comm(ep, group_of({0, 1}));
    auto ha = comm.start_allreduce(a[static_cast<std::size_t>(rank)], ReduceOp::Sum);
    auto hb = comm.start_allreduce(b[static_cast<std::size_t>(rank)], ReduceOp::Sum);
    Tensor ra = ha.wait();
    Tensor rb = hb.wait();
    for (std::int64_t i = 0; i < want_a.size(); ++i) EXPECT_EQ(ra.at(i), want_a.at(i));
    for (std::int64_t i = 0; i < want_b.size(); ++i) EXPECT_EQ(rb.at(i), want_b.at(i));
    EXPECT_THROW(ha.wait(), Error);  // a handle joins exactly once
  });
}

TEST(BroadcastTest, MembersReturnRootPayloadBitwise) {
  SimWorld world(3);
  Rng rng(5);
  const Tensor rootval = random_tensor(rng, {5});
  run_ranks(world, [&](int rank, Endpoint& ep) {
    Communicator comm(ep, group_of({0, 1, 2}));
    Tensor mine = rank == 1 ? rootval : Tensor({5});
    Tensor out = comm.broadcast(1, mine);
    for (std::int64_t i = 0; i < rootval.size(); ++i) EXPECT_EQ(out.at(i), rootval.at(i));
  });

  // Singleton broadcast is the identity.
  SimWorld solo(1);
  auto ep = solo.endpoint(0);
  Communicator comm(*ep, group_of({0}));
  Tensor out = comm.broadcast(0, rootval);
  for (std::int64_t i = 0; i < rootval.size(); ++i) EXPECT_EQ(out.at(i), rootval.at(i));
}

TEST(BarrierTest, AllMembersLeaveAfterEveryoneEnters) {
  SimWorld world(4);
  std::atomic<int> entered{0};
  run_ranks(world, [&](int rank, Endpoint& ep) {
    Communicator comm(ep, group_of({0, 1, 2, 3}, GroupPurpose::World));
    if (rank == 2) std::this_thread::sleep_for(std::chrono::milliseconds(30));
    ++entered;
    comm.barrier();
    EXPECT_EQ(entered.load(), 4);  // nobody exits before the last arrival
  });
}

TEST(SimTraceTest, ReceiverConsumptionOrderIsDeterministicAcrossRuns) {
  auto run_once = [] {
    SimWorld world(3);
    world.enable_trace(false);
    run_ranks(world, [&](int rank, Endpoint& ep) {
      Communicator comm(ep, group_of({0, 1, 2}));
      Tensor mine({4}, {1.0 * rank, 2.0, 3.0, 4.0});
      comm.allreduce(mine, ReduceOp::Sum);
      comm.broadcast(0, mine);
      comm.barrier();
    });
    std::vector<std::vector<TraceEntry>> takes;
    for (int r = 0; r < 3; ++r) takes.push_back(world.takes_for(r));
    return takes;
  };
  auto first = run_once();
  auto second = run_once();
  ASSERT_EQ(first.size(), second.size());
  for (std::size_t r = 0; r < first.size(); ++r) {
    ASSERT_EQ(first[r].size(), second[r].size()) << "rank " << r;
    EXPECT_FALSE(first[r].empty());
    for (std::size_t i = 0; i < first[r].size(); ++i) {
      EXPECT_EQ(first[r][i].tag, second[r][i].tag);
      EXPECT_EQ(first[r][i].src, second[r][i].src);
      EXPECT_EQ(first[r][i].kind, second[r][i].kind);
    }
  }
}

TEST(TagTest, EdgeTagsRoundTripTheirFields) {
  for (int src : {0, 3, 65535}) {
    for (int dst : {1, 7, 65535}) {
      for (int stage : {0, 2, 65535}) {
        const std::uint64_t t = tags::edge(src, dst, stage);
        EXPECT_EQ(tags::edge_src(t), src);
        EXPECT_EQ(tags::edge_dst(t), dst);
        EXPECT_EQ(tags::edge_stage(t), stage);
        EXPECT_EQ(t & tags::kCollectiveBit, 0u);
        EXPECT_EQ(t & tags::kControlBit, 0u);
      }
    }
  }
  EXPECT_THROW(tags::edge(65536, 0, 0), Error);
  EXPECT_THROW(tags::edge(-1, 0, 0), Error);
}

TEST(TagTest, NamespacesNeverCollide) {
  // Edge, collective, and control tags occupy disjoint bit regions.
  const std::uint64_t e = tags::edge(65535, 65535, 65535);
  const std::uint64_t c = tags::collective(1, 0, 1, 0);
  const std::uint64_t k = tags::control(tags::Control::LossReport, 0, 1);
  EXPECT_NE(e, c);
  EXPECT_NE(e, k);
  EXPECT_NE(c, k);
  EXPECT_TRUE(c & tags::kCollectiveBit);
  EXPECT_FALSE(c & tags::kControlBit);
  EXPECT_TRUE(k & tags::kControlBit);
  EXPECT_FALSE(k & tags::kCollectiveBit);

  // Distinct collective coordinates give distinct tags.
  EXPECT_NE(tags::collective(1, 0, 1, 0), tags::collective(1, 1, 1, 0));
  EXPECT_NE(tags::collective(1, 0, 1, 0), tags::collective(1, 0, 2, 0));
  EXPECT_NE(tags::collective(1, 0, 1, 0), tags::collective(1, 0, 1, 1));
  EXPECT_NE(tags::collective(1, 0, 1, 0), tags::collective(2, 0, 1, 0));
}

TEST(RankGroupTest, ValidationRejectsMalformedGroups) {
  RankGroup empty = group_of({});
  EXPECT_THROW(empty.validate(), Error);
  RankGroup unsorted = group_of({2, 1});
  EXPECT_THROW(unsorted.validate(), Error);
  RankGroup dup = group_of({1, 1});
  EXPECT_THROW(dup.validate(), Error);
  RankGroup good = group_of({1, 3, 5});
  good.validate();
  EXPECT_EQ(good.index_of(3), 1);
  EXPECT_TRUE(good.contains(5));
  EXPECT_FALSE(good.contains(2));
  EXPECT_THROW(good.index_of(2), Error);
}
