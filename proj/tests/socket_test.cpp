// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
//
// Socket transport tests: exact wire-format byte layout, in-process
// multi-threaded worlds over real TCP connections, collective parity with
// the simulated transport, and rendezvous failure handling.

#include <gtest/gtest.h>

#include <cstring>
#include <thread>
#include <vector>

#include "laminar/comm.hpp"
#include "laminar/comm_sim.hpp"
#include "laminar/comm_socket.hpp"
#include "laminar/error.hpp"
#include "support/test_util.hpp"

using namespace laminar;
using namespace laminar::testing;

namespace {

/// Starts `world` threads, each building one socket endpoint against a
/// shared OS-picked rendezvous port, then runs fn(rank, endpoint).
void run_socket_ranks(int world, const std::function<void(int, Endpoint&)>& fn) {
  int port = 0;
  SocketOptions opt0;
  opt0.rendezvous = "127.0.0.1:0";
  opt0.connect_timeout_sec = 20.0;
  opt0.bound_port_out = &port;

  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(world));
  std::vector<std::unique_ptr<Endpoint>> eps(static_cast<std::size_t>(world));

  threads.emplace_back([&] {
    try {
      eps[0] = connect_socket_world(0, world, opt0);
      fn(0, *eps[0]);
      eps[0]->close();
    } catch (...) {
      errors[0] = std::current_exception();
    }
  });
  // The rendezvous port is written before rank 0 starts accepting; poll
  // until it appears, then start the other ranks against it.
  while (port == 0) std::this_thread::yield();
  for (int r = 1; r < world; ++r) {
    threads.emplace_back([&, r] {
      try {
        SocketOptions opt;
        opt.rendezvous = "127.0.0.1:" + std::to_string(port);
        opt.connect_timeout_sec = 20.0;
        eps[static_cast<std::size_t>(r)] = connect_socket_world(r, world, opt);
        fn(r, *eps[static_cast<std::size_t>(r)]);
        eps[static_cast<std::size_t>(r)]->close();
      } catch (...) {
        errors[static_cast<std::size_t>(r)] = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

Message make_message(MsgKind kind, std::uint64_t tag, int src, int dst, Tensor payload) {
  Message m;
  m.kind = kind;
  m.tag = tag;
  m.src = src;
  m.dst = dst;
  m.payload = std::move(payload);
  return m;
}

}  // namespace

TEST(WireFormatTest, EncodedFrameMatchesPinnedByteLayout) {
  // One message, every byte accounted for: length prefix, kind, tag, src,
  // dst, shape rank, dims, then big-endian IEEE-754 payload.
  Message m = make_message(MsgKind::PartialError, 0x0102030405060708ULL, 3, 9,
                           Tensor({1, 2}, {1.0, -2.0}));
  const auto bytes = encode_frame(m);

  const std::vector<std::uint8_t> want = {
      // length: bytes after the prefix = 21 header + 8 dims*2 + 16 payload = 53
      0x00, 0x00, 0x00, 0x35,
      // kind PartialError = 1
      0x01,
      // tag big-endian
      0x01, 0x02, 0x03, 0x04, 0x05, 0x06, 0x07, 0x08,
      // src = 3, dst = 9
      0x00, 0x00, 0x00, 0x03, 0x00, 0x00, 0x00, 0x09,
      // ndims = 2, dims 1 and 2 as 8-byte big-endian
      0x00, 0x00, 0x00, 0x02,
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x01,
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x02,
      // 1.0 and -2.0, IEEE-754 big-endian
      0x3F, 0xF0, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
      0xC0, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00,
  };
  ASSERT_EQ(bytes.size(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    EXPECT_EQ(bytes[i], want[i]) << "byte " << i;
  }
}

TEST(WireFormatTest, RoundTripPreservesEveryField) {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::int64_t> shape;
    const int ndims = 1 + rng.below_int(4);
    for (int i = 0; i < ndims; ++i) shape.push_back(1 + rng.below_int(5));
    Message m = make_message(static_cast<MsgKind>(rng.below_int(4)), rng.next_u64(),
                             rng.below_int(100), rng.below_int(100),
                             random_tensor(rng, shape, -1e6, 1e6));
    if (m.kind == MsgKind::ControlBarrier) m.payload = Tensor();
    const auto bytes = encode_frame(m);
    // decode_frame takes the body, without the 4-byte length prefix.
    Message back = decode_frame(bytes.data() + 4, bytes.size() - 4);
    EXPECT_EQ(back.kind, m.kind);
    EXPECT_EQ(back.tag, m.tag);
    EXPECT_EQ(back.src, m.src);
    EXPECT_EQ(back.dst, m.dst);
    ASSERT_TRUE(back.payload.same_shape(m.payload));
    for (std::int64_t i = 0; i < m.payload.size(); ++i) {
      EXPECT_EQ(back.payload.at(i), m.payload.at(i));  // bitwise through BE encoding
    }
  }
}

TEST(WireFormatTest, EmptyShapeEncodesControlBarrier) {
  Message m = make_message(MsgKind::ControlBarrier, 7, 0, 1, Tensor());
  const auto bytes = encode_frame(m);
  Message back = decode_frame(bytes.data() + 4, bytes.size() - 4);
  EXPECT_EQ(back.kind, MsgKind::ControlBarrier);
  EXPECT_TRUE(back.payload.empty());
}

TEST(WireFormatTest, TruncatedFramesAreRejected) {
  Message m = make_message(MsgKind::Activation, 1, 0, 1, Tensor({2}, {1.0, 2.0}));
  const auto bytes = encode_frame(m);
  EXPECT_THROW(decode_frame(bytes.data() + 4, bytes.size() - 5), TransportError);
  EXPECT_THROW(decode_frame(bytes.data() + 4, 3), TransportError);
}

TEST(SocketWorldTest, TwoRanksExchangeBitwisePayloads) {
  Rng rng(2);
  const Tensor payload = random_tensor(rng, {4, 3});
  run_socket_ranks(2, [&](int rank, Endpoint& ep) {
    EXPECT_EQ(ep.rank(), rank);
    EXPECT_EQ(ep.world_size(), 2);
    const std::uint64_t tag = tags::edge(1, 2, 0);
    if (rank == 0) {
      ep.send(make_message(MsgKind::Activation, tag, 0, 1, payload));
      Message echo = ep.recv(1, tag);
      for (std::int64_t i = 0; i < payload.size(); ++i) {
        EXPECT_EQ(echo.payload.at(i), payload.at(i));
      }
    } else {
      Message m = ep.recv(0, tag);
      EXPECT_EQ(m.src, 0);
      ASSERT_TRUE(m.payload.same_shape(payload));
      for (std::int64_t i = 0; i < payload.size(); ++i) {
        EXPECT_EQ(m.payload.at(i), payload.at(i));
      }
      m.src = 1;
      m.dst = 0;
      ep.send(std::move(m));
    }
  });
}

TEST(SocketWorldTest, FourRankFullMeshDelivers) {
  // Every rank sends one tagged message to every other rank, then receives
  // from every other rank: exercises all 12 directed connections.
  run_socket_ranks(4, [&](int rank, Endpoint& ep) {
    for (int dst = 0; dst < 4; ++dst) {
      if (dst == rank) continue;
      ep.send(make_message(MsgKind::Activation, tags::edge(rank, dst, 0), rank, dst,
                           Tensor({1}, {rank * 10.0 + dst})));
    }
    for (int src = 0; src < 4; ++src) {
      if (src == rank) continue;
      Message m = ep.recv(src, tags::edge(src, rank, 0));
      EXPECT_EQ(m.payload.at(0), src * 10.0 + rank);
    }
  });
}

TEST(SocketWorldTest, AllreduceMatchesSimTransportBitwise) {
  Rng rng(31);
  std::vector<Tensor> contribs;
  for (int r = 0; r < 3; ++r) contribs.push_back(random_tensor(rng, {17}));

  // Reference result over the simulated transport.
  std::vector<Tensor> sim_out(3);
  {
    SimWorld world(3);
    std::vector<std::thread> threads;
    for (int r = 0; r < 3; ++r) {
      threads.emplace_back([&, r] {
        auto ep = world.endpoint(r);
        RankGroup g;
        g.purpose = GroupPurpose::AllreducePerPartition;
        g.members = {0, 1, 2};
        Communicator comm(*ep, g);
        sim_out[static_cast<std::size_t>(r)] =
            comm.allreduce(contribs[static_cast<std::size_t>(r)], ReduceOp::Mean);
      });
    }
    for (auto& t : threads) t.join();
  }

  run_socket_ranks(3, [&](int rank, Endpoint& ep) {
    RankGroup g;
    g.purpose = GroupPurpose::AllreducePerPartition;
    g.members = {0, 1, 2};
    Communicator comm(ep, g);
    Tensor out = comm.allreduce(contribs[static_cast<std::size_t>(rank)], ReduceOp::Mean);
    const Tensor& want = sim_out[static_cast<std::size_t>(rank)];
    ASSERT_TRUE(out.same_shape(want));
    for (std::int64_t i = 0; i < want.size(); ++i) EXPECT_EQ(out.at(i), want.at(i));
  });
}

TEST(SocketWorldTest, RecvTimesOutCleanly) {
  run_socket_ranks(2, [&](int rank, Endpoint& ep) {
    if (rank == 1) {
      ep.set_timeout(0.2);
      EXPECT_THROW(ep.recv(0, tags::edge(5, 6, 0)), TimeoutError);
    }
    // Both ranks meet here so rank 0 does not close while rank 1 waits.
    const std::uint64_t tag = tags::edge(9, 9, 0);
    if (rank == 0) {
      ep.send(make_message(MsgKind::ControlBarrier, tag, 0, 1, Tensor()));
    } else {
      ep.recv(0, tag);
    }
  });
}

TEST(SocketWorldTest, RendezvousTimesOutWithoutRankZero) {
  SocketOptions opt;
  opt.rendezvous = "127.0.0.1:1";  // reserved port: nothing listens here
  opt.connect_timeout_sec = 0.5;
  EXPECT_THROW(connect_socket_world(1, 2, opt), TimeoutError);
}

TEST(SocketWorldTest, SingleRankWorldNeedsNoNetwork) {
  SocketOptions opt;
  opt.rendezvous = "127.0.0.1:0";
  auto ep = connect_socket_world(0, 1, opt);
  EXPECT_EQ(ep->world_size(), 1);
  EXPECT_THROW(ep->send(make_message(MsgKind::Activation, 1, 0, 1, Tensor({1}, {1.0}))),
               TransportError);
  ep->close();
}
