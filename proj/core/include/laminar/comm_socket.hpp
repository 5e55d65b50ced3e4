// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "laminar/comm.hpp"

namespace laminar {

struct SocketOptions {
  /// "host:port". Rank 0 listens here; all others connect to it. Port 0
  /// lets the OS pick (single-machine tests; see bound_port_out).
  std::string rendezvous;
  double connect_timeout_sec = 30.0;
  /// If non-null, rank 0 writes the rendezvous port it actually bound.
  int* bound_port_out = nullptr;
};

/// Builds one rank of a multi-process TCP world: rendezvous at rank 0,
/// full-mesh connections, one reader thread per peer feeding a mailbox.
/// Frames are length-prefixed big-endian (see docs/wire_protocol.md).
/// There is no send-side buffer bound; TCP backpressure throttles senders.
std::unique_ptr<Endpoint> connect_socket_world(int rank, int world_size,
                                               const SocketOptions& options);

/// Wire-format encode/decode, exposed so tests can pin exact byte layout.
std::vector<std::uint8_t> encode_frame(const Message& m);
Message decode_frame(const std::uint8_t* data, std::size_t size);

}  // namespace laminar
