// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace laminar {

/// Base class of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Incompatible tensor shapes. Messages always name both shapes.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Invalid model, run, or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Transport failures: unknown rank, closed endpoint, peer failure.
class TransportError : public Error {
 public:
  using Error::Error;
};

/// A blocking communication op exceeded its deadline.
class TimeoutError : public TransportError {
 public:
  using TransportError::TransportError;
};

namespace detail {

inline void append_all(std::ostringstream&) {}

template <typename T, typename... Rest>
void append_all(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  append_all(os, rest...);
}

}  // namespace detail

/// Builds an error message from stream-formattable pieces.
template <typename... Args>
std::string msg(const Args&... args) {
  std::ostringstream os;
  detail::append_all(os, args...);
  return os.str();
}

}  // namespace laminar
