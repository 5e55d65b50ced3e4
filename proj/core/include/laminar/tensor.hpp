// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace laminar {

/// Dense row-major tensor of doubles, rank 1 through 4.
///
/// All arithmetic used by training runs through the free functions below.
/// Each reduction has one written accumulation order and the library is
/// compiled without FMA contraction, so results are bitwise reproducible
/// across runs and across process layouts.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::int64_t> shape);
  Tensor(std::vector<std::int64_t> shape, std::vector<double> data);

  static Tensor zeros(std::vector<std::int64_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::int64_t> shape, double value);

  const std::vector<std::int64_t>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::int64_t dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }

  double& at(std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double at(std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }
  double& at(std::int64_t r, std::int64_t c) {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }
  double at(std::int64_t r, std::int64_t c) const {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }

  /// Returns a tensor sharing no storage, with the same data and a new shape
  /// of identical element count.
  Tensor reshaped(std::vector<std::int64_t> shape) const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

 private:
  std::vector<std::int64_t> shape_;
  std::vector<double> data_;
};

std::string shape_str(const std::vector<std::int64_t>& shape);
std::string shape_str(const Tensor& t);

/// Throws ShapeError naming both shapes unless they match.
void check_same_shape(const Tensor& a, const Tensor& b, const char* op);

// --- matrix products (2-D operands) --------------------------------------

/// C = A ([m,k]) * B ([k,n]).
Tensor matmul(const Tensor& a, const Tensor& b);
/// C = A^T ([k,m]) * B ([k,n])  ->  [m,n].
Tensor matmul_transpose_a(const Tensor& a, const Tensor& b);
/// C = A ([m,k]) * B^T ([n,k])  ->  [m,n].
Tensor matmul_transpose_b(const Tensor& a, const Tensor& b);

// --- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
/// dst += src (in place).
void accumulate(Tensor& dst, const Tensor& src);
void scale_inplace(Tensor& t, double s);

Tensor relu(const Tensor& x);
/// dx = dy where x > 0 else 0.
Tensor relu_grad(const Tensor& x, const Tensor& dy);

/// rows of `x` ([m,n]) each get `row` ([n]) added.
Tensor add_row_broadcast(const Tensor& x, const Tensor& row);
/// Column sums of a [m,n] tensor -> [n]. Accumulates rows top to bottom.
Tensor col_sum(const Tensor& x);

// --- loss -----------------------------------------------------------------

struct SoftmaxXentResult {
  double loss = 0.0;    // mean over rows
  Tensor probs;         // softmax(logits), [m,n]
  Tensor grad_logits;   // d(mean loss)/d logits, [m,n]
};

/// Softmax cross-entropy against one-hot labels given as class indices.
/// Uses max-subtraction for stability and rejects non-finite logits.
SoftmaxXentResult softmax_xent(const Tensor& logits, const std::vector<std::int64_t>& labels);

/// Same, with labels as a one-hot [m,n] tensor (each row exactly one 1).
SoftmaxXentResult softmax_xent(const Tensor& logits, const Tensor& labels_onehot);

Tensor one_hot(const std::vector<std::int64_t>& labels, std::int64_t classes);

// --- utilities --------------------------------------------------------------

/// FNV-1a over the raw little-endian bytes of the elements.
std::uint64_t fnv1a_checksum(const Tensor& t);
std::uint64_t fnv1a_combine(std::uint64_t h, std::uint64_t value);

/// max_i |a_i - b_i| / max(1, max_i |a_i|); shapes must match.
double rel_diff(const Tensor& a, const Tensor& b);

}  // namespace laminar
