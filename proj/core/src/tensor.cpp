// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/tensor.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include "laminar/error.hpp"

namespace laminar {

namespace {

std::int64_t shape_elems(const std::vector<std::int64_t>& shape, const char* what) {
  if (shape.empty() || shape.size() > 4) {
    throw ShapeError(msg(what, ": rank must be 1..4, got shape ", shape_str(shape)));
  }
  std::int64_t n = 1;
  for (std::int64_t d : shape) {
    if (d <= 0) throw ShapeError(msg(what, ": dims must be positive, got shape ", shape_str(shape)));
    n *= d;
  }
  return n;
}

void check_matrix(const Tensor& t, const char* op, const char* which) {
  if (t.rank() != 2) {
    throw ShapeError(msg(op, ": ", which, " must be rank 2, got shape ", shape_str(t)));
  }
}

}  // namespace

Tensor::Tensor(std::vector<std::int64_t> shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<std::size_t>(shape_elems(shape_, "Tensor")), 0.0);
}

Tensor::Tensor(std::vector<std::int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  std::int64_t n = shape_elems(shape_, "Tensor");
  if (n != static_cast<std::int64_t>(data_.size())) {
    throw ShapeError(msg("Tensor: shape ", shape_str(shape_), " wants ", n, " elements, got ",
                         data_.size()));
  }
}

Tensor Tensor::full(std::vector<std::int64_t> shape, double value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

Tensor Tensor::reshaped(std::vector<std::int64_t> shape) const {
  std::int64_t n = shape_elems(shape, "reshape");
  if (n != size()) {
    throw ShapeError(msg("reshape: shape ", shape_str(*this), " (", size(),
                         " elements) cannot become ", shape_str(shape), " (", n, " elements)"));
  }
  return Tensor(std::move(shape), data_);
}

std::string shape_str(const std::vector<std::int64_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string shape_str(const Tensor& t) { return shape_str(t.shape()); }

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(msg(op, ": shape mismatch ", shape_str(a), " vs ", shape_str(b)));
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul", "lhs");
  check_matrix(b, "matmul", "rhs");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError(msg("matmul: inner dims differ, ", shape_str(a), " vs ", shape_str(b)));
  }
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  // k is the middle loop so each c row accumulates terms in ascending-k
  // order; the inner loop over j vectorizes without reassociation.
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      const double* brow = pb + p * n;
      double* crow = pc + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor matmul_transpose_a(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul_transpose_a", "lhs");
  check_matrix(b, "matmul_transpose_a", "rhs");
  const std::int64_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError(
        msg("matmul_transpose_a: inner dims differ, ", shape_str(a), " vs ", shape_str(b)));
  }
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  // Same ascending-k accumulation as matmul, read through the transpose.
  for (std::int64_t p = 0; p < k; ++p) {
    const double* arow = pa + p * m;
    const double* brow = pb + p * n;
    for (std::int64_t i = 0; i < m; ++i) {
      const double aip = arow[i];
      double* crow = pc + i * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

Tensor matmul_transpose_b(const Tensor& a, const Tensor& b) {
  check_matrix(a, "matmul_transpose_b", "lhs");
  check_matrix(b, "matmul_transpose_b", "rhs");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw ShapeError(
        msg("matmul_transpose_b: inner dims differ, ", shape_str(a), " vs ", shape_str(b)));
  }
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  // Row-by-row dot products; each sum runs over ascending k.
  for (std::int64_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    for (std::int64_t j = 0; j < n; ++j) {
      const double* brow = pb + j * k;
      double s = 0.0;
      for (std::int64_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      pc[i * n + j] = s;
    }
  }
  return c;
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor c(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) c.at(i) = a.at(i) + b.at(i);
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor c(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) c.at(i) = a.at(i) - b.at(i);
  return c;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "hadamard");
  Tensor c(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) c.at(i) = a.at(i) * b.at(i);
  return c;
}

Tensor scale(const Tensor& a, double s) {
  Tensor c(a.shape());
  for (std::int64_t i = 0; i < a.size(); ++i) c.at(i) = a.at(i) * s;
  return c;
}

void accumulate(Tensor& dst, const Tensor& src) {
  check_same_shape(dst, src, "accumulate");
  for (std::int64_t i = 0; i < dst.size(); ++i) dst.at(i) += src.at(i);
}

void scale_inplace(Tensor& t, double s) {
  for (std::int64_t i = 0; i < t.size(); ++i) t.at(i) *= s;
}

Tensor relu(const Tensor& x) {
  Tensor y(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) y.at(i) = x.at(i) > 0.0 ? x.at(i) : 0.0;
  return y;
}

Tensor relu_grad(const Tensor& x, const Tensor& dy) {
  check_same_shape(x, dy, "relu_grad");
  Tensor dx(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) dx.at(i) = x.at(i) > 0.0 ? dy.at(i) : 0.0;
  return dx;
}

Tensor add_row_broadcast(const Tensor& x, const Tensor& row) {
  check_matrix(x, "add_row_broadcast", "lhs");
  if (row.rank() != 1 || row.dim(0) != x.dim(1)) {
    throw ShapeError(
        msg("add_row_broadcast: row ", shape_str(row), " does not match ", shape_str(x)));
  }
  Tensor y(x.shape());
  const std::int64_t m = x.dim(0), n = x.dim(1);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) y.at(i, j) = x.at(i, j) + row.at(j);
  }
  return y;
}

Tensor col_sum(const Tensor& x) {
  check_matrix(x, "col_sum", "input");
  const std::int64_t m = x.dim(0), n = x.dim(1);
  Tensor s({n});
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) s.at(j) += x.at(i, j);
  }
  return s;
}

SoftmaxXentResult softmax_xent(const Tensor& logits, const std::vector<std::int64_t>& labels) {
  check_matrix(logits, "softmax_xent", "logits");
  const std::int64_t m = logits.dim(0), n = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != m) {
    throw ShapeError(msg("softmax_xent: ", labels.size(), " labels for logits ", shape_str(logits)));
  }
  SoftmaxXentResult out;
  out.probs = Tensor({m, n});
  out.grad_logits = Tensor({m, n});
  double loss_sum = 0.0;
  const double inv_m = 1.0 / static_cast<double>(m);
  for (std::int64_t i = 0; i < m; ++i) {
    std::int64_t y = labels[static_cast<std::size_t>(i)];
    if (y < 0 || y >= n) {
      throw Error(msg("softmax_xent: label ", y, " out of range for ", n, " classes"));
    }
    double mx = logits.at(i, 0);
    for (std::int64_t j = 0; j < n; ++j) {
      double v = logits.at(i, j);
      if (!std::isfinite(v)) {
        throw Error(msg("softmax_xent: non-finite logit at row ", i, " col ", j));
      }
      if (v > mx) mx = v;
    }
    double z = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      double e = std::exp(logits.at(i, j) - mx);
      out.probs.at(i, j) = e;
      z += e;
    }
    const double inv_z = 1.0 / z;
    for (std::int64_t j = 0; j < n; ++j) out.probs.at(i, j) *= inv_z;
    // -log p_y, computed from the normalized probability.
    loss_sum += -std::log(out.probs.at(i, y));
    for (std::int64_t j = 0; j < n; ++j) {
      double g = out.probs.at(i, j);
      if (j == y) g -= 1.0;
      out.grad_logits.at(i, j) = g * inv_m;
    }
  }
  out.loss = loss_sum * inv_m;
  return out;
}

SoftmaxXentResult softmax_xent(const Tensor& logits, const Tensor& labels_onehot) {
  check_same_shape(logits, labels_onehot, "softmax_xent");
  const std::int64_t m = logits.dim(0), n = logits.dim(1);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(m), -1);
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t j = 0; j < n; ++j) {
      double v = labels_onehot.at(i, j);
      if (v == 0.0) continue;
      if (v != 1.0 || idx[static_cast<std::size_t>(i)] != -1) {
        throw Error(msg("softmax_xent: label row ", i, " is not one-hot"));
      }
      idx[static_cast<std::size_t>(i)] = j;
    }
    if (idx[static_cast<std::size_t>(i)] == -1) {
      throw Error(msg("softmax_xent: label row ", i, " is not one-hot"));
    }
  }
  return softmax_xent(logits, idx);
}

Tensor one_hot(const std::vector<std::int64_t>& labels, std::int64_t classes) {
  Tensor t({static_cast<std::int64_t>(labels.size()), classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    std::int64_t y = labels[i];
    if (y < 0 || y >= classes) {
      throw Error(msg("one_hot: label ", y, " out of range for ", classes, " classes"));
    }
    t.at(static_cast<std::int64_t>(i), y) = 1.0;
  }
  return t;
}

std::uint64_t fnv1a_combine(std::uint64_t h, std::uint64_t value) {
  for (int b = 0; b < 8; ++b) {
    h ^= (value >> (8 * b)) & 0xffULL;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t fnv1a_checksum(const Tensor& t) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::int64_t i = 0; i < t.size(); ++i) {
    std::uint64_t bits;
    double v = t.at(i);
    std::memcpy(&bits, &v, sizeof(bits));
    h = fnv1a_combine(h, bits);
  }
  return h;
}

double rel_diff(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "rel_diff");
  double max_abs = 0.0;
  double max_delta = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    max_abs = std::max(max_abs, std::abs(a.at(i)));
    max_delta = std::max(max_delta, std::abs(a.at(i) - b.at(i)));
  }
  return max_delta / std::max(1.0, max_abs);
}

}  // namespace laminar
