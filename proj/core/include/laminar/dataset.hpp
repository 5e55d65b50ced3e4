// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laminar/tensor.hpp"

namespace laminar {

/// Labeled classification data. Features keep the batch dimension first;
/// one label per leading-dimension row.
struct Dataset {
  Tensor features;                   // [n, <per-sample dims>]
  std::vector<std::int64_t> labels;  // class indices, size n
  std::int64_t classes = 0;

  std::int64_t n() const { return features.empty() ? 0 : features.dim(0); }
  std::vector<std::int64_t> sample_shape() const;

  /// Rows [start, start+count) as a tensor with leading dim `count`.
  Tensor feature_rows(std::int64_t start, std::int64_t count) const;
  std::vector<std::int64_t> label_rows(std::int64_t start, std::int64_t count) const;

  /// Single deterministic permutation of rows and labels together.
  void shuffle(std::uint64_t seed);
};

struct DataBundle {
  Dataset train;
  Dataset test;  // may be empty
};

/// Two interleaved-spiral-arm toy sets in 2-D; class-balanced.
Dataset make_spiral(std::int64_t n, std::int64_t classes, std::uint64_t seed);

/// Gaussian blobs around centers spaced on a circle (extra dims centered
/// at zero).
Dataset make_blobs(std::int64_t n, std::int64_t classes, std::int64_t dim, std::uint64_t seed);

/// Loads per a source spec and applies one load-time shuffle to the
/// training split:
///   "spiral:train=2000,test=400,classes=3"
///   "blobs:train=1000,test=200,classes=4,dim=8"
///   "csv:train=PATH[,test=PATH]"
///   "idx:train_images=P,train_labels=P[,test_images=P,test_labels=P]"
/// CSV wants a "label,f0,f1,..." header. IDX is the standard big-endian
/// image/label container (magic 0x803 / 0x801); pixels are scaled to [0,1].
DataBundle load_data(const std::string& spec, std::uint64_t seed);

Dataset load_csv(const std::string& path);
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace laminar
