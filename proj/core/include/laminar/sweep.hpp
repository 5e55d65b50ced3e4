// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laminar/trainer.hpp"

namespace laminar {

/// Cross product of run shapes to measure. A stage value of 0 means "one
/// row per stage", i.e. stages == batch size.
struct SweepSpec {
  std::vector<Strategy> strategies{Strategy::Model};
  std::vector<int> partitions{1};
  std::vector<int> replicas{1};
  std::vector<int> stages{1};
  std::vector<int> batches{32};
  int steps = 5;    // timed steps per run (one extra warmup step runs first)
  int repeats = 3;  // median across repeats
  std::uint64_t seed = 1;
};

struct SweepRow {
  Strategy strategy = Strategy::Sequential;
  int partitions = 1;
  int replicas = 1;
  int stages = 1;
  int batch_size = 0;
  int ebs = 0;
  double img_per_sec = 0.0;  // 0 when the cell did not run
  std::string status;        // "ok", "skipped: ...", or "failed: ..."
};

/// Times each valid combination over the simulated transport. Throughput is
/// effective-batch rows per second over the timed steps, warmup excluded,
/// median over repeats. Invalid combinations become "skipped" rows.
std::vector<SweepRow> run_sweep(const ModelGraph& model, const Dataset& train,
                                const SweepSpec& spec);

/// Fixed-column CSV: strategy,partitions,replicas,stages,batch_size,ebs,
/// img_per_sec,status.
std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace laminar
