// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "laminar/comm.hpp"
#include "laminar/comm_sim.hpp"
#include "laminar/dataset.hpp"
#include "laminar/model.hpp"

namespace laminar {

enum class Strategy { Sequential, Model, Data, Hybrid };

Strategy parse_strategy(const std::string& name);
const char* strategy_name(Strategy s);

/// (epoch, learning rate) milestones; the last milestone at or before the
/// current epoch wins.
using LrSchedule = std::vector<std::pair<int, double>>;

double lr_at(const LrSchedule& schedule, int epoch);

/// Parses "0:0.1,10:0.01" into a schedule.
LrSchedule parse_lr_schedule(const std::string& text);

struct TrainConfig {
  Strategy strategy = Strategy::Sequential;
  int num_partitions = 1;
  int num_replicas = 1;
  int pipeline_stages = 1;
  /// Rows processed per replica per optimizer step. Every strategy consumes
  /// effective_batch() rows per step, so runs with equal seeds and equal
  /// effective batches are comparable step for step.
  int batch_size = 32;
  int epochs = 1;
  LrSchedule lr_schedule{{0, 0.05}};
  std::uint64_t seed = 1;
  /// Per-channel in-flight message bound (simulated transport).
  int buffer_capacity = 64;
  double comm_timeout_sec = 30.0;
  /// If > 0, stop after this many optimizer steps regardless of epochs.
  int max_steps = 0;
  bool evaluate = true;

  int effective_batch() const { return batch_size * num_replicas; }
  /// Throws ConfigError on inconsistent settings (strategy/partition
  /// mismatches, batch not divisible by stages, bad schedule, ...).
  void validate() const;
};

struct StepMetrics {
  int step = 0;  // 1-based
  int epoch = 0;
  double loss = 0.0;
  double images_per_sec = 0.0;
  double wall_ms = 0.0;
};

struct FitResult {
  std::vector<StepMetrics> metrics;  // populated on rank 0
  ModelGraph model;                  // rank 0: gathered full model
  double final_loss = 0.0;
  double test_accuracy = -1.0;  // -1 when not evaluated
};

/// Observation points for tests. `on_step` runs on every rank after its
/// optimizer step, possibly concurrently across ranks; `checksum` covers
/// the rank's own partition parameters only. `loss` is NaN on ranks that
/// do not own the loss.
struct FitHooks {
  std::function<void(int rank, int step, double loss, std::uint64_t checksum)> on_step;
};

/// Single-process reference: one full effective batch per step, no
/// communication. The distributed paths are verified against this.
FitResult train_sequential(const ModelGraph& model0, const Dataset& train, const Dataset* test,
                           const TrainConfig& cfg);

/// Accuracy of argmax(logits) over `data`, evaluated in row chunks of
/// `batch` (last chunk may be short).
double evaluate_seq(const ModelGraph& model, const Dataset& data, std::int64_t batch);

/// Runs one rank of a distributed fit over an existing transport endpoint.
/// Every rank passes the same initial model, full dataset, and config.
/// Rank 0's result carries the metrics, the gathered model, and the test
/// accuracy; other ranks return only their local view.
FitResult fit_rank(Endpoint& ep, const ModelGraph& model0, const Dataset& train,
                   const Dataset* test, const TrainConfig& cfg, const FitHooks* hooks = nullptr);

/// Spawns all ranks as threads over an in-process simulated transport and
/// returns rank 0's result. If `world` is given it must match the config's
/// world size (lets tests enable tracing); otherwise one is created with
/// cfg.buffer_capacity. The first non-timeout failure is rethrown.
FitResult fit_sim(const ModelGraph& model0, const Dataset& train, const Dataset* test,
                  const TrainConfig& cfg, const FitHooks* hooks = nullptr,
                  SimWorld* world = nullptr);

}  // namespace laminar
