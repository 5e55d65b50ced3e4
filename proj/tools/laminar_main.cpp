// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
//
// laminar: train a layer-DAG model with model/data/hybrid parallelism over
// an in-process simulated transport or TCP sockets, sweep throughput across
// run shapes, or inspect a partition plan.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "laminar/comm_socket.hpp"
#include "laminar/dataset.hpp"
#include "laminar/error.hpp"
#include "laminar/model_config.hpp"
#include "laminar/partition.hpp"
#include "laminar/run_io.hpp"
#include "laminar/sweep.hpp"
#include "laminar/trainer.hpp"
#include "laminar/version.hpp"

namespace {

struct RunArgs {
  std::string model_path;
  std::string data_spec;
  std::string strategy = "sequential";
  int partitions = 1;
  int replicas = 1;
  int stages = 1;
  int batch_size = 32;
  int epochs = 1;
  std::string lr_schedule = "0:0.05";
  std::uint64_t seed = 1;
  int max_steps = 0;
  int buffer_capacity = 64;
  double comm_timeout = 30.0;
  bool no_eval = false;
  std::string transport = "sim";
  int rank = 0;
  int world = 0;  // 0: derived from partitions * replicas
  std::string rendezvous;
  std::string out_path;
  std::string format = "csv";
};

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int do_run(const RunArgs& a) {
  laminar::TrainConfig cfg;
  cfg.strategy = laminar::parse_strategy(a.strategy);
  cfg.num_partitions = a.partitions;
  cfg.num_replicas = a.replicas;
  cfg.pipeline_stages = a.stages;
  cfg.batch_size = a.batch_size;
  cfg.epochs = a.epochs;
  cfg.lr_schedule = laminar::parse_lr_schedule(a.lr_schedule);
  cfg.seed = a.seed;
  cfg.max_steps = a.max_steps;
  cfg.buffer_capacity = a.buffer_capacity;
  cfg.comm_timeout_sec = a.comm_timeout;
  cfg.evaluate = !a.no_eval;
  cfg.validate();

  const int world = cfg.num_partitions * cfg.num_replicas;
  if (a.world != 0 && a.world != world) {
    throw laminar::ConfigError(laminar::msg("--world ", a.world, " does not match ",
                                            cfg.num_partitions, " partitions x ",
                                            cfg.num_replicas, " replicas = ", world));
  }
  if (a.transport != "sim" && a.transport != "socket") {
    throw laminar::ConfigError(
        laminar::msg("unknown transport '", a.transport, "' (expected sim or socket)"));
  }
  if (a.transport == "socket") {
    if (a.rendezvous.empty()) {
      throw laminar::ConfigError("socket transport needs --rendezvous host:port");
    }
    if (a.rank < 0 || a.rank >= world) {
      throw laminar::ConfigError(
          laminar::msg("--rank ", a.rank, " outside world of ", world, " ranks"));
    }
  }
  const laminar::LogFormat format = laminar::parse_format(a.format);

  laminar::ModelGraph model = laminar::load_model_config(a.model_path);
  laminar::DataBundle data = laminar::load_data(a.data_spec, a.seed);

  const bool printing_rank = a.transport != "socket" || a.rank == 0;
  if (printing_rank) {
    std::cout << "laminar " << laminar::kVersion << " (" << laminar::kBuildId << ")\n"
              << "run: model=" << a.model_path << " data=" << a.data_spec
              << " strategy=" << a.strategy << " partitions=" << cfg.num_partitions
              << " replicas=" << cfg.num_replicas << " stages=" << cfg.pipeline_stages
              << " batch=" << cfg.batch_size << " ebs=" << cfg.effective_batch()
              << " epochs=" << cfg.epochs << " seed=" << cfg.seed
              << " transport=" << a.transport << "\n";
  }

  laminar::FitResult res;
  if (cfg.strategy == laminar::Strategy::Sequential) {
    res = laminar::train_sequential(model, data.train, &data.test, cfg);
  } else if (a.transport == "sim") {
    res = laminar::fit_sim(model, data.train, &data.test, cfg);
  } else {
    laminar::SocketOptions opts;
    opts.rendezvous = a.rendezvous;
    opts.connect_timeout_sec = cfg.comm_timeout_sec;
    auto ep = laminar::connect_socket_world(a.rank, world, opts);
    res = laminar::fit_rank(*ep, model, data.train, &data.test, cfg);
    ep->close();
    if (a.rank != 0) return 0;  // only rank 0 reports
  }

  if (!a.out_path.empty()) {
    laminar::MetricsWriter writer(a.out_path, format);
    writer.write_header({
        {"tool", std::string("laminar ") + laminar::kVersion},
        {"build", laminar::kBuildId},
        {"model", a.model_path},
        {"data", a.data_spec},
        {"strategy", a.strategy},
        {"partitions", std::to_string(cfg.num_partitions)},
        {"replicas", std::to_string(cfg.num_replicas)},
        {"stages", std::to_string(cfg.pipeline_stages)},
        {"batch_size", std::to_string(cfg.batch_size)},
        {"effective_batch", std::to_string(cfg.effective_batch())},
        {"epochs", std::to_string(cfg.epochs)},
        {"lr_schedule", a.lr_schedule},
        {"seed", std::to_string(cfg.seed)},
        {"transport", a.transport},
    });
    for (const auto& m : res.metrics) writer.write_step(m);
  } else {
    for (const auto& m : res.metrics) {
      std::cout << "step " << m.step << " epoch " << m.epoch << " loss " << fmt17(m.loss)
                << " img/s " << fmt17(m.images_per_sec) << "\n";
    }
  }
  std::cout << "completed " << res.metrics.size() << " steps; final loss "
            << fmt17(res.final_loss);
  if (res.test_accuracy >= 0.0) std::cout << "; test accuracy " << fmt17(res.test_accuracy);
  std::cout << "\n";
  return 0;
}

struct SweepArgs {
  std::string model_path;
  std::string data_spec;
  std::string strategies = "model";
  std::vector<int> partitions{1};
  std::vector<int> replicas{1};
  std::vector<int> stages{1};
  std::vector<int> batches{32};
  int steps = 5;
  int repeats = 3;
  std::uint64_t seed = 1;
  std::string out_path;
};

int do_sweep(const SweepArgs& a) {
  laminar::SweepSpec spec;
  spec.strategies.clear();
  std::stringstream ss(a.strategies);
  std::string item;
  while (std::getline(ss, item, ',')) spec.strategies.push_back(laminar::parse_strategy(item));
  if (spec.strategies.empty()) throw laminar::ConfigError("no strategies given");
  spec.partitions = a.partitions;
  spec.replicas = a.replicas;
  spec.stages = a.stages;
  spec.batches = a.batches;
  spec.steps = a.steps;
  spec.repeats = a.repeats;
  spec.seed = a.seed;

  laminar::ModelGraph model = laminar::load_model_config(a.model_path);
  laminar::DataBundle data = laminar::load_data(a.data_spec, a.seed);
  const auto rows = laminar::run_sweep(model, data.train, spec);
  const std::string csv = laminar::sweep_csv(rows);
  if (a.out_path.empty()) {
    std::cout << csv;
  } else {
    std::ofstream out(a.out_path);
    if (!out) throw laminar::Error(laminar::msg(a.out_path, ": cannot open for writing"));
    out << csv;
    std::cout << "wrote " << rows.size() << " sweep rows to " << a.out_path << "\n";
  }
  return 0;
}

struct PlanArgs {
  std::string model_path;
  int partitions = 1;
  int replicas = 1;
};

int do_plan(const PlanArgs& a) {
  laminar::ModelGraph model = laminar::load_model_config(a.model_path);
  const auto plan = laminar::make_partition_plan(model, a.partitions, a.replicas);
  std::cout << laminar::plan_dump(model, plan);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layer-DAG training engine with model/data/hybrid parallelism"};
  app.require_subcommand(1);

  RunArgs run;
  CLI::App* run_cmd = app.add_subcommand("run", "train a model");
  run_cmd->add_option("--model", run.model_path, "model config JSON")
      ->required()
      ->envname("LAMINAR_MODEL");
  run_cmd->add_option("--data", run.data_spec, "data source spec")
      ->required()
      ->envname("LAMINAR_DATA");
  run_cmd->add_option("--strategy", run.strategy, "sequential|model|data|hybrid")
      ->envname("LAMINAR_STRATEGY");
  run_cmd->add_option("--num-partitions", run.partitions, "model-parallel partitions");
  run_cmd->add_option("--num-replicas", run.replicas, "data-parallel replicas");
  run_cmd->add_option("--pipeline-stages", run.stages, "micro-batches per step");
  run_cmd->add_option("--batch-size", run.batch_size, "rows per replica per step");
  run_cmd->add_option("--epochs", run.epochs, "training epochs");
  run_cmd->add_option("--lr-schedule", run.lr_schedule, "epoch:rate[,epoch:rate...]");
  run_cmd->add_option("--seed", run.seed, "data seed")->envname("LAMINAR_SEED");
  run_cmd->add_option("--max-steps", run.max_steps, "stop after N optimizer steps (0 = all)");
  run_cmd->add_option("--buffer-capacity", run.buffer_capacity,
                      "per-channel in-flight message bound (sim)");
  run_cmd->add_option("--comm-timeout", run.comm_timeout, "blocking op deadline, seconds");
  run_cmd->add_flag("--no-eval", run.no_eval, "skip test-set evaluation");
  run_cmd->add_option("--transport", run.transport, "sim|socket")->envname("LAMINAR_TRANSPORT");
  run_cmd->add_option("--rank", run.rank, "this process's rank (socket)");
  run_cmd->add_option("--world", run.world, "world size check (socket)");
  run_cmd->add_option("--rendezvous", run.rendezvous, "host:port of rank 0 (socket)")
      ->envname("LAMINAR_RENDEZVOUS");
  run_cmd->add_option("--out", run.out_path, "metrics log path");
  run_cmd->add_option("--format", run.format, "csv|jsonl")->envname("LAMINAR_FORMAT");

  SweepArgs sweep;
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "measure throughput across run shapes");
  sweep_cmd->add_option("--model", sweep.model_path, "model config JSON")->required();
  sweep_cmd->add_option("--data", sweep.data_spec, "data source spec")->required();
  sweep_cmd->add_option("--strategies", sweep.strategies, "comma-separated strategy list");
  sweep_cmd->add_option("--partitions", sweep.partitions, "partition counts")->delimiter(',');
  sweep_cmd->add_option("--replicas", sweep.replicas, "replica counts")->delimiter(',');
  sweep_cmd->add_option("--stages", sweep.stages, "stage counts (0 = one row per stage)")
      ->delimiter(',');
  sweep_cmd->add_option("--batches", sweep.batches, "batch sizes")->delimiter(',');
  sweep_cmd->add_option("--steps", sweep.steps, "timed steps per run");
  sweep_cmd->add_option("--repeats", sweep.repeats, "repeats per cell (median)");
  sweep_cmd->add_option("--seed", sweep.seed, "data seed");
  sweep_cmd->add_option("--out", sweep.out_path, "CSV output path (default stdout)");

  PlanArgs plan;
  CLI::App* plan_cmd = app.add_subcommand("plan", "print a partition plan");
  plan_cmd->add_option("--model", plan.model_path, "model config JSON")->required();
  plan_cmd->add_option("--num-partitions", plan.partitions, "model-parallel partitions");
  plan_cmd->add_option("--num-replicas", plan.replicas, "data-parallel replicas");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed()) return do_run(run);
    if (sweep_cmd->parsed()) return do_sweep(sweep);
    if (plan_cmd->parsed()) return do_plan(plan);
  } catch (const laminar::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
