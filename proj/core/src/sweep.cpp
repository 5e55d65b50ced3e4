// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "laminar/error.hpp"
#include "laminar/partition.hpp"

namespace laminar {

namespace {

std::string sanitize(std::string s) {
  for (char& c : s) {
    if (c == ',' || c == '\n') c = ';';
  }
  return s;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<SweepRow> run_sweep(const ModelGraph& model, const Dataset& train,
                                const SweepSpec& spec) {
  if (spec.steps < 1) throw ConfigError(msg("sweep steps must be >= 1, got ", spec.steps));
  if (spec.repeats < 1) throw ConfigError(msg("sweep repeats must be >= 1, got ", spec.repeats));
  std::vector<SweepRow> rows;
  for (Strategy strat : spec.strategies) {
    for (int p : spec.partitions) {
      for (int r : spec.replicas) {
        for (int s : spec.stages) {
          for (int b : spec.batches) {
            SweepRow row;
            row.strategy = strat;
            row.partitions = p;
            row.replicas = r;
            row.stages = (s == 0) ? b : s;
            row.batch_size = b;
            row.ebs = b * r;

            TrainConfig cfg;
            cfg.strategy = strat;
            cfg.num_partitions = p;
            cfg.num_replicas = r;
            cfg.pipeline_stages = row.stages;
            cfg.batch_size = b;
            cfg.epochs = spec.steps + 1;  // upper bound; max_steps stops earlier
            cfg.seed = spec.seed;
            cfg.max_steps = spec.steps + 1;  // one warmup + timed steps
            cfg.evaluate = false;
            try {
              cfg.validate();
              if (train.n() < cfg.effective_batch()) {
                throw ConfigError(msg("effective batch ", cfg.effective_batch(),
                                      " exceeds training set of ", train.n(), " rows"));
              }
              make_partition_plan(model, p, r);  // partition feasibility
            } catch (const std::exception& e) {
              row.status = std::string("skipped: ") + e.what();
              rows.push_back(row);
              continue;
            }

            try {
              std::vector<double> runs;
              for (int rep = 0; rep < spec.repeats; ++rep) {
                FitResult res = (strat == Strategy::Sequential)
                                    ? train_sequential(model, train, nullptr, cfg)
                                    : fit_sim(model, train, nullptr, cfg);
                if (static_cast<int>(res.metrics.size()) != spec.steps + 1) {
                  throw Error(msg("expected ", spec.steps + 1, " steps, got ",
                                  res.metrics.size()));
                }
                double wall_ms = 0.0;
                for (std::size_t i = 1; i < res.metrics.size(); ++i) {
                  wall_ms += res.metrics[i].wall_ms;
                }
                runs.push_back(static_cast<double>(cfg.effective_batch()) *
                               static_cast<double>(spec.steps) / (wall_ms / 1000.0));
              }
              row.img_per_sec = median(runs);
              row.status = "ok";
            } catch (const std::exception& e) {
              row.status = std::string("failed: ") + e.what();
            }
            rows.push_back(row);
          }
        }
      }
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "strategy,partitions,replicas,stages,batch_size,ebs,img_per_sec,status\n";
  for (const auto& r : rows) {
    char num[32];
    std::snprintf(num, sizeof(num), "%.2f", r.img_per_sec);
    out << strategy_name(r.strategy) << "," << r.partitions << "," << r.replicas << ","
        << r.stages << "," << r.batch_size << "," << r.ebs << "," << num << ","
        << sanitize(r.status) << "\n";
  }
  return out.str();
}

}  // namespace laminar
