// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "laminar/trainer.hpp"

namespace laminar {

enum class LogFormat { Csv, Jsonl };

LogFormat parse_format(const std::string& name);
const char* format_name(LogFormat f);

/// Streams run metadata plus one record per optimizer step to a file.
/// Doubles are written with 17 significant digits so a parsed log
/// round-trips bit for bit. The header must be written first and step ids
/// must be strictly increasing; violations throw.
class MetricsWriter {
 public:
  MetricsWriter(const std::string& path, LogFormat format);

  void write_header(const std::vector<std::pair<std::string, std::string>>& info);
  void write_step(const StepMetrics& m);

 private:
  std::ofstream out_;
  std::string path_;
  LogFormat format_;
  bool header_written_ = false;
  int last_step_ = 0;
};

struct ParsedMetrics {
  std::map<std::string, std::string> header;
  std::vector<StepMetrics> steps;
};

/// Reads either format back (auto-detected from the first byte).
ParsedMetrics parse_metrics_log(const std::string& path);

}  // namespace laminar
