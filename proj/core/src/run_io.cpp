// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/run_io.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "laminar/error.hpp"

namespace laminar {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

LogFormat parse_format(const std::string& name) {
  if (name == "csv") return LogFormat::Csv;
  if (name == "jsonl") return LogFormat::Jsonl;
  throw ConfigError(msg("unknown log format '", name, "' (expected csv or jsonl)"));
}

const char* format_name(LogFormat f) {
  return f == LogFormat::Csv ? "csv" : "jsonl";
}

MetricsWriter::MetricsWriter(const std::string& path, LogFormat format)
    : out_(path), path_(path), format_(format) {
  if (!out_) throw Error(msg(path, ": cannot open for writing"));
}

void MetricsWriter::write_header(const std::vector<std::pair<std::string, std::string>>& info) {
  if (header_written_) throw Error(msg(path_, ": header written twice"));
  header_written_ = true;
  if (format_ == LogFormat::Csv) {
    for (const auto& [k, v] : info) out_ << "# " << k << "=" << v << "\n";
    out_ << "step,epoch,loss,images_per_sec,wall_ms\n";
  } else {
    nlohmann::json j;
    j["type"] = "header";
    for (const auto& [k, v] : info) j[k] = v;
    out_ << j.dump() << "\n";
  }
  out_.flush();
}

void MetricsWriter::write_step(const StepMetrics& m) {
  if (!header_written_) throw Error(msg(path_, ": step record before header"));
  if (m.step <= last_step_) {
    throw Error(msg(path_, ": step ", m.step, " after step ", last_step_,
                    " (steps must be strictly increasing)"));
  }
  last_step_ = m.step;
  if (format_ == LogFormat::Csv) {
    out_ << m.step << "," << m.epoch << "," << fmt_double(m.loss) << ","
         << fmt_double(m.images_per_sec) << "," << fmt_double(m.wall_ms) << "\n";
  } else {
    nlohmann::json j;
    j["type"] = "step";
    j["step"] = m.step;
    j["epoch"] = m.epoch;
    j["loss"] = m.loss;
    j["images_per_sec"] = m.images_per_sec;
    j["wall_ms"] = m.wall_ms;
    out_ << j.dump() << "\n";
  }
  out_.flush();
}

namespace {

ParsedMetrics parse_csv_log(std::istream& in, const std::string& path) {
  ParsedMetrics out;
  std::string line;
  std::int64_t lineno = 0;
  bool saw_columns = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::string body = line.substr(1);
      if (!body.empty() && body[0] == ' ') body = body.substr(1);
      auto eq = body.find('=');
      if (eq == std::string::npos) {
        throw Error(msg(path, ":", lineno, ": header comment without key=value"));
      }
      out.header[body.substr(0, eq)] = body.substr(eq + 1);
      continue;
    }
    if (!saw_columns) {
      if (line != "step,epoch,loss,images_per_sec,wall_ms") {
        throw Error(msg(path, ":", lineno, ": unexpected column line '", line, "'"));
      }
      saw_columns = true;
      continue;
    }
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 5) {
      throw Error(msg(path, ":", lineno, ": expected 5 fields, got ", fields.size()));
    }
    try {
      StepMetrics m;
      m.step = std::stoi(fields[0]);
      m.epoch = std::stoi(fields[1]);
      m.loss = std::stod(fields[2]);
      m.images_per_sec = std::stod(fields[3]);
      m.wall_ms = std::stod(fields[4]);
      out.steps.push_back(m);
    } catch (const std::exception&) {
      throw Error(msg(path, ":", lineno, ": malformed step record '", line, "'"));
    }
  }
  return out;
}

ParsedMetrics parse_jsonl_log(std::istream& in, const std::string& path) {
  ParsedMetrics out;
  std::string line;
  std::int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const std::exception& e) {
      throw Error(msg(path, ":", lineno, ": ", e.what()));
    }
    const std::string type = j.value("type", "");
    if (type == "header") {
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "type") continue;
        out.header[it.key()] =
            it.value().is_string() ? it.value().get<std::string>() : it.value().dump();
      }
    } else if (type == "step") {
      StepMetrics m;
      m.step = j.at("step").get<int>();
      m.epoch = j.at("epoch").get<int>();
      m.loss = j.at("loss").get<double>();
      m.images_per_sec = j.at("images_per_sec").get<double>();
      m.wall_ms = j.at("wall_ms").get<double>();
      out.steps.push_back(m);
    } else {
      throw Error(msg(path, ":", lineno, ": unknown record type '", type, "'"));
    }
  }
  return out;
}

}  // namespace

ParsedMetrics parse_metrics_log(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(msg(path, ": cannot open"));
  const int first = in.peek();
  if (first == '{') return parse_jsonl_log(in, path);
  return parse_csv_log(in, path);
}

}  // namespace laminar
