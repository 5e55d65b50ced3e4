// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#include "laminar/model_config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "laminar/error.hpp"

namespace laminar {

namespace {

using nlohmann::json;

[[noreturn]] void bad_field(const std::string& path, const std::string& why) {
  throw ConfigError(msg(path, ": ", why));
}

const json& require_key(const json& obj, const std::string& path, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) bad_field(path + "." + key, "missing required field");
  return *it;
}

std::int64_t as_int(const json& v, const std::string& path) {
  if (!v.is_number_integer()) bad_field(path, "expected an integer");
  return v.get<std::int64_t>();
}

double as_number(const json& v, const std::string& path) {
  if (!v.is_number()) bad_field(path, "expected a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& path) {
  if (!v.is_string()) bad_field(path, "expected a string");
  return v.get<std::string>();
}

LayerKind parse_kind(const std::string& s, const std::string& path) {
  if (s == "input") return LayerKind::Input;
  if (s == "dense") return LayerKind::Dense;
  if (s == "relu") return LayerKind::ReLU;
  if (s == "add") return LayerKind::Add;
  if (s == "flatten") return LayerKind::Flatten;
  if (s == "softmax_xent") return LayerKind::SoftmaxXent;
  bad_field(path, msg("unknown layer kind '", s,
                      "' (expected input|dense|relu|add|flatten|softmax_xent)"));
}

}  // namespace

ModelGraph build_model_from_json(const std::string& json_text) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(msg("model config is not valid JSON: ", e.what()));
  }
  if (!doc.is_object()) throw ConfigError("model config: expected a JSON object");

  const std::int64_t version = as_int(require_key(doc, "model", "version"), "model.version");
  if (version != 1) bad_field("model.version", msg("unsupported version ", version));
  const auto seed =
      static_cast<std::uint64_t>(as_int(require_key(doc, "model", "seed"), "model.seed"));

  const json& jshape = require_key(doc, "model", "input_shape");
  if (!jshape.is_array() || jshape.empty()) bad_field("model.input_shape", "expected a non-empty array");
  std::vector<std::int64_t> input_shape;
  for (std::size_t i = 0; i < jshape.size(); ++i) {
    input_shape.push_back(as_int(jshape[i], msg("model.input_shape[", i, "]")));
  }

  const json& jlayers = require_key(doc, "model", "layers");
  if (!jlayers.is_array() || jlayers.empty()) bad_field("model.layers", "expected a non-empty array");

  ModelGraph model;
  for (std::size_t i = 0; i < jlayers.size(); ++i) {
    const std::string path = msg("layers[", i, "]");
    const json& jl = jlayers[i];
    if (!jl.is_object()) bad_field(path, "expected an object");

    LayerNode node;
    node.id = static_cast<int>(i);
    node.kind = parse_kind(as_string(require_key(jl, path, "kind"), path + ".kind"), path + ".kind");

    if (auto it = jl.find("inputs"); it != jl.end()) {
      if (!it->is_array()) bad_field(path + ".inputs", "expected an array of layer ids");
      for (std::size_t k = 0; k < it->size(); ++k) {
        node.inputs.push_back(
            static_cast<int>(as_int((*it)[k], msg(path, ".inputs[", k, "]"))));
      }
    } else if (node.kind != LayerKind::Input) {
      if (i == 0) bad_field(path, "first layer must be the input layer");
      node.inputs = {static_cast<int>(i) - 1};  // default: previous layer
    }

    if (node.kind == LayerKind::Dense) {
      node.units = as_int(require_key(jl, path, "units"), path + ".units");
    } else if (jl.contains("units")) {
      bad_field(path + ".units", msg("not valid for kind '", layer_kind_name(node.kind), "'"));
    }
    if (auto it = jl.find("cost"); it != jl.end()) {
      node.cost_override = as_number(*it, path + ".cost");
      if (node.cost_override < 0) bad_field(path + ".cost", "must be non-negative");
    }
    if (node.kind == LayerKind::Input) node.out_shape = input_shape;
    model.layers.push_back(std::move(node));
  }

  model.validate();
  model.infer_shapes();
  model.init_params(seed);
  return model;
}

ModelGraph load_model_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(msg("cannot open model config: ", path));
  std::ostringstream ss;
  ss << in.rdbuf();
  return build_model_from_json(ss.str());
}

std::string model_to_json(const ModelGraph& model, std::uint64_t seed) {
  json doc;
  doc["version"] = 1;
  doc["seed"] = seed;
  json jshape = json::array();
  for (auto d : model.input_shape()) jshape.push_back(d);
  doc["input_shape"] = std::move(jshape);
  json jlayers = json::array();
  for (const auto& n : model.layers) {
    json jl;
    jl["kind"] = layer_kind_name(n.kind);
    if (n.kind == LayerKind::Dense) jl["units"] = n.units;
    if (!n.inputs.empty()) jl["inputs"] = n.inputs;
    if (n.cost_override >= 0) jl["cost"] = n.cost_override;
    jlayers.push_back(std::move(jl));
  }
  doc["layers"] = std::move(jlayers);
  return doc.dump(2);
}

}  // namespace laminar
