// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The Laminar Authors
#pragma once

#include <string>

#include "laminar/model.hpp"

namespace laminar {

/// Builds a validated, shape-inferred, seed-initialized model from a model
/// config document (JSON; schema documented in docs/model_config.md).
/// Errors carry the offending field path, e.g. "layers[3].kind".
ModelGraph build_model_from_json(const std::string& json_text);

/// Same, reading the document from a file.
ModelGraph load_model_config(const std::string& path);

/// Serializes a model's structure (not its weights) back to config JSON.
std::string model_to_json(const ModelGraph& model, std::uint64_t seed);

}  // namespace laminar
