// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// JSON formats: graphs ({"num_nodes", "directed", "edges", ...}) and weight
// checkpoints ({"format": "chimera.weights", "version": 1, "tensors": ...}).

#pragma once

#include <string>

#include <json.hpp>

#include "chimera/graph.hpp"
#include "chimera/params.hpp"

namespace chimera {

inline constexpr int kCheckpointVersion = 1;

nlohmann::json matrix_to_json(const Matrix& m);  // [[row], ...]
Matrix matrix_from_json(const nlohmann::json& j, const std::string& what);

nlohmann::json graph_to_json(const Graph& graph);
Graph graph_from_json(const nlohmann::json& j);

nlohmann::json params_to_json(const ParamStore& store);
ParamStore params_from_json(const nlohmann::json& j);

// File helpers; IoError on open/write failure, ParseError on malformed JSON.
nlohmann::json read_json_file(const std::string& path);
void write_json_file(const std::string& path, const nlohmann::json& j);
void write_text_file(const std::string& path, const std::string& text);

Graph load_graph(const std::string& path);
void save_graph(const std::string& path, const Graph& graph);
ParamStore load_params(const std::string& path);
void save_params(const std::string& path, const ParamStore& store);

}  // namespace chimera
