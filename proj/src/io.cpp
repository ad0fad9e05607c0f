// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "chimera/io.hpp"

#include <fstream>
#include <sstream>

namespace chimera {

using nlohmann::json;

namespace {

[[noreturn]] void parse_fail(const std::string& what) {
  throw Error(ErrorCode::ParseError, what);
}

std::size_t as_index(const json& j, const std::string& what) {
  if (!j.is_number_integer() || j.get<long long>() < 0) {
    parse_fail(what + ": expected a non-negative integer");
  }
  return j.get<std::size_t>();
}

}  // namespace

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return rows;
}

Matrix matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) parse_fail(what + ": expected an array of rows");
  const std::size_t rows = j.size();
  const std::size_t cols = rows == 0 ? 0 : j[0].size();
  std::vector<double> data;
  data.reserve(rows * cols);
  for (const auto& row : j) {
    if (!row.is_array() || row.size() != cols) parse_fail(what + ": ragged rows");
    for (const auto& v : row) {
      if (!v.is_number()) parse_fail(what + ": non-numeric entry");
      data.push_back(v.get<double>());
    }
  }
  return Matrix(rows, cols, std::move(data));
}

json graph_to_json(const Graph& graph) {
  json j;
  j["num_nodes"] = graph.num_nodes();
  j["directed"] = graph.directed();
  json edges = json::array();
  for (const Edge& e : graph.edges()) edges.push_back({e.src, e.dst});
  j["edges"] = std::move(edges);
  if (graph.node_features()) j["node_features"] = matrix_to_json(*graph.node_features());
  if (graph.edge_features()) j["edge_features"] = matrix_to_json(*graph.edge_features());
  return j;
}

Graph graph_from_json(const json& j) {
  if (!j.is_object()) parse_fail("graph: expected an object");
  if (!j.contains("num_nodes")) parse_fail("graph: missing num_nodes");
  const std::size_t n = as_index(j["num_nodes"], "num_nodes");
  bool directed = true;
  if (j.contains("directed")) {
    if (!j["directed"].is_boolean()) parse_fail("graph: directed must be a boolean");
    directed = j["directed"].get<bool>();
  }
  std::vector<Edge> edges;
  if (j.contains("edges")) {
    if (!j["edges"].is_array()) parse_fail("graph: edges must be an array");
    for (const auto& e : j["edges"]) {
      if (!e.is_array() || e.size() != 2) parse_fail("graph: each edge is [src, dst]");
      edges.push_back({as_index(e[0], "edge src"), as_index(e[1], "edge dst")});
    }
  }
  std::optional<Matrix> nf, ef;
  if (j.contains("node_features")) nf = matrix_from_json(j["node_features"], "node_features");
  if (j.contains("edge_features")) ef = matrix_from_json(j["edge_features"], "edge_features");
  return build_graph(n, directed, std::move(edges), std::move(nf), std::move(ef));
}

json params_to_json(const ParamStore& store) {
  json tensors = json::object();
  for (const auto& [name, m] : store) {
    tensors[name] = {{"shape", {m.rows(), m.cols()}}, {"values", m.values()}};
  }
  return {{"format", "chimera.weights"}, {"version", kCheckpointVersion},
          {"tensors", std::move(tensors)}};
}

ParamStore params_from_json(const json& j) {
  if (!j.is_object() || j.value("format", "") != "chimera.weights") {
    parse_fail("checkpoint: format must be \"chimera.weights\"");
  }
  if (!j.contains("version") || j["version"] != kCheckpointVersion) {
    parse_fail("checkpoint: unsupported version");
  }
  if (!j.contains("tensors") || !j["tensors"].is_object()) {
    parse_fail("checkpoint: missing tensors");
  }
  ParamStore store;
  for (const auto& [name, t] : j["tensors"].items()) {
    if (!t.contains("shape") || !t["shape"].is_array() || t["shape"].size() != 2 ||
        !t.contains("values") || !t["values"].is_array()) {
      parse_fail("checkpoint: tensor '" + name + "' needs shape and values");
    }
    const std::size_t r = as_index(t["shape"][0], name + " rows");
    const std::size_t c = as_index(t["shape"][1], name + " cols");
    std::vector<double> values;
    for (const auto& v : t["values"]) {
      if (!v.is_number()) parse_fail("checkpoint: non-numeric value in '" + name + "'");
      values.push_back(v.get<double>());
    }
    if (values.size() != r * c) {
      parse_fail("checkpoint: tensor '" + name + "' has " + std::to_string(values.size()) +
                 " values for shape " + detail::shape(r, c));
    }
    store[name] = Matrix(r, c, std::move(values));
  }
  return store;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::ParseError, path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  out << text;
  if (!out) throw Error(ErrorCode::IoError, "write failed for '" + path + "'");
}

void write_json_file(const std::string& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

Graph load_graph(const std::string& path) { return graph_from_json(read_json_file(path)); }

void save_graph(const std::string& path, const Graph& graph) {
  write_json_file(path, graph_to_json(graph));
}

ParamStore load_params(const std::string& path) {
  return params_from_json(read_json_file(path));
}

void save_params(const std::string& path, const ParamStore& store) {
  write_json_file(path, params_to_json(store));
}

}  // namespace chimera
