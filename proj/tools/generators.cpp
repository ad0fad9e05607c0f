// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0

#include "generators.hpp"

#include <charconv>
#include <random>
#include <vector>

#include "chimera/io.hpp"

namespace chimera::gen {

namespace {

constexpr const char* kForms =
    "expected chain:<T>, grid:<H>x<W>, randdag:<T>:<p>:<seed>, "
    "randgraph:<T>:<p>:<seed> or a .json file";

[[noreturn]] void bad(std::string_view text) {
  throw Error(ErrorCode::ParseError,
              "bad graph spec '" + std::string(text) + "'; " + kForms);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == sep) {
      out.push_back(s.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_probability(std::string_view s, double& out) {
  return parse_number(s, out) && out >= 0.0 && out <= 1.0;
}

}  // namespace

GraphSpec parse_graph_spec(std::string_view text) {
  GraphSpec spec;
  const auto parts = split(text, ':');
  const std::string_view head = parts[0];
  if (parts.size() == 1) {
    if (text.size() >= 5 && text.substr(text.size() - 5) == ".json") {
      spec.family = Family::File;
      spec.path = std::string(text);
      return spec;
    }
    bad(text);
  }
  if (head == "chain" && parts.size() == 2) {
    spec.family = Family::Chain;
    if (!parse_number(parts[1], spec.nodes) || spec.nodes == 0) bad(text);
    return spec;
  }
  if (head == "grid" && parts.size() == 2) {
    spec.family = Family::Grid;
    const auto dims = split(parts[1], 'x');
    if (dims.size() != 2 || !parse_number(dims[0], spec.height) ||
        !parse_number(dims[1], spec.width) || spec.height == 0 || spec.width == 0) {
      bad(text);
    }
    return spec;
  }
  if ((head == "randdag" || head == "randgraph") && parts.size() == 4) {
    spec.family = head == "randdag" ? Family::RandomDag : Family::RandomGraph;
    if (!parse_number(parts[1], spec.nodes) || spec.nodes == 0 ||
        !parse_probability(parts[2], spec.probability) ||
        !parse_number(parts[3], spec.seed)) {
      bad(text);
    }
    return spec;
  }
  bad(text);
}

std::string format_graph_spec(const GraphSpec& spec) {
  auto prob = [](double p) {
    std::string s = std::to_string(p);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  };
  switch (spec.family) {
    case Family::Chain: return "chain:" + std::to_string(spec.nodes);
    case Family::Grid:
      return "grid:" + std::to_string(spec.height) + "x" + std::to_string(spec.width);
    case Family::RandomDag:
      return "randdag:" + std::to_string(spec.nodes) + ":" + prob(spec.probability) +
             ":" + std::to_string(spec.seed);
    case Family::RandomGraph:
      return "randgraph:" + std::to_string(spec.nodes) + ":" + prob(spec.probability) +
             ":" + std::to_string(spec.seed);
    case Family::File: return spec.path;
  }
  return "";
}

Graph random_dag(std::size_t nodes, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  std::vector<Edge> edges;
  for (std::size_t i = 1; i < nodes; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (coin(rng)) edges.push_back({j, i});
  return build_graph(nodes, true, std::move(edges));
}

Graph random_graph(std::size_t nodes, double p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution coin(p);
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < nodes; ++i)
    for (std::size_t j = i + 1; j < nodes; ++j)
      if (coin(rng)) edges.push_back({i, j});
  return build_graph(nodes, false, std::move(edges));
}

Graph make_graph(const GraphSpec& spec) { return make_graph(spec, spec.seed); }

Graph make_graph(const GraphSpec& spec, std::uint64_t seed) {
  switch (spec.family) {
    case Family::Chain: return line_graph(spec.nodes, true);
    case Family::Grid: return grid_graph(spec.height, spec.width);
    case Family::RandomDag: return random_dag(spec.nodes, spec.probability, seed);
    case Family::RandomGraph: return random_graph(spec.nodes, spec.probability, seed);
    case Family::File: return load_graph(spec.path);
  }
  throw Error(ErrorCode::InvalidConfig, "unknown graph family");
}

}  // namespace chimera::gen
