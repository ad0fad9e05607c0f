// Copyright 2026 The Chimera Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Graph families addressed by short spec strings:
//   chain:<T>  grid:<H>x<W>  randdag:<T>:<p>:<seed>  randgraph:<T>:<p>:<seed>
// or a path to a graph JSON file.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

#include "chimera/graph.hpp"

namespace chimera::gen {

enum class Family { Chain, Grid, RandomDag, RandomGraph, File };

struct GraphSpec {
  Family family = Family::Chain;
  std::size_t nodes = 0;  // chain / random families
  std::size_t height = 0;
  std::size_t width = 0;
  double probability = 0.0;
  std::uint64_t seed = 0;
  std::string path;  // Family::File
};

// ParseError with the accepted forms on malformed specs.
GraphSpec parse_graph_spec(std::string_view text);
std::string format_graph_spec(const GraphSpec& spec);

// Builds the graph; `seed` overrides the seed written in the graph string for random families.
Graph make_graph(const GraphSpec& spec);
Graph make_graph(const GraphSpec& spec, std::uint64_t seed);

// Erdos-Renyi over ordered pairs j < i with arcs j -> i (acyclic by
// construction), pairs visited row by row.
Graph random_dag(std::size_t nodes, double p, std::uint64_t seed);
// Undirected Erdos-Renyi over pairs i < j.
Graph random_graph(std::size_t nodes, double p, std::uint64_t seed);

}  // namespace chimera::gen
