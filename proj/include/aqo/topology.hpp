// Copyright 2026 The aqobench Authors.
//
//    Licensed under the Apache License, Version 2.0 (the "License");
//    you may not use this file except in compliance with the License.
//    You may obtain a copy of the License at
//
//        http://www.apache.org/licenses/LICENSE-2.0
//
//    Unless required by applicable law or agreed to in writing, software
//    distributed under the License is distributed on an "AS IS" BASIS,
//    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
//    See the License for the specific language governing permissions and
//    limitations under the License.

#pragma once

#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

namespace aqo {

enum class EdgeKind : std::uint8_t { intra_cell, inter_cell };

struct Edge {
    int i = 0;
    int j = 0;
    EdgeKind kind = EdgeKind::intra_cell;

    friend bool operator==(const Edge&, const Edge&) = default;
};

// Left partition qubits (slots 0..3 of a cell) couple vertically between
// cells, right partition qubits (slots 4..7) couple horizontally.
enum class Side : std::uint8_t { left, right };

struct CellSite {
    int row = 0;
    int col = 0;
    Side side = Side::left;
    int slot = 0;

    friend bool operator==(const CellSite&, const CellSite&) = default;
};

// Allowed edge set of a problem Hamiltonian.  For a tiled K4,4 (Chimera)
// graph rows/cols give the cell grid; a free-form graph loaded from a file
// has rows == cols == 0 and an empty cell map.
struct ChimeraGraph {
    int rows = 0;
    int cols = 0;
    int num_vars = 0;
    std::vector<Edge> edges;        // sorted by (i, j), i < j, no duplicates
    std::vector<CellSite> cell_of;  // indexed by variable

    bool is_chimera() const { return rows > 0 && cols > 0; }

    // Index into `edges`, or -1 when (i, j) is not an allowed edge.
    int edge_index(int i, int j) const;

    // Adjacency lists with edge indices, built on demand.
    std::vector<std::vector<std::pair<int, int>>> adjacency() const;

    friend bool operator==(const ChimeraGraph&, const ChimeraGraph&) = default;
};

// Variable index of (row, col, side, slot): row-major over cells, left
// partition first within a cell.
inline int chimera_index(int cols, int row, int col, Side side, int slot) {
    return 8 * (row * cols + col) + (side == Side::left ? 0 : 4) + slot;
}

ChimeraGraph build_chimera(int rows, int cols);

// Graph with arbitrary edges (e.g. the 1- and 2-qubit analytic systems).
// Edges are normalized to i < j, sorted, and must be duplicate-free.
ChimeraGraph free_graph(int num_vars, std::vector<std::pair<int, int>> edges);

struct Tiling {
    int rows;
    int cols;
    int num_vars;
    int default_s_count;

    friend bool operator==(const Tiling&, const Tiling&) = default;
};

// The seven benchmark tilings, 8 through 128 variables.
const std::vector<Tiling>& standard_tilings();

inline constexpr int kDefaultTrotterSlices = 256;

}  // namespace aqo
