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

#include "aqo/topology.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace aqo {

int ChimeraGraph::edge_index(int i, int j) const {
    if (i > j) std::swap(i, j);
    auto it = std::lower_bound(edges.begin(), edges.end(), std::pair{i, j},
                               [](const Edge& e, const std::pair<int, int>& key) {
                                   return std::pair{e.i, e.j} < key;
                               });
    if (it == edges.end() || it->i != i || it->j != j) return -1;
    return static_cast<int>(it - edges.begin());
}

std::vector<std::vector<std::pair<int, int>>> ChimeraGraph::adjacency() const {
    std::vector<std::vector<std::pair<int, int>>> adj(num_vars);
    for (std::size_t e = 0; e < edges.size(); ++e) {
        adj[edges[e].i].emplace_back(edges[e].j, static_cast<int>(e));
        adj[edges[e].j].emplace_back(edges[e].i, static_cast<int>(e));
    }
    return adj;
}

ChimeraGraph build_chimera(int rows, int cols) {
    if (rows < 1 || cols < 1) {
        throw std::invalid_argument("build_chimera: rows and cols must be >= 1, got " +
                                    std::to_string(rows) + "x" + std::to_string(cols));
    }
    ChimeraGraph g;
    g.rows = rows;
    g.cols = cols;
    g.num_vars = 8 * rows * cols;
    g.cell_of.resize(g.num_vars);

    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            for (int k = 0; k < 4; ++k) {
                g.cell_of[chimera_index(cols, r, c, Side::left, k)] = {r, c, Side::left, k};
                g.cell_of[chimera_index(cols, r, c, Side::right, k)] = {r, c, Side::right, k};
            }
            for (int a = 0; a < 4; ++a) {
                for (int b = 0; b < 4; ++b) {
                    g.edges.push_back({chimera_index(cols, r, c, Side::left, a),
                                       chimera_index(cols, r, c, Side::right, b),
                                       EdgeKind::intra_cell});
                }
            }
            for (int k = 0; k < 4; ++k) {
                if (r + 1 < rows) {
                    g.edges.push_back({chimera_index(cols, r, c, Side::left, k),
                                       chimera_index(cols, r + 1, c, Side::left, k),
                                       EdgeKind::inter_cell});
                }
                if (c + 1 < cols) {
                    g.edges.push_back({chimera_index(cols, r, c, Side::right, k),
                                       chimera_index(cols, r, c + 1, Side::right, k),
                                       EdgeKind::inter_cell});
                }
            }
        }
    }
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& x, const Edge& y) {
        return std::pair{x.i, x.j} < std::pair{y.i, y.j};
    });
    return g;
}

ChimeraGraph free_graph(int num_vars, std::vector<std::pair<int, int>> edges) {
    if (num_vars < 1) throw std::invalid_argument("free_graph: num_vars must be >= 1");
    ChimeraGraph g;
    g.num_vars = num_vars;
    for (auto [i, j] : edges) {
        if (i == j || i < 0 || j < 0 || i >= num_vars || j >= num_vars) {
            throw std::invalid_argument("free_graph: bad edge (" + std::to_string(i) + ", " +
                                        std::to_string(j) + ")");
        }
        g.edges.push_back({std::min(i, j), std::max(i, j), EdgeKind::intra_cell});
    }
    std::sort(g.edges.begin(), g.edges.end(), [](const Edge& x, const Edge& y) {
        return std::pair{x.i, x.j} < std::pair{y.i, y.j};
    });
    for (std::size_t e = 1; e < g.edges.size(); ++e) {
        if (g.edges[e].i == g.edges[e - 1].i && g.edges[e].j == g.edges[e - 1].j) {
            throw std::invalid_argument("free_graph: duplicate edge (" +
                                        std::to_string(g.edges[e].i) + ", " +
                                        std::to_string(g.edges[e].j) + ")");
        }
    }
    return g;
}

const std::vector<Tiling>& standard_tilings() {
    static const std::vector<Tiling> rows = {
        {1, 1, 8, 30},  {2, 1, 16, 40},  {2, 2, 32, 50},   {3, 2, 48, 60},
        {3, 3, 72, 70}, {4, 3, 96, 110}, {4, 4, 128, 130},
    };
    return rows;
}

}  // namespace aqo
