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

#include <cstdint>
#include <string>
#include <vector>

#include "aqo/instance.hpp"
#include "aqo/topology.hpp"

namespace aqo {

// Rooted tree of variable bags.  parent[b] == -1 marks the single root.
struct TreeDecomposition {
    std::vector<std::vector<int>> bags;  // each bag sorted ascending
    std::vector<int> parent;

    int width() const;
};

// Throws std::logic_error naming the violated axiom: vertex coverage, edge
// coverage, running intersection, or malformed tree.
void check_decomposition(const ChimeraGraph& graph, const TreeDecomposition& td);

// Path decomposition induced by a vertex order: bag t holds order[t] plus
// every earlier vertex that still has a neighbour at position >= t.
TreeDecomposition path_decomposition(const ChimeraGraph& graph, const std::vector<int>& order);

// Frontier sweep over cells along the longer grid axis, so the frontier
// spans the shorter one.  Width is at most min(4M, 4N) + 4.
TreeDecomposition chimera_decomposition(const ChimeraGraph& graph);

// Greedy min-fill elimination; works on any graph.
TreeDecomposition min_fill_decomposition(const ChimeraGraph& graph);

enum class SolveMethod { brute, treedp };

std::string to_string(SolveMethod m);
SolveMethod parse_solve_method(const std::string& s);

struct SolveResult {
    // Ground energy times 3; meaningful when `integral`.
    std::int64_t energy_x3 = 0;
    double energy = 0.0;
    bool integral = false;
    Spins assignment;
    std::uint64_t degeneracy = 0;
    // Counting overflowed 2^64 - 1.
    bool degeneracy_saturated = false;
    // Floating couplings; ties were detected with a 1e-9 tolerance.
    bool degeneracy_approximate = false;
    double wall_time_s = 0.0;
    SolveMethod method = SolveMethod::brute;
    int width = -1;

    // "-17/3" for integral energies, 17 significant digits otherwise.
    std::string energy_string() const;
};

inline constexpr int kBruteForceMaxVars = 28;
inline constexpr double kFloatTieTolerance = 1e-9;

// Gray-code enumeration of all 2^N states.  The witness is the
// lexicographically smallest minimizer (variable 0 most significant, -1 < +1).
SolveResult brute_force(const ProblemInstance& instance, int max_vars = kBruteForceMaxVars);

// Leaf-to-root min/count DP over the separators, then root-to-leaf witness
// recovery.  Ties keep the first minimizer in each bag's enumeration order.
SolveResult treedp_solve(const ProblemInstance& instance, const TreeDecomposition& td);

// treedp with the natural decomposition for the graph.
SolveResult treedp_solve(const ProblemInstance& instance);

SolveResult solve(const ProblemInstance& instance, SolveMethod method);

// Exact ground-state degeneracy; brute force up to 24 variables, tree DP
// beyond.
std::uint64_t degeneracy(const ProblemInstance& instance);

// Runs `repeats` solves and keeps the minimum wall time.  Throws if the
// solver returns different results across repeats.
SolveResult timed_solve(const ProblemInstance& instance, SolveMethod method, int repeats = 10,
                        std::vector<double>* durations = nullptr);

}  // namespace aqo
