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
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aqo/topology.hpp"

namespace aqo {

using Spins = std::vector<std::int8_t>;

// Ising problem H_P = sum_i h_i s_i + sum_{(i,j) in E} J_ij s_i s_j on an
// allowed edge set.  `j` is aligned with `graph.edges`.
struct ProblemInstance {
    ChimeraGraph graph;
    std::vector<double> h;
    std::vector<double> j;
    std::uint64_t seed = 0;
    std::string id;

    int num_vars() const { return graph.num_vars; }

    friend bool operator==(const ProblemInstance&, const ProblemInstance&) = default;
};

// Couplings multiplied by 3.  Present only when every h and J is an exact
// multiple of 1/3, which holds for all generated instances.
struct ScaledIntegers {
    std::vector<std::int64_t> h;
    std::vector<std::int64_t> j;
};

std::optional<ScaledIntegers> scaled_by_three(const ProblemInstance& instance);

// Throws std::invalid_argument when |h_i| > 1, |J_ij| > 1, sizes disagree, or
// a value is not finite.
void validate(const ProblemInstance& instance);

double classical_energy(const ProblemInstance& instance, std::span<const std::int8_t> spins);

// h_i and intra-cell J_ij are +-1/3 with equal probability, inter-cell J_ij = -1.
// Draw k of the splitmix64 counter stream `seed` decides the k-th value
// (fields first, then intra-cell couplers in edge order); the sign is the
// top bit of the draw.
ProblemInstance generate_instance(const ChimeraGraph& graph, std::uint64_t seed);

using DegeneracyOracle = std::function<std::uint64_t(const ProblemInstance&)>;

struct RejectedCandidate {
    std::uint64_t seed;
    std::uint64_t degeneracy;
};

struct FilteredBatch {
    std::vector<ProblemInstance> instances;
    std::vector<RejectedCandidate> rejected;

    double acceptance_rate() const {
        const double total = static_cast<double>(instances.size() + rejected.size());
        return total == 0 ? 0.0 : static_cast<double>(instances.size()) / total;
    }
};

struct FilterOptions {
    // Abort once the fraction of rejected candidates would have to exceed
    // this to fill the batch.
    double max_rejection_rate = 0.999;
};

// Seed of the k-th candidate drawn from `base_seed`.
std::uint64_t candidate_seed(std::uint64_t base_seed, std::uint64_t k);

// Keeps only candidates with a unique ground state.  The default oracle is
// treesolver's exact degeneracy count.
FilteredBatch generate_filtered_batch(const ChimeraGraph& graph, int count,
                                      std::uint64_t base_seed, FilterOptions options = {},
                                      DegeneracyOracle oracle = {});

class InstanceParseError : public std::runtime_error {
  public:
    InstanceParseError(int line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
    int line() const { return line_; }

  private:
    int line_;
};

// Exact thirds are written as "1/3", "-1/3", "-1", ...; anything else as
// 17 significant digits.
std::string format_coupling(double value);
double parse_coupling(const std::string& token);

std::string serialize_instance(const ProblemInstance& instance);
ProblemInstance parse_instance(const std::string& text);

void save_instance(const ProblemInstance& instance, const std::filesystem::path& path);
ProblemInstance load_instance(const std::filesystem::path& path);

}  // namespace aqo
