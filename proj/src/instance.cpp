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

#include "aqo/instance.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "aqo/rng.hpp"
#include "aqo/treesolver.hpp"

namespace aqo {

namespace {

std::optional<std::int64_t> exact_third(double v) {
    if (!std::isfinite(v) || std::abs(v) > 1e15) return std::nullopt;
    const auto k = static_cast<std::int64_t>(std::llround(3.0 * v));
    if (static_cast<double>(k) / 3.0 != v) return std::nullopt;
    return k;
}

}  // namespace

std::optional<ScaledIntegers> scaled_by_three(const ProblemInstance& instance) {
    ScaledIntegers out;
    out.h.reserve(instance.h.size());
    out.j.reserve(instance.j.size());
    for (double v : instance.h) {
        auto k = exact_third(v);
        if (!k) return std::nullopt;
        out.h.push_back(*k);
    }
    for (double v : instance.j) {
        auto k = exact_third(v);
        if (!k) return std::nullopt;
        out.j.push_back(*k);
    }
    return out;
}

void validate(const ProblemInstance& instance) {
    const auto& g = instance.graph;
    if (static_cast<int>(instance.h.size()) != g.num_vars) {
        throw std::invalid_argument("instance: h has " + std::to_string(instance.h.size()) +
                                    " entries for " + std::to_string(g.num_vars) + " variables");
    }
    if (instance.j.size() != g.edges.size()) {
        throw std::invalid_argument("instance: J has " + std::to_string(instance.j.size()) +
                                    " entries for " + std::to_string(g.edges.size()) + " edges");
    }
    for (std::size_t i = 0; i < instance.h.size(); ++i) {
        if (!std::isfinite(instance.h[i]) || std::abs(instance.h[i]) > 1.0) {
            throw std::invalid_argument("instance: h_" + std::to_string(i) + " outside [-1, 1]");
        }
    }
    for (std::size_t e = 0; e < instance.j.size(); ++e) {
        if (!std::isfinite(instance.j[e]) || std::abs(instance.j[e]) > 1.0) {
            throw std::invalid_argument("instance: J_" + std::to_string(g.edges[e].i) + "," +
                                        std::to_string(g.edges[e].j) + " outside [-1, 1]");
        }
    }
}

double classical_energy(const ProblemInstance& instance, std::span<const std::int8_t> spins) {
    if (static_cast<int>(spins.size()) != instance.num_vars()) {
        throw std::invalid_argument("classical_energy: got " + std::to_string(spins.size()) +
                                    " spins for " + std::to_string(instance.num_vars()) +
                                    " variables");
    }
    double e = 0.0;
    for (std::size_t i = 0; i < spins.size(); ++i) e += instance.h[i] * spins[i];
    const auto& edges = instance.graph.edges;
    for (std::size_t k = 0; k < edges.size(); ++k) {
        e += instance.j[k] * spins[edges[k].i] * spins[edges[k].j];
    }
    return e;
}

ProblemInstance generate_instance(const ChimeraGraph& graph, std::uint64_t seed) {
    ProblemInstance inst;
    inst.graph = graph;
    inst.seed = seed;
    inst.id = std::to_string(graph.rows) + "x" + std::to_string(graph.cols) + "-" +
              std::to_string(seed);
    std::uint64_t draw = 0;
    auto third = [&] { return (counter_draw(seed, draw++) >> 63) ? 1.0 / 3.0 : -1.0 / 3.0; };
    inst.h.resize(graph.num_vars);
    for (auto& v : inst.h) v = third();
    inst.j.resize(graph.edges.size());
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
        if (graph.edges[e].kind == EdgeKind::intra_cell) inst.j[e] = third();
    }
    for (std::size_t e = 0; e < graph.edges.size(); ++e) {
        if (graph.edges[e].kind == EdgeKind::inter_cell) inst.j[e] = -1.0;
    }
    return inst;
}

std::uint64_t candidate_seed(std::uint64_t base_seed, std::uint64_t k) {
    return derive_seed(base_seed, k);
}

FilteredBatch generate_filtered_batch(const ChimeraGraph& graph, int count,
                                      std::uint64_t base_seed, FilterOptions options,
                                      DegeneracyOracle oracle) {
    if (count < 0) throw std::invalid_argument("generate_filtered_batch: negative count");
    if (!(options.max_rejection_rate >= 0.0 && options.max_rejection_rate < 1.0)) {
        throw std::invalid_argument("generate_filtered_batch: rejection cap must be in [0, 1)");
    }
    if (!oracle) oracle = [](const ProblemInstance& p) { return degeneracy(p); };

    const auto max_attempts = static_cast<std::uint64_t>(
        std::ceil(static_cast<double>(std::max(count, 1)) / (1.0 - options.max_rejection_rate)));
    FilteredBatch batch;
    for (std::uint64_t k = 0; static_cast<int>(batch.instances.size()) < count; ++k) {
        if (k >= max_attempts) {
            throw std::runtime_error("generate_filtered_batch: rejection rate exceeded cap after " +
                                     std::to_string(k) + " candidates (" +
                                     std::to_string(batch.instances.size()) + " accepted)");
        }
        auto candidate = generate_instance(graph, candidate_seed(base_seed, k));
        const std::uint64_t d = oracle(candidate);
        if (d == 1) {
            batch.instances.push_back(std::move(candidate));
        } else {
            batch.rejected.push_back({candidate.seed, d});
        }
    }
    return batch;
}

std::string format_coupling(double value) {
    if (auto k = exact_third(value); k && std::abs(*k) < (1LL << 50)) {
        if (*k % 3 == 0) return std::to_string(*k / 3);
        return std::to_string(*k) + "/3";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", value);
    return buf;
}

double parse_coupling(const std::string& token) {
    std::size_t used = 0;
    const auto slash = token.find('/');
    try {
        if (slash != std::string::npos) {
            const std::string num = token.substr(0, slash);
            const std::string den = token.substr(slash + 1);
            std::size_t u1 = 0, u2 = 0;
            const long long n = std::stoll(num, &u1);
            const long long d = std::stoll(den, &u2);
            if (u1 != num.size() || u2 != den.size() || d == 0) throw std::invalid_argument("");
            return static_cast<double>(n) / static_cast<double>(d);
        }
        const double v = std::stod(token, &used);
        if (used != token.size()) throw std::invalid_argument("");
        return v;
    } catch (const std::exception&) {
        throw std::invalid_argument("bad coupling value '" + token + "'");
    }
}

std::string serialize_instance(const ProblemInstance& instance) {
    validate(instance);
    const auto& g = instance.graph;
    std::ostringstream out;
    out << "c aqobench ising instance\n";
    out << "c id " << instance.id << "\n";
    out << "c seed " << instance.seed << "\n";
    out << "p chimera " << g.rows << " " << g.cols << " " << g.num_vars << " "
        << g.num_vars + g.edges.size() << "\n";
    for (int i = 0; i < g.num_vars; ++i) out << "h " << i << " " << format_coupling(instance.h[i]) << "\n";
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
        out << "J " << g.edges[e].i << " " << g.edges[e].j << " " << format_coupling(instance.j[e])
            << "\n";
    }
    return out.str();
}

ProblemInstance parse_instance(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    bool have_header = false;
    int rows = 0, cols = 0, num_vars = 0;
    long long num_terms = 0;
    ProblemInstance inst;
    std::map<int, std::pair<double, int>> hvals;                 // var -> (value, line)
    std::map<std::pair<int, int>, std::pair<double, int>> jvals;  // edge -> (value, line)

    while (std::getline(in, line)) {
        ++lineno;
        std::istringstream ls(line);
        std::string tag;
        if (!(ls >> tag)) continue;
        if (tag == "c") {
            std::string key;
            if (ls >> key) {
                std::string rest;
                std::getline(ls >> std::ws, rest);
                if (key == "id") {
                    inst.id = rest;
                } else if (key == "seed") {
                    try {
                        std::size_t used = 0;
                        inst.seed = std::stoull(rest, &used);
                        if (used != rest.size()) throw std::invalid_argument("");
                    } catch (const std::exception&) {
                        throw InstanceParseError(lineno, "bad seed '" + rest + "'");
                    }
                }
            }
            continue;
        }
        if (tag == "p") {
            std::string kind;
            if (have_header) throw InstanceParseError(lineno, "duplicate problem line");
            if (!(ls >> kind >> rows >> cols >> num_vars >> num_terms) || kind != "chimera") {
                throw InstanceParseError(lineno, "expected 'p chimera M N num_vars num_terms'");
            }
            if (rows < 0 || cols < 0 || num_vars < 1 || (rows == 0) != (cols == 0) ||
                (rows > 0 && num_vars != 8 * rows * cols)) {
                throw InstanceParseError(lineno, "inconsistent problem line");
            }
            have_header = true;
            continue;
        }
        if (!have_header) throw InstanceParseError(lineno, "term before problem line");
        std::string extra;
        if (tag == "h") {
            int i = 0;
            std::string value;
            if (!(ls >> i >> value) || (ls >> extra)) throw InstanceParseError(lineno, "expected 'h i value'");
            if (i < 0 || i >= num_vars) throw InstanceParseError(lineno, "variable index out of range");
            if (hvals.count(i)) throw InstanceParseError(lineno, "duplicate h " + std::to_string(i));
            try {
                hvals[i] = {parse_coupling(value), lineno};
            } catch (const std::invalid_argument& e) {
                throw InstanceParseError(lineno, e.what());
            }
        } else if (tag == "J") {
            int i = 0, j = 0;
            std::string value;
            if (!(ls >> i >> j >> value) || (ls >> extra)) {
                throw InstanceParseError(lineno, "expected 'J i j value'");
            }
            if (i < 0 || j < 0 || i >= num_vars || j >= num_vars || i == j) {
                throw InstanceParseError(lineno, "variable index out of range");
            }
            const std::pair key{std::min(i, j), std::max(i, j)};
            if (jvals.count(key)) {
                throw InstanceParseError(lineno, "duplicate edge " + std::to_string(key.first) + " " +
                                                     std::to_string(key.second));
            }
            try {
                jvals[key] = {parse_coupling(value), lineno};
            } catch (const std::invalid_argument& e) {
                throw InstanceParseError(lineno, e.what());
            }
        } else {
            throw InstanceParseError(lineno, "unknown line tag '" + tag + "'");
        }
    }
    if (!have_header) throw InstanceParseError(lineno, "missing problem line");
    if (static_cast<long long>(hvals.size() + jvals.size()) != num_terms) {
        throw InstanceParseError(lineno, "expected " + std::to_string(num_terms) + " terms, found " +
                                             std::to_string(hvals.size() + jvals.size()));
    }

    if (rows > 0) {
        inst.graph = build_chimera(rows, cols);
    } else {
        std::vector<std::pair<int, int>> edges;
        for (const auto& [key, v] : jvals) edges.push_back(key);
        inst.graph = free_graph(num_vars, std::move(edges));
    }
    inst.h.assign(num_vars, 0.0);
    inst.j.assign(inst.graph.edges.size(), 0.0);
    for (const auto& [i, v] : hvals) {
        if (std::abs(v.first) > 1.0 || !std::isfinite(v.first)) {
            throw InstanceParseError(v.second, "h outside [-1, 1]");
        }
        inst.h[i] = v.first;
    }
    for (const auto& [key, v] : jvals) {
        const int e = inst.graph.edge_index(key.first, key.second);
        if (e < 0) {
            throw InstanceParseError(v.second, "J " + std::to_string(key.first) + " " +
                                                   std::to_string(key.second) +
                                                   " is not in the allowed edge set");
        }
        if (std::abs(v.first) > 1.0 || !std::isfinite(v.first)) {
            throw InstanceParseError(v.second, "J outside [-1, 1]");
        }
        inst.j[e] = v.first;
    }
    return inst;
}

void save_instance(const ProblemInstance& instance, const std::filesystem::path& path) {
    const std::string text = serialize_instance(instance);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_instance: cannot open " + path.string());
    out << text;
    if (!out) throw std::runtime_error("save_instance: write failed for " + path.string());
}

ProblemInstance load_instance(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_instance: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_instance(buf.str());
}

}  // namespace aqo
