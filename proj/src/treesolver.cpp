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

#include "aqo/treesolver.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <set>
#include <stdexcept>

namespace aqo {

int TreeDecomposition::width() const {
    std::size_t w = 0;
    for (const auto& b : bags) w = std::max(w, b.size());
    return static_cast<int>(w) - 1;
}

void check_decomposition(const ChimeraGraph& graph, const TreeDecomposition& td) {
    const int nb = static_cast<int>(td.bags.size());
    if (nb == 0 || td.parent.size() != td.bags.size()) {
        throw std::logic_error("tree decomposition: bag/parent size mismatch");
    }
    int roots = 0;
    for (int b = 0; b < nb; ++b) {
        if (td.parent[b] == -1) {
            ++roots;
        } else if (td.parent[b] < 0 || td.parent[b] >= nb || td.parent[b] == b) {
            throw std::logic_error("tree decomposition: bad parent pointer at bag " + std::to_string(b));
        }
    }
    if (roots != 1) throw std::logic_error("tree decomposition: expected exactly one root");
    // Every bag must reach the root without revisiting.
    for (int b = 0; b < nb; ++b) {
        int cur = b;
        for (int steps = 0; td.parent[cur] != -1; ++steps) {
            if (steps > nb) throw std::logic_error("tree decomposition: parent pointers form a cycle");
            cur = td.parent[cur];
        }
    }

    std::vector<std::vector<int>> bags_of(graph.num_vars);
    for (int b = 0; b < nb; ++b) {
        const auto& bag = td.bags[b];
        if (!std::is_sorted(bag.begin(), bag.end()) ||
            std::adjacent_find(bag.begin(), bag.end()) != bag.end()) {
            throw std::logic_error("tree decomposition: bag " + std::to_string(b) +
                                   " not sorted/unique");
        }
        for (int v : bag) {
            if (v < 0 || v >= graph.num_vars) throw std::logic_error("tree decomposition: bad vertex");
            bags_of[v].push_back(b);
        }
    }
    for (int v = 0; v < graph.num_vars; ++v) {
        if (bags_of[v].empty()) {
            throw std::logic_error("tree decomposition: vertex coverage violated for " + std::to_string(v));
        }
    }
    auto contains = [&](int b, int v) {
        return std::binary_search(td.bags[b].begin(), td.bags[b].end(), v);
    };
    for (const auto& e : graph.edges) {
        bool covered = false;
        for (int b : bags_of[e.i]) {
            if (contains(b, e.j)) {
                covered = true;
                break;
            }
        }
        if (!covered) {
            throw std::logic_error("tree decomposition: edge coverage violated for (" +
                                   std::to_string(e.i) + ", " + std::to_string(e.j) + ")");
        }
    }
    // The bags holding v induce a subtree iff they span |bags| - 1 tree edges.
    for (int v = 0; v < graph.num_vars; ++v) {
        int links = 0;
        for (int b : bags_of[v]) {
            if (td.parent[b] != -1 && contains(td.parent[b], v)) ++links;
        }
        if (links != static_cast<int>(bags_of[v].size()) - 1) {
            throw std::logic_error("tree decomposition: running intersection violated for " +
                                   std::to_string(v));
        }
    }
}

TreeDecomposition path_decomposition(const ChimeraGraph& graph, const std::vector<int>& order) {
    const int n = graph.num_vars;
    if (static_cast<int>(order.size()) != n) throw std::invalid_argument("path_decomposition: bad order");
    std::vector<int> pos(n, -1);
    for (int t = 0; t < n; ++t) {
        if (order[t] < 0 || order[t] >= n || pos[order[t]] != -1) {
            throw std::invalid_argument("path_decomposition: order is not a permutation");
        }
        pos[order[t]] = t;
    }
    std::vector<int> last(n);
    for (int v = 0; v < n; ++v) last[v] = pos[v];
    for (const auto& e : graph.edges) {
        last[e.i] = std::max(last[e.i], pos[e.j]);
        last[e.j] = std::max(last[e.j], pos[e.i]);
    }
    TreeDecomposition td;
    std::set<int> active;
    for (int t = 0; t < n; ++t) {
        std::vector<int> bag(active.begin(), active.end());
        bag.push_back(order[t]);
        std::sort(bag.begin(), bag.end());
        td.bags.push_back(std::move(bag));
        td.parent.push_back(t + 1 < n ? t + 1 : -1);
        active.insert(order[t]);
        for (auto it = active.begin(); it != active.end();) {
            it = (last[*it] <= t) ? active.erase(it) : std::next(it);
        }
    }
    return td;
}

TreeDecomposition chimera_decomposition(const ChimeraGraph& graph) {
    if (!graph.is_chimera()) throw std::invalid_argument("chimera_decomposition: not a Chimera graph");
    const int rows = graph.rows, cols = graph.cols;
    std::vector<int> order;
    order.reserve(graph.num_vars);
    // Left qubits link vertically, so a row sweep keeps 4*cols of them
    // alive; a column sweep keeps 4*rows right qubits.
    if (cols <= rows) {
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                for (int k = 0; k < 4; ++k) order.push_back(chimera_index(cols, r, c, Side::left, k));
                for (int k = 0; k < 4; ++k) order.push_back(chimera_index(cols, r, c, Side::right, k));
            }
    } else {
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r) {
                for (int k = 0; k < 4; ++k) order.push_back(chimera_index(cols, r, c, Side::right, k));
                for (int k = 0; k < 4; ++k) order.push_back(chimera_index(cols, r, c, Side::left, k));
            }
    }
    auto td = path_decomposition(graph, order);
    check_decomposition(graph, td);
    if (td.width() > 4 * std::min(rows, cols) + 4) {
        throw std::logic_error("chimera_decomposition: width bound exceeded");
    }
    return td;
}

TreeDecomposition min_fill_decomposition(const ChimeraGraph& graph) {
    const int n = graph.num_vars;
    std::vector<std::set<int>> adj(n);
    for (const auto& e : graph.edges) {
        adj[e.i].insert(e.j);
        adj[e.j].insert(e.i);
    }
    std::vector<bool> done(n, false);
    std::vector<int> bag_of(n, -1);
    TreeDecomposition td;
    std::vector<std::vector<int>> neighbours_at_elim;
    std::vector<int> elim_order;
    for (int step = 0; step < n; ++step) {
        int best = -1;
        long best_fill = std::numeric_limits<long>::max();
        for (int v = 0; v < n; ++v) {
            if (done[v]) continue;
            long fill = 0;
            for (auto a = adj[v].begin(); a != adj[v].end(); ++a)
                for (auto b = std::next(a); b != adj[v].end(); ++b)
                    if (!adj[*a].count(*b)) ++fill;
            if (fill < best_fill) {
                best_fill = fill;
                best = v;
            }
        }
        std::vector<int> nb(adj[best].begin(), adj[best].end());
        for (std::size_t a = 0; a < nb.size(); ++a)
            for (std::size_t b = a + 1; b < nb.size(); ++b) {
                adj[nb[a]].insert(nb[b]);
                adj[nb[b]].insert(nb[a]);
            }
        for (int u : nb) adj[u].erase(best);
        done[best] = true;
        bag_of[best] = step;
        elim_order.push_back(best);
        neighbours_at_elim.push_back(nb);
        std::vector<int> bag = nb;
        bag.push_back(best);
        std::sort(bag.begin(), bag.end());
        td.bags.push_back(std::move(bag));
    }
    td.parent.assign(n, -1);
    for (int t = 0; t < n; ++t) {
        int parent = -1;
        for (int u : neighbours_at_elim[t]) {
            if (parent == -1 || bag_of[u] < parent) parent = bag_of[u];
        }
        // Disconnected components hang off the last bag.
        if (parent == -1 && t != n - 1) parent = n - 1;
        td.parent[t] = parent;
    }
    check_decomposition(graph, td);
    return td;
}

std::string to_string(SolveMethod m) { return m == SolveMethod::brute ? "brute" : "treedp"; }

SolveMethod parse_solve_method(const std::string& s) {
    if (s == "brute") return SolveMethod::brute;
    if (s == "treedp") return SolveMethod::treedp;
    throw std::invalid_argument("unknown solve method '" + s + "'");
}

std::string SolveResult::energy_string() const {
    if (integral) {
        if (energy_x3 % 3 == 0) return std::to_string(energy_x3 / 3);
        return std::to_string(energy_x3) + "/3";
    }
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", energy);
    return buf;
}

namespace {

std::uint64_t saturating_mul(std::uint64_t a, std::uint64_t b, bool& saturated) {
    std::uint64_t r;
    if (__builtin_mul_overflow(a, b, &r)) {
        saturated = true;
        return std::numeric_limits<std::uint64_t>::max();
    }
    return r;
}

std::uint64_t saturating_add(std::uint64_t a, std::uint64_t b, bool& saturated) {
    std::uint64_t r;
    if (__builtin_add_overflow(a, b, &r)) {
        saturated = true;
        return std::numeric_limits<std::uint64_t>::max();
    }
    return r;
}

template <class E>
struct Couplings {
    std::vector<E> h;
    std::vector<E> j;
};

template <class E>
bool less_than(E a, E b) {
    if constexpr (std::is_integral_v<E>) {
        return a < b;
    } else {
        return a < b - kFloatTieTolerance;
    }
}

template <class E>
bool ties(E a, E b) {
    if constexpr (std::is_integral_v<E>) {
        return a == b;
    } else {
        return std::abs(a - b) <= kFloatTieTolerance;
    }
}

template <class E>
SolveResult brute_force_impl(const ProblemInstance& inst, const Couplings<E>& cp) {
    const int n = inst.num_vars();
    const auto adj = inst.graph.adjacency();
    std::vector<int> s(n, -1);
    std::vector<E> field(n);
    E energy = 0;
    for (int i = 0; i < n; ++i) energy -= cp.h[i];
    for (std::size_t e = 0; e < inst.graph.edges.size(); ++e) energy += cp.j[e];
    for (int i = 0; i < n; ++i) {
        E f = cp.h[i];
        for (auto [nb, e] : adj[i]) f -= cp.j[e];
        field[i] = f;
    }
    // Lexicographic key: +1 at variable i sets bit (n - 1 - i).
    std::uint64_t key = 0;
    E best = energy;
    std::uint64_t best_key = 0;
    std::uint64_t count = 1;
    const std::uint64_t total = std::uint64_t{1} << n;
    for (std::uint64_t t = 1; t < total; ++t) {
        const int i = std::countr_zero(t);
        energy -= 2 * s[i] * field[i];
        s[i] = -s[i];
        key ^= std::uint64_t{1} << (n - 1 - i);
        for (auto [nb, e] : adj[i]) field[nb] += 2 * s[i] * cp.j[e];
        if (less_than(energy, best)) {
            best = energy;
            best_key = key;
            count = 1;
        } else if (ties(energy, best)) {
            ++count;
            if (key < best_key) best_key = key;
        }
    }
    SolveResult r;
    r.method = SolveMethod::brute;
    r.degeneracy = count;
    r.assignment.resize(n);
    for (int i = 0; i < n; ++i) r.assignment[i] = ((best_key >> (n - 1 - i)) & 1) ? 1 : -1;
    if constexpr (std::is_integral_v<E>) {
        r.integral = true;
        r.energy_x3 = best;
        r.energy = static_cast<double>(best) / 3.0;
    } else {
        r.energy = best;
        r.degeneracy_approximate = true;
    }
    return r;
}

// Per-bag DP table indexed by the assignment of the bag's separator with
// its parent.  Bit p of an index corresponds to sep[p]; a set bit is +1.
template <class E>
struct Message {
    std::vector<E> energy;
    std::vector<std::uint64_t> count;
    // Eliminated-variable bits of the minimizer; narrow storage when the
    // bag eliminates at most 8 variables.
    std::vector<std::uint8_t> choice8;
    std::vector<std::uint32_t> choice32;

    std::uint32_t choice(std::size_t k) const { return choice32.empty() ? choice8[k] : choice32[k]; }
};

struct BagLayout {
    std::vector<int> elim;  // low bits of the bag index
    std::vector<int> sep;   // high bits
    std::vector<int> vars;  // elim followed by sep
};

// Maps a bag assignment x to a child's separator index, one byte of x at a
// time.
struct IndexMap {
    std::vector<std::array<std::uint32_t, 256>> lut;

    IndexMap(const std::vector<int>& bag_vars, const std::vector<int>& child_sep) {
        const std::size_t nbytes = (bag_vars.size() + 7) / 8;
        lut.assign(nbytes, {});
        std::vector<int> target(bag_vars.size(), -1);
        for (std::size_t q = 0; q < child_sep.size(); ++q) {
            auto it = std::find(bag_vars.begin(), bag_vars.end(), child_sep[q]);
            if (it == bag_vars.end()) throw std::logic_error("treedp: separator not in parent bag");
            target[it - bag_vars.begin()] = static_cast<int>(q);
        }
        for (std::size_t byte = 0; byte < nbytes; ++byte) {
            for (int v = 0; v < 256; ++v) {
                std::uint32_t idx = 0;
                for (int bit = 0; bit < 8; ++bit) {
                    const std::size_t p = byte * 8 + bit;
                    if (p < bag_vars.size() && ((v >> bit) & 1) && target[p] >= 0) {
                        idx |= std::uint32_t{1} << target[p];
                    }
                }
                lut[byte][v] = idx;
            }
        }
    }

    std::uint32_t operator()(std::uint64_t x) const {
        std::uint32_t idx = 0;
        for (std::size_t b = 0; b < lut.size(); ++b) idx |= lut[b][(x >> (8 * b)) & 0xff];
        return idx;
    }
};

constexpr int kMaxBagSize = 30;

template <class E>
SolveResult treedp_impl(const ProblemInstance& inst, const TreeDecomposition& td,
                        const Couplings<E>& cp) {
    const int n = inst.num_vars();
    const int nb = static_cast<int>(td.bags.size());
    check_decomposition(inst.graph, td);
    if (td.width() + 1 > kMaxBagSize) {
        throw std::invalid_argument("treedp: bag size " + std::to_string(td.width() + 1) +
                                    " exceeds limit " + std::to_string(kMaxBagSize));
    }

    std::vector<std::vector<int>> children(nb);
    int root = -1;
    for (int b = 0; b < nb; ++b) {
        if (td.parent[b] == -1) root = b;
        else children[td.parent[b]].push_back(b);
    }
    std::vector<int> preorder;
    {
        std::vector<int> stack{root};
        while (!stack.empty()) {
            const int b = stack.back();
            stack.pop_back();
            preorder.push_back(b);
            for (auto it = children[b].rbegin(); it != children[b].rend(); ++it) stack.push_back(*it);
        }
    }
    std::vector<int> depth(nb, 0);
    for (int b : preorder) depth[b] = td.parent[b] == -1 ? 0 : depth[td.parent[b]] + 1;

    std::vector<BagLayout> layout(nb);
    for (int b = 0; b < nb; ++b) {
        const auto& bag = td.bags[b];
        for (int v : bag) {
            const bool in_parent =
                td.parent[b] != -1 &&
                std::binary_search(td.bags[td.parent[b]].begin(), td.bags[td.parent[b]].end(), v);
            (in_parent ? layout[b].sep : layout[b].elim).push_back(v);
        }
        layout[b].vars = layout[b].elim;
        layout[b].vars.insert(layout[b].vars.end(), layout[b].sep.begin(), layout[b].sep.end());
    }

    // Each variable is eliminated in exactly one bag (the top of its
    // subtree).  A field goes there; a coupler goes to the deeper of its two
    // endpoints' elimination bags, which contains both endpoints.
    std::vector<int> elim_bag(n, -1);
    for (int b = 0; b < nb; ++b)
        for (int v : layout[b].elim) elim_bag[v] = b;

    struct FieldTerm {
        int bit;
        E value;
    };
    struct PairTerm {
        int bit_a, bit_b;
        E value;
    };
    std::vector<std::vector<FieldTerm>> fields(nb);
    std::vector<std::vector<PairTerm>> pairs(nb);
    auto bit_of = [&](int b, int v) {
        const auto& vars = layout[b].vars;
        return static_cast<int>(std::find(vars.begin(), vars.end(), v) - vars.begin());
    };
    for (int v = 0; v < n; ++v) fields[elim_bag[v]].push_back({bit_of(elim_bag[v], v), cp.h[v]});
    for (std::size_t e = 0; e < inst.graph.edges.size(); ++e) {
        const auto& ed = inst.graph.edges[e];
        const int bi = elim_bag[ed.i], bj = elim_bag[ed.j];
        const int b = depth[bi] >= depth[bj] ? bi : bj;
        pairs[b].push_back({bit_of(b, ed.i), bit_of(b, ed.j), cp.j[e]});
    }

    std::vector<Message<E>> msg(nb);
    bool saturated = false;
    for (auto it = preorder.rbegin(); it != preorder.rend(); ++it) {
        const int b = *it;
        const auto& lay = layout[b];
        const int ne = static_cast<int>(lay.elim.size());
        const int ns = static_cast<int>(lay.sep.size());
        std::vector<IndexMap> maps;
        for (int c : children[b]) maps.emplace_back(lay.vars, layout[c].sep);

        Message<E> out;
        const std::size_t nsep = std::size_t{1} << ns;
        out.energy.resize(nsep);
        out.count.resize(nsep);
        if (ne <= 8) out.choice8.resize(nsep);
        else out.choice32.resize(nsep);
        const std::uint64_t nelim = std::uint64_t{1} << ne;
        for (std::uint64_t sep = 0; sep < nsep; ++sep) {
            E best{};
            std::uint64_t best_count = 0;
            std::uint32_t best_choice = 0;
            bool have = false;
            for (std::uint64_t el = 0; el < nelim; ++el) {
                const std::uint64_t x = (sep << ne) | el;
                E energy = 0;
                for (const auto& f : fields[b]) energy += ((x >> f.bit) & 1) ? f.value : -f.value;
                for (const auto& p : pairs[b]) {
                    energy += (((x >> p.bit_a) ^ (x >> p.bit_b)) & 1) ? -p.value : p.value;
                }
                std::uint64_t count = 1;
                for (std::size_t k = 0; k < maps.size(); ++k) {
                    const auto& cm = msg[children[b][k]];
                    const std::uint32_t idx = maps[k](x);
                    energy += cm.energy[idx];
                    count = saturating_mul(count, cm.count[idx], saturated);
                }
                if (!have || less_than(energy, best)) {
                    best = energy;
                    best_count = count;
                    best_choice = static_cast<std::uint32_t>(el);
                    have = true;
                } else if (ties(energy, best)) {
                    best_count = saturating_add(best_count, count, saturated);
                }
            }
            out.energy[sep] = best;
            out.count[sep] = best_count;
            if (ne <= 8) out.choice8[sep] = static_cast<std::uint8_t>(best_choice);
            else out.choice32[sep] = best_choice;
        }
        msg[b] = std::move(out);
        for (int c : children[b]) {
            std::vector<E>().swap(msg[c].energy);
            std::vector<std::uint64_t>().swap(msg[c].count);
        }
    }

    SolveResult r;
    r.method = SolveMethod::treedp;
    r.width = td.width();
    r.assignment.assign(n, 0);
    for (int b : preorder) {
        const auto& lay = layout[b];
        std::uint64_t sep = 0;
        for (std::size_t q = 0; q < lay.sep.size(); ++q) {
            if (r.assignment[lay.sep[q]] == 1) sep |= std::uint64_t{1} << q;
        }
        const std::uint32_t el = msg[b].choice(sep);
        for (std::size_t q = 0; q < lay.elim.size(); ++q) {
            r.assignment[lay.elim[q]] = ((el >> q) & 1) ? 1 : -1;
        }
    }
    const E best = msg[root].energy[0];
    r.degeneracy = msg[root].count[0];
    r.degeneracy_saturated = saturated;
    if constexpr (std::is_integral_v<E>) {
        r.integral = true;
        r.energy_x3 = best;
        r.energy = static_cast<double>(best) / 3.0;
    } else {
        r.energy = best;
        r.degeneracy_approximate = true;
    }
    return r;
}

template <class F>
SolveResult dispatch(const ProblemInstance& inst, F&& run) {
    validate(inst);
    if (auto scaled = scaled_by_three(inst)) {
        return run(Couplings<std::int64_t>{std::move(scaled->h), std::move(scaled->j)});
    }
    return run(Couplings<double>{inst.h, inst.j});
}

}  // namespace

SolveResult brute_force(const ProblemInstance& instance, int max_vars) {
    if (instance.num_vars() > max_vars || instance.num_vars() > 62) {
        throw std::invalid_argument("brute_force: " + std::to_string(instance.num_vars()) +
                                    " variables exceeds guard " + std::to_string(max_vars));
    }
    return dispatch(instance, [&](const auto& cp) { return brute_force_impl(instance, cp); });
}

SolveResult treedp_solve(const ProblemInstance& instance, const TreeDecomposition& td) {
    return dispatch(instance, [&](const auto& cp) { return treedp_impl(instance, td, cp); });
}

SolveResult treedp_solve(const ProblemInstance& instance) {
    const auto td = instance.graph.is_chimera() ? chimera_decomposition(instance.graph)
                                                : min_fill_decomposition(instance.graph);
    return treedp_solve(instance, td);
}

SolveResult solve(const ProblemInstance& instance, SolveMethod method) {
    return method == SolveMethod::brute ? brute_force(instance) : treedp_solve(instance);
}

std::uint64_t degeneracy(const ProblemInstance& instance) {
    const auto r = instance.num_vars() <= 24 ? brute_force(instance) : treedp_solve(instance);
    return r.degeneracy;
}

SolveResult timed_solve(const ProblemInstance& instance, SolveMethod method, int repeats,
                        std::vector<double>* durations) {
    if (repeats < 1) throw std::invalid_argument("timed_solve: repeats must be >= 1");
    SolveResult first;
    double best = std::numeric_limits<double>::infinity();
    for (int k = 0; k < repeats; ++k) {
        const auto t0 = std::chrono::steady_clock::now();
        SolveResult r = solve(instance, method);
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (durations) durations->push_back(dt);
        best = std::min(best, dt);
        if (k == 0) {
            first = std::move(r);
        } else if (r.energy_x3 != first.energy_x3 || r.energy != first.energy ||
                   r.assignment != first.assignment || r.degeneracy != first.degeneracy) {
            throw std::runtime_error("timed_solve: solver returned different results across repeats");
        }
    }
    first.wall_time_s = best;
    return first;
}

}  // namespace aqo
