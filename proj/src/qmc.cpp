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

#include "aqo/qmc.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <mutex>
#include <numeric>

#include <Eigen/Dense>

#include "aqo/parallel.hpp"

namespace aqo {

namespace {

constexpr int kRefreshInterval = 1024;  // sweeps between cache rebuilds
constexpr std::uint64_t kExchangeStream = 0xffffffffULL;
constexpr double kPilotCutoff = 1e-6;  // relative eigenvalue floor of C(t0)
constexpr double kPilotTau0 = 0.5;    // ns
constexpr double kPilotTau1 = 2.0;    // ns

std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}

void check_grid(const std::vector<double>& grid) {
    if (grid.empty()) throw std::invalid_argument("pimc: empty s-grid");
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!(grid[k] >= 0.0 && grid[k] <= 1.0)) throw std::invalid_argument("pimc: s outside [0, 1]");
        if (k > 0 && !(grid[k] > grid[k - 1])) {
            throw std::invalid_argument("pimc: s-grid not strictly increasing");
        }
    }
}

}  // namespace

void PimcConfig::validate() const {
    if (n_slices < 4 || n_slices % 2 != 0) throw std::invalid_argument("pimc: n_slices must be even and >= 4");
    if (!(d_tau > 0.0)) throw std::invalid_argument("pimc: d_tau must be positive");
    if (bins < 2) throw std::invalid_argument("pimc: need >= 2 bins");
    if (swap_interval < 1 || measure_interval < 1) throw std::invalid_argument("pimc: intervals must be >= 1");
    if (sweeps_equil < 0 || sweeps_measure < 0 || sweeps_pilot < 0 || feedback_rounds < 0 || feedback_sweeps < 0) {
        throw std::invalid_argument("pimc: negative sweep count");
    }
    if (!(s_min > 0.0 && s_min < s_max && s_max < 1.0)) {
        throw std::invalid_argument("pimc: need 0 < s_min < s_max < 1");
    }
}

ClassicalAction build_action(const ProblemInstance& instance, double a, double b, double s, double d_tau) {
    if (!(a > 0.0)) {
        throw std::domain_error("build_action: A(s) = 0 at s = " + std::to_string(s) +
                                " (classical point, use the classical solver)");
    }
    ClassicalAction act;
    act.s = s;
    act.a = a;
    act.b = b;
    act.field_scale = d_tau * b;
    const double x = d_tau * a;
    act.tanh_a = std::tanh(x);
    act.coth_a = 1.0 / act.tanh_a;
    act.j_perp = -0.5 * std::log(act.tanh_a);
    act.fields.resize(instance.h.size());
    act.couplings.resize(instance.j.size());
    for (std::size_t i = 0; i < instance.h.size(); ++i) act.fields[i] = act.field_scale * instance.h[i];
    for (std::size_t e = 0; e < instance.j.size(); ++e) act.couplings[e] = act.field_scale * instance.j[e];

    if (const auto ints = scaled_by_three(instance)) {
        std::vector<int> reach(instance.h.size(), 0);
        for (std::size_t i = 0; i < reach.size(); ++i) reach[i] = static_cast<int>(std::llabs(ints->h[i]));
        for (std::size_t e = 0; e < ints->j.size(); ++e) {
            const int w = static_cast<int>(std::llabs(ints->j[e]));
            reach[instance.graph.edges[e].i] += w;
            reach[instance.graph.edges[e].j] += w;
        }
        act.field3_max = reach.empty() ? 0 : *std::max_element(reach.begin(), reach.end());
        act.threshold.resize(static_cast<std::size_t>(2 * act.field3_max + 1) * 3);
        for (int u = -act.field3_max; u <= act.field3_max; ++u) {
            for (int v = -2; v <= 2; v += 2) {
                const double ds = -2.0 * (act.field_scale * u / 3.0 - act.j_perp * v);
                const double p = std::exp(-ds);
                std::uint64_t& t = act.threshold[(u + act.field3_max) * 3 + (v / 2 + 1)];
                if (ds <= 0.0) {
                    t = ClassicalAction::kAlwaysAccept;
                } else {
                    // p <= 1 - 2^-53 here, so p * 2^64 fits.
                    t = static_cast<std::uint64_t>(std::ldexp(p, 64));
                }
            }
        }
    }
    return act;
}

ClassicalAction build_action(const ProblemInstance& instance, const Schedule& schedule, double s,
                             const PimcConfig& config) {
    const auto env = schedule.eval(s);
    return build_action(instance, env.a, env.b, s, config.d_tau);
}

double Replica::problem_energy() const {
    return std::accumulate(slice_energy.begin(), slice_energy.end(), 0.0);
}

void Replica::refresh(const ProblemInstance& instance) {
    const int p = n_slices;
    slice_energy.assign(p, 0.0);
    for (int k = 0; k < p; ++k) {
        double e = 0.0;
        for (int i = 0; i < num_vars; ++i) e += instance.h[i] * spins[i * p + k];
        for (std::size_t q = 0; q < instance.graph.edges.size(); ++q) {
            const auto& edge = instance.graph.edges[q];
            e += instance.j[q] * spins[edge.i * p + k] * spins[edge.j * p + k];
        }
        slice_energy[k] = e;
    }
    std::int64_t bonds = 0;
    for (int i = 0; i < num_vars; ++i) {
        const std::int8_t* row = &spins[i * p];
        for (int k = 0; k < p; ++k) bonds += row[k] * row[(k + 1) % p];
    }
    time_bond_sum = bonds;
}

Replica make_replica(const ProblemInstance& instance, int n_slices, Xoshiro256& rng) {
    Replica r;
    r.num_vars = instance.num_vars();
    r.n_slices = n_slices;
    r.spins.resize(static_cast<std::size_t>(r.num_vars) * n_slices);
    for (auto& s : r.spins) s = (rng() >> 63) ? 1 : -1;
    r.refresh(instance);
    return r;
}

SpinModel::SpinModel(const ProblemInstance& instance) : num_vars(instance.num_vars()), h(instance.h) {
    const auto adj = instance.graph.adjacency();
    offsets.push_back(0);
    for (int i = 0; i < num_vars; ++i) {
        for (auto [nb, e] : adj[i]) {
            neighbors.push_back(nb);
            couplings.push_back(instance.j[e]);
        }
        offsets.push_back(static_cast<int>(neighbors.size()));
        max_degree = std::max(max_degree, offsets[i + 1] - offsets[i]);
    }
    if (const auto ints = scaled_by_three(instance)) {
        for (auto v : ints->h) h3.push_back(static_cast<int>(v));
        for (int i = 0; i < num_vars; ++i) {
            for (auto [nb, e] : adj[i]) couplings3.push_back(static_cast<int>(ints->j[e]));
        }
    }
}

namespace {

constexpr int kMaxTableDegree = 16;

template <int Deg>
std::uint64_t sweep_site(std::int8_t* __restrict row, const std::int8_t* const* nb_rows, const int* w,
                         int h3, int deg, int p, int off, const std::uint64_t* __restrict thr,
                         double* __restrict slice_energy, std::int64_t& bonds, Xoshiro256& rng) {
    const int d = Deg > 0 ? Deg : deg;
    const std::int8_t* nb[kMaxTableDegree];
    int wl[kMaxTableDegree];
    for (int q = 0; q < d; ++q) {
        nb[q] = nb_rows[q];
        wl[q] = w[q];
    }
    std::uint64_t accepted = 0;
    std::int64_t b = bonds;
    for (int parity = 0; parity < 2; ++parity) {
        for (int k = parity; k < p; k += 2) {
            int e3 = h3;
            for (int q = 0; q < d; ++q) e3 += wl[q] * nb[q][k];
            const int s = row[k];
            const int tn = row[k == 0 ? p - 1 : k - 1] + row[k + 1 == p ? 0 : k + 1];
            const std::uint64_t t = thr[(s * e3 + off) * 3 + (s * tn / 2 + 1)];
            // Branch-free accept: the draw is consumed for every proposal.
            const int acc = static_cast<int>((t == ClassicalAction::kAlwaysAccept) | (rng() < t));
            row[k] = static_cast<std::int8_t>(s - 2 * s * acc);
            slice_energy[k] -= acc * (2.0 * s * e3 / 3.0);
            b -= acc * 2 * s * tn;
            accepted += acc;
        }
    }
    bonds = b;
    return accepted;
}

SweepStats sweep_table(Replica& replica, const SpinModel& model, const ClassicalAction& action,
                       Xoshiro256& rng) {
    const int p = replica.n_slices;
    const int off = action.field3_max;
    const std::uint64_t* thr = action.threshold.data();
    std::int8_t* spins = replica.spins.data();
    double* slice_energy = replica.slice_energy.data();
    std::uint64_t accepted = 0;
    std::int64_t bonds = replica.time_bond_sum;
    const std::int8_t* nb_rows[kMaxTableDegree];
    for (int i = 0; i < model.num_vars; ++i) {
        std::int8_t* row = spins + static_cast<std::ptrdiff_t>(i) * p;
        const int nb_begin = model.offsets[i], deg = model.offsets[i + 1] - nb_begin;
        for (int q = 0; q < deg; ++q) nb_rows[q] = spins + static_cast<std::ptrdiff_t>(model.neighbors[nb_begin + q]) * p;
        const int* w = model.couplings3.data() + nb_begin;
        const int h3 = model.h3[i];
        switch (deg) {
            case 4: accepted += sweep_site<4>(row, nb_rows, w, h3, deg, p, off, thr, slice_energy, bonds, rng); break;
            case 5: accepted += sweep_site<5>(row, nb_rows, w, h3, deg, p, off, thr, slice_energy, bonds, rng); break;
            case 6: accepted += sweep_site<6>(row, nb_rows, w, h3, deg, p, off, thr, slice_energy, bonds, rng); break;
            default: accepted += sweep_site<0>(row, nb_rows, w, h3, deg, p, off, thr, slice_energy, bonds, rng);
        }
    }
    replica.time_bond_sum = bonds;
    return {static_cast<std::uint64_t>(model.num_vars) * p, accepted};
}

}  // namespace

SweepStats metropolis_sweep(Replica& replica, const SpinModel& model, const ClassicalAction& action,
                            Xoshiro256& rng) {
    if (model.integral() && action.field3_max >= 0 && model.max_degree <= kMaxTableDegree) return sweep_table(replica, model, action, rng);
    const int p = replica.n_slices;
    const double fs = action.field_scale;
    const double jp = action.j_perp;
    std::int8_t* spins = replica.spins.data();
    double* slice_energy = replica.slice_energy.data();
    SweepStats st;
    for (int i = 0; i < model.num_vars; ++i) {
        std::int8_t* row = spins + static_cast<std::ptrdiff_t>(i) * p;
        const int nb_begin = model.offsets[i], nb_end = model.offsets[i + 1];
        for (int parity = 0; parity < 2; ++parity) {
            for (int k = parity; k < p; k += 2) {
                double e_loc = model.h[i];
                for (int q = nb_begin; q < nb_end; ++q) {
                    e_loc += model.couplings[q] * spins[model.neighbors[q] * p + k];
                }
                const int s = row[k];
                const int tn = row[k == 0 ? p - 1 : k - 1] + row[k + 1 == p ? 0 : k + 1];
                const double ds = -2.0 * s * (fs * e_loc - jp * tn);
                ++st.proposed;
                // exp(-ds) underflows to 0 above ~745; uniform() < 0 never holds.
                if (ds <= 0.0 || rng.uniform() < std::exp(-std::min(ds, 800.0))) {
                    row[k] = static_cast<std::int8_t>(-s);
                    slice_energy[k] -= 2.0 * s * e_loc;
                    replica.time_bond_sum -= 2 * s * tn;
                    ++st.accepted;
                }
            }
        }
    }
    return st;
}

std::vector<double> ExchangeStats::acceptance() const {
    std::vector<double> out(attempts.size(), 0.0);
    for (std::size_t k = 0; k < attempts.size(); ++k) {
        out[k] = attempts[k] ? double(accepts[k]) / double(attempts[k]) : 0.0;
    }
    return out;
}

InsufficientRoundTrips::InsufficientRoundTrips(std::uint64_t trips, std::size_t n)
    : std::runtime_error("feedback: insufficient round trips (" + std::to_string(trips) + " observed, " +
                         std::to_string(n) + " needed for " + std::to_string(n) + " slots)"),
      round_trips(trips),
      slots(n) {}

double exchange_probability(const ClassicalAction& lo, const ClassicalAction& hi, const Replica& x_lo,
                            const Replica& x_hi) {
    const double e_lo = x_lo.problem_energy(), e_hi = x_hi.problem_energy();
    const double ds = lo.action(e_hi, x_hi.time_bond_sum) + hi.action(e_lo, x_lo.time_bond_sum) -
                      lo.action(e_lo, x_lo.time_bond_sum) - hi.action(e_hi, x_hi.time_bond_sum);
    return ds <= 0.0 ? 1.0 : std::exp(-ds);
}

PimcEnsemble::PimcEnsemble(const ProblemInstance& instance, const Schedule& schedule,
                           std::vector<double> grid, const PimcConfig& config)
    : instance_(&instance),
      schedule_(&schedule),
      config_(config),
      model_(instance),
      exchange_rng_(derive_seed(config.seed, kExchangeStream)) {
    config_.validate();
    set_grid(std::move(grid));
    const std::size_t k = grid_.size();
    for (std::size_t slot = 0; slot < k; ++slot) {
        slot_rng_.emplace_back(derive_seed(config_.seed, slot));
        replicas_.push_back(make_replica(instance, config_.n_slices, slot_rng_.back()));
        replicas_.back().identity = static_cast<int>(slot);
    }
    sweep_stats_.assign(k, {});
    reset_exchange_statistics();
    reset_flow_statistics();
    update_flow();
}

void PimcEnsemble::set_grid(std::vector<double> grid) {
    check_grid(grid);
    if (!replicas_.empty() && grid.size() != replicas_.size()) {
        throw std::invalid_argument("pimc: grid size must stay fixed");
    }
    std::vector<ClassicalAction> actions;
    for (double s : grid) actions.push_back(build_action(*instance_, *schedule_, s, config_));
    grid_ = std::move(grid);
    actions_ = std::move(actions);
}

void PimcEnsemble::sweep_all() {
    parallel_for(replicas_.size(), config_.workers, [&](std::size_t k) {
        const auto st = metropolis_sweep(replicas_[k], model_, actions_[k], slot_rng_[k]);
        sweep_stats_[k].proposed += st.proposed;
        sweep_stats_[k].accepted += st.accepted;
    });
}

void PimcEnsemble::exchange_round() {
    const std::size_t n = replicas_.size();
    for (std::size_t k = exchange_rounds_ % 2; k + 1 < n; k += 2) {
        const double p = exchange_probability(actions_[k], actions_[k + 1], replicas_[k], replicas_[k + 1]);
        ++exchange_.attempts[k];
        if (exchange_rng_.uniform() < p) {
            std::swap(replicas_[k], replicas_[k + 1]);
            ++exchange_.accepts[k];
        }
    }
    ++exchange_rounds_;
    update_flow();
}

void PimcEnsemble::run(int sweeps) {
    for (int t = 0; t < sweeps; ++t) {
        sweep_all();
        if ((t + 1) % config_.swap_interval == 0) exchange_round();
        if ((t + 1) % kRefreshInterval == 0) {
            for (auto& r : replicas_) r.refresh(*instance_);
        }
        if (observer_) observer_(*this);
    }
}

void PimcEnsemble::update_flow() {
    const std::size_t n = replicas_.size();
    if (n < 2) return;
    if (replicas_.front().flow_tag == FlowTag::down) ++round_trips_;
    replicas_.front().flow_tag = FlowTag::up;
    replicas_.back().flow_tag = FlowTag::down;
    for (std::size_t k = 0; k < n; ++k) {
        if (replicas_[k].flow_tag == FlowTag::up) ++n_up_[k];
        if (replicas_[k].flow_tag == FlowTag::down) ++n_down_[k];
    }
}

void PimcEnsemble::reset_flow_statistics() {
    n_up_.assign(grid_.size(), 0);
    n_down_.assign(grid_.size(), 0);
    round_trips_ = 0;
}

void PimcEnsemble::reset_exchange_statistics() {
    const std::size_t pairs = grid_.empty() ? 0 : grid_.size() - 1;
    exchange_.attempts.assign(pairs, 0);
    exchange_.accepts.assign(pairs, 0);
    for (auto& s : sweep_stats_) s = {};
}

FeedbackResult feedback_grid(const std::vector<double>& grid, const std::vector<std::uint64_t>& n_up,
                             const std::vector<std::uint64_t>& n_down) {
    FeedbackResult out;
    out.grid = grid;
    const std::size_t n = grid.size();
    if (n_up.size() != n || n_down.size() != n) throw std::invalid_argument("feedback: size mismatch");
    out.fraction.assign(n, std::nan(""));
    if (n < 3) return out;

    // Pool-adjacent-violators for a non-increasing weighted fit of f.
    struct Block {
        double value, weight;
        std::size_t first, last;
    };
    std::vector<std::size_t> idx;
    std::vector<Block> blocks;
    for (std::size_t k = 0; k < n; ++k) {
        const double w = double(n_up[k]) + double(n_down[k]);
        if (w == 0) continue;
        idx.push_back(k);
        blocks.push_back({double(n_up[k]) / w, w, idx.size() - 1, idx.size() - 1});
        while (blocks.size() > 1 && blocks[blocks.size() - 2].value < blocks.back().value) {
            Block b = blocks.back();
            blocks.pop_back();
            Block& a = blocks.back();
            a.value = (a.value * a.weight + b.value * b.weight) / (a.weight + b.weight);
            a.weight += b.weight;
            a.last = b.last;
        }
    }
    if (idx.size() < 2) {
        out.warning = "feedback: fewer than two slots with tagged visits; grid unchanged";
        return out;
    }
    std::vector<double> s(idx.size()), f(idx.size());
    for (const auto& b : blocks) {
        for (std::size_t q = b.first; q <= b.last; ++q) {
            s[q] = grid[idx[q]];
            f[q] = b.value;
            out.fraction[idx[q]] = b.value;
        }
    }
    const double f_hi = f.front(), f_lo = f.back();
    if (!(f_hi - f_lo > 1e-12)) {
        out.warning = "feedback: flow fraction not decreasing after smoothing; grid unchanged";
        return out;
    }
    std::vector<double> next(n);
    next.front() = grid.front();
    next.back() = grid.back();
    std::size_t seg = 0;
    for (std::size_t k = 1; k + 1 < n; ++k) {
        const double target = f_hi - (f_hi - f_lo) * double(k) / double(n - 1);
        while (seg + 1 < f.size() && !(f[seg + 1] <= target && f[seg] > f[seg + 1])) ++seg;
        if (seg + 1 >= f.size()) {
            out.warning = "feedback: inversion failed; grid unchanged";
            return out;
        }
        const double t = (f[seg] - target) / (f[seg] - f[seg + 1]);
        next[k] = s[seg] + t * (s[seg + 1] - s[seg]);
    }
    for (std::size_t k = 1; k < n; ++k) {
        if (!(next[k] > next[k - 1])) {
            out.warning = "feedback: new grid not strictly increasing; grid unchanged";
            return out;
        }
    }
    double shift = 0.0;
    for (std::size_t k = 0; k < n; ++k) shift = std::max(shift, std::abs(next[k] - grid[k]));
    out.changed = shift > 0.0;
    out.grid = std::move(next);
    return out;
}

FeedbackResult feedback_optimize(const PimcEnsemble& ensemble) {
    if (ensemble.round_trips() < ensemble.size()) {
        throw InsufficientRoundTrips(ensemble.round_trips(), ensemble.size());
    }
    return feedback_grid(ensemble.grid(), ensemble.flow_up(), ensemble.flow_down());
}

SliceSeries slice_series(const Replica& replica, const ClassicalAction& action) {
    const int p = replica.n_slices;
    SliceSeries out;
    out.problem = replica.slice_energy;
    out.magnetization.assign(p, 0.0);
    std::vector<int> agree(p, 0);
    for (int i = 0; i < replica.num_vars; ++i) {
        const std::int8_t* row = &replica.spins[static_cast<std::size_t>(i) * p];
        for (int k = 0; k < p; ++k) {
            out.magnetization[k] += row[k];
            agree[k] += row[k] == row[k + 1 == p ? 0 : k + 1];
        }
    }
    std::vector<double> bond(p);
    for (int k = 0; k < p; ++k) {
        bond[k] = -(agree[k] * action.tanh_a + (replica.num_vars - agree[k]) * action.coth_a);
    }
    out.driver.resize(p);
    for (int k = 0; k < p; ++k) out.driver[k] = 0.5 * (bond[k == 0 ? p - 1 : k - 1] + bond[k]);
    return out;
}

// ---- projection pilot -------------------------------------------------------

ProjectionPilot::ProjectionPilot(int n_slices, int num_vars, int lag0, int lag1)
    : n_slices_(n_slices), num_vars_(num_vars), lag0_(lag0), lag1_(lag1) {
    if (!(lag0 >= 0 && lag0 < lag1 && lag1 <= n_slices / 2)) {
        throw std::invalid_argument("projection pilot: need 0 <= lag0 < lag1 <= P/2");
    }
    const std::size_t n = num_vars + 1;
    sum_.assign(n, 0.0);
    prod0_.assign(n * n, 0.0);
    prod1_.assign(n * n, 0.0);
}

void ProjectionPilot::add(const Replica& replica) {
    const int p = n_slices_;
    const int n = num_vars_ + 1;
    std::vector<double> x(static_cast<std::size_t>(n) * p);
    for (int i = 0; i < num_vars_; ++i) {
        for (int k = 0; k < p; ++k) x[i * p + k] = replica.spins[i * p + k];
    }
    std::copy(replica.slice_energy.begin(), replica.slice_energy.end(), x.begin() + num_vars_ * p);
    const double inv_p = 1.0 / p;
    for (int i = 0; i < n; ++i) {
        double t = 0.0;
        for (int k = 0; k < p; ++k) t += x[i * p + k];
        sum_[i] += t * inv_p;
    }
    auto lagged = [&](int lag, std::vector<double>& acc) {
        for (int i = 0; i < n; ++i) {
            const double* xi = &x[i * p];
            for (int j = 0; j < n; ++j) {
                const double* xj = &x[j * p];
                double t = 0.0;
                for (int k = 0; k < p - lag; ++k) t += xi[k] * xj[k + lag];
                for (int k = p - lag; k < p; ++k) t += xi[k] * xj[k + lag - p];
                acc[i * n + j] += t * inv_p;
            }
        }
    };
    lagged(lag0_, prod0_);
    lagged(lag1_, prod1_);
    ++count_;
}

std::vector<double> ProjectionPilot::solve() const {
    const int n = num_vars_ + 1;
    std::vector<double> fallback(n, 0.0);
    fallback.back() = 1.0;
    if (count_ < 2) return fallback;
    const double inv = 1.0 / double(count_);
    Eigen::MatrixXd c0(n, n), c1(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double sub = sum_[i] * sum_[j] * inv * inv;
            c0(i, j) = prod0_[i * n + j] * inv - sub;
            c1(i, j) = prod1_[i * n + j] * inv - sub;
        }
    }
    c0 = 0.5 * (c0 + c0.transpose()).eval();
    c1 = 0.5 * (c1 + c1.transpose()).eval();
    // Whiten with the resolvable part of C(t0).
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e0(c0);
    const Eigen::VectorXd& lam = e0.eigenvalues();
    const double top = lam.maxCoeff();
    if (!(top > 0.0)) return fallback;
    std::vector<int> keep;
    for (int i = 0; i < n; ++i)
        if (lam(i) > kPilotCutoff * top) keep.push_back(i);
    Eigen::MatrixXd w(n, keep.size());
    for (std::size_t q = 0; q < keep.size(); ++q) {
        w.col(q) = e0.eigenvectors().col(keep[q]) / std::sqrt(lam(keep[q]));
    }
    const Eigen::MatrixXd m = w.transpose() * c1 * w;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> e1(0.5 * (m + m.transpose()));
    const Eigen::VectorXd v = w * e1.eigenvectors().col(e1.eigenvalues().size() - 1);
    std::vector<double> out(v.data(), v.data() + n);
    if (!std::all_of(out.begin(), out.end(), [](double c) { return std::isfinite(c); })) return fallback;
    return out;
}

// ---- correlator accumulation ------------------------------------------------

namespace {

constexpr int kChannels = 4;  // P, I, M, V
constexpr int kPairs = 7;     // pp, ii, ip, mm, vv, iv, pv
constexpr int kPairChannels[kPairs][2] = {{0, 0}, {1, 1}, {1, 0}, {2, 2}, {3, 3}, {1, 3}, {0, 3}};

}  // namespace

struct CorrelatorAccumulator::Bin {
    std::uint64_t count = 0;
    double sum[kChannels] = {0, 0, 0, 0};
    std::vector<double> site;
    std::vector<double> corr[kPairs];

    Bin(int lags, int n) : site(n, 0.0) {
        for (auto& c : corr) c.assign(lags, 0.0);
    }
    void accumulate(const Bin& o, double sign) {
        count = sign > 0 ? count + o.count : count - o.count;
        for (int c = 0; c < kChannels; ++c) sum[c] += sign * o.sum[c];
        for (std::size_t i = 0; i < site.size(); ++i) site[i] += sign * o.site[i];
        for (int q = 0; q < kPairs; ++q)
            for (std::size_t m = 0; m < corr[q].size(); ++m) corr[q][m] += sign * o.corr[q][m];
    }
};

struct CorrelatorAccumulator::Fft {
    int p;
    double* in;
    fftw_complex* spec[kChannels];
    fftw_complex* prod;
    double* out;
    fftw_plan forward;
    fftw_plan backward;

    explicit Fft(int n) : p(n) {
        const int nc = n / 2 + 1;
        in = fftw_alloc_real(n);
        out = fftw_alloc_real(n);
        for (auto& s : spec) s = fftw_alloc_complex(nc);
        prod = fftw_alloc_complex(nc);
        std::lock_guard lock(fftw_planner_mutex());
        forward = fftw_plan_dft_r2c_1d(n, in, spec[0], FFTW_ESTIMATE);
        backward = fftw_plan_dft_c2r_1d(n, prod, out, FFTW_ESTIMATE);
    }
    ~Fft() {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(forward);
        fftw_destroy_plan(backward);
        fftw_free(in);
        fftw_free(out);
        for (auto& s : spec) fftw_free(s);
        fftw_free(prod);
    }
    Fft(const Fft&) = delete;
    Fft& operator=(const Fft&) = delete;

    void transform(const std::vector<double>& x, int slot) {
        std::copy(x.begin(), x.end(), in);
        fftw_execute_dft_r2c(forward, in, spec[slot]);
    }
    // out[m] = (1/P) sum_k x_k y_{k+m}, circular.
    void cross(int x, int y) {
        const int nc = p / 2 + 1;
        for (int q = 0; q < nc; ++q) {
            const std::complex<double> a(spec[x][q][0], -spec[x][q][1]);
            const std::complex<double> b(spec[y][q][0], spec[y][q][1]);
            const auto c = a * b;
            prod[q][0] = c.real();
            prod[q][1] = c.imag();
        }
        fftw_execute_dft_c2r(backward, prod, out);
        const double scale = 1.0 / (double(p) * double(p));
        for (int m = 0; m < p; ++m) out[m] *= scale;
    }
};

CorrelatorAccumulator::CorrelatorAccumulator(int n_slices, int num_vars, int bins, std::vector<double> projection)
    : n_slices_(n_slices), num_vars_(num_vars), bins_(bins), projection_(std::move(projection)) {
    if (n_slices < 4 || n_slices % 2) throw std::invalid_argument("correlators: n_slices must be even >= 4");
    if (bins < 2) throw std::invalid_argument("correlators: need >= 2 bins");
    if (!projection_.empty() && projection_.size() != std::size_t(num_vars) + 1) {
        throw std::invalid_argument("correlators: projection needs N + 1 coefficients");
    }
    fft_ = std::make_unique<Fft>(n_slices);
    bin_data_.assign(bins, Bin(lags(), num_vars));
}

CorrelatorAccumulator::~CorrelatorAccumulator() = default;
CorrelatorAccumulator::CorrelatorAccumulator(CorrelatorAccumulator&&) noexcept = default;
CorrelatorAccumulator& CorrelatorAccumulator::operator=(CorrelatorAccumulator&&) noexcept = default;

std::uint64_t CorrelatorAccumulator::samples() const {
    std::uint64_t n = 0;
    for (const auto& b : bin_data_) n += b.count;
    return n;
}

void CorrelatorAccumulator::add(const Replica& replica, const ClassicalAction& action, int bin) {
    if (bin < 0 || bin >= bins_) throw std::out_of_range("correlators: bad bin");
    if (replica.n_slices != n_slices_ || replica.num_vars != num_vars_) {
        throw std::invalid_argument("correlators: replica shape mismatch");
    }
    const int p = n_slices_;
    const auto series = slice_series(replica, action);
    std::vector<double> proj;
    if (projected()) {
        proj.assign(p, 0.0);
        for (int i = 0; i < num_vars_; ++i) {
            const double c = projection_[i];
            const std::int8_t* row = &replica.spins[static_cast<std::size_t>(i) * p];
            for (int k = 0; k < p; ++k) proj[k] += c * row[k];
        }
        for (int k = 0; k < p; ++k) proj[k] += projection_.back() * series.problem[k];
    }
    Bin& b = bin_data_[bin];
    ++b.count;
    const double inv_p = 1.0 / p;
    const std::vector<double>* chans[kChannels] = {&series.problem, &series.driver, &series.magnetization, &proj};
    const int used = projected() ? kChannels : kChannels - 1;
    for (int c = 0; c < used; ++c) {
        b.sum[c] += std::accumulate(chans[c]->begin(), chans[c]->end(), 0.0) * inv_p;
        fft_->transform(*chans[c], c);
    }
    for (int i = 0; i < num_vars_; ++i) {
        const std::int8_t* row = &replica.spins[static_cast<std::size_t>(i) * p];
        int m = 0;
        for (int k = 0; k < p; ++k) m += row[k];
        b.site[i] += m * inv_p;
    }
    const int half = p / 2;
    for (int q = 0; q < kPairs; ++q) {
        if (kPairChannels[q][1] == 3 && !projected()) continue;
        fft_->cross(kPairChannels[q][0], kPairChannels[q][1]);
        const double* r = fft_->out;
        auto& acc = b.corr[q];
        acc[0] += r[0];
        for (int m = 1; m <= half; ++m) acc[m] += 0.5 * (r[m] + r[p - m]);
    }
}

namespace {

struct Moments {
    double mean[kChannels];
    std::vector<double> site;
    std::vector<double> corr[kPairs];
};

}  // namespace

CorrelatorAccumulator::Result CorrelatorAccumulator::finalize(double d_tau) const {
    std::vector<const Bin*> used;
    Bin total(lags(), num_vars_);
    for (const auto& b : bin_data_) {
        if (b.count == 0) continue;
        used.push_back(&b);
        total.accumulate(b, 1.0);
    }
    if (used.size() < 2) throw std::runtime_error("correlators: need >= 2 non-empty bins");

    auto moments = [&](const Bin& agg) {
        Moments mo;
        const double inv = 1.0 / double(agg.count);
        for (int c = 0; c < kChannels; ++c) mo.mean[c] = agg.sum[c] * inv;
        mo.site.resize(num_vars_);
        for (int i = 0; i < num_vars_; ++i) mo.site[i] = agg.site[i] * inv;
        for (int q = 0; q < kPairs; ++q) {
            const double sub = mo.mean[kPairChannels[q][0]] * mo.mean[kPairChannels[q][1]];
            mo.corr[q].resize(lags());
            for (int m = 0; m < lags(); ++m) mo.corr[q][m] = agg.corr[q][m] * inv - sub;
        }
        return mo;
    };

    const Moments full = moments(total);
    std::vector<Moments> jack;
    for (const Bin* b : used) {
        Bin rest = total;
        rest.accumulate(*b, -1.0);
        jack.push_back(moments(rest));
    }
    auto jk = [&](auto&& get) {
        std::vector<double> x;
        for (const auto& j : jack) x.push_back(get(j));
        return jackknife_error(x);
    };

    Result res;
    res.projected = projected();
    for (int c = 0; c < kChannels; ++c) {
        res.mean[c] = full.mean[c];
        res.error[c] = jk([c](const Moments& m) { return m.mean[c]; });
    }
    res.site_mean = full.site;
    res.site_error.resize(num_vars_);
    for (int i = 0; i < num_vars_; ++i) res.site_error[i] = jk([i](const Moments& m) { return m.site[i]; });
    Correlator* outs[kPairs] = {&res.pp, &res.ii, &res.ip, &res.mm, &res.vv, &res.iv, &res.pv};
    for (int q = 0; q < kPairs; ++q) {
        if (kPairChannels[q][1] == 3 && !projected()) continue;
        Correlator& c = *outs[q];
        c.tau.resize(lags());
        for (int m = 0; m < lags(); ++m) c.tau[m] = m * d_tau;
        // Jackknife bias correction removes the O(1/n) offset that the
        // subtracted sample means leave in a connected correlator.
        const double nb = double(jack.size());
        c.mean.resize(lags());
        std::vector<double> shift(lags());
        for (int m = 0; m < lags(); ++m) {
            double avg = 0.0;
            for (const auto& j : jack) avg += j.corr[q][m];
            avg /= nb;
            c.mean[m] = nb * full.corr[q][m] - (nb - 1.0) * avg;
            shift[m] = c.mean[m] - full.corr[q][m];
        }
        for (const auto& j : jack) {
            c.jackknife.push_back(j.corr[q]);
            for (int m = 0; m < lags(); ++m) c.jackknife.back()[m] += shift[m];
        }
        c.update_errors();
    }
    return res;
}

namespace {

// sum_t w_t X_t, applied to the mean and every jackknife sample.
Correlator combine(std::initializer_list<std::pair<double, const Correlator*>> terms) {
    const Correlator& first = *terms.begin()->second;
    Correlator d;
    d.tau = first.tau;
    d.mean.assign(first.mean.size(), 0.0);
    d.jackknife.assign(first.jackknife.size(), std::vector<double>(first.mean.size(), 0.0));
    for (auto [w, c] : terms) {
        for (std::size_t m = 0; m < d.mean.size(); ++m) d.mean[m] += w * c->mean[m];
        for (std::size_t b = 0; b < d.jackknife.size(); ++b)
            for (std::size_t m = 0; m < d.mean.size(); ++m) d.jackknife[b][m] += w * c->jackknife[b][m];
    }
    d.update_errors();
    return d;
}

}  // namespace

Correlator CorrelatorAccumulator::Result::derivative(double da, double db) const {
    return combine({{da * da, &ii}, {2.0 * da * db, &ip}, {db * db, &pp}});
}

Correlator CorrelatorAccumulator::Result::derivative_cross(double da, double db) const {
    if (!projected) throw std::logic_error("correlators: no projected channel");
    return combine({{da, &iv}, {db, &pv}});
}

// ---- gap extraction -----------------------------------------------------------

GapEstimate extract_gap_and_amplitudes(const CorrelatorAccumulator::Result& corr, double beta,
                                       double s, Envelope env, Envelope deriv) {
    GapEstimate est;
    est.s = s;
    est.energy = env.a * corr.mean[1] + env.b * corr.mean[0];
    const Correlator& primary = corr.projected ? corr.vv : corr.pp;
    const WindowedFit gap = fit_gap(primary, beta);
    est.gap = gap.central.gap;
    est.gap_error = gap.gap_error;
    est.chi2_dof = gap.central.chi2_dof;
    est.tau_lo = primary.tau[gap.lo];
    est.tau_hi = primary.tau[gap.hi - 1];
    auto fixed = [&](const Correlator& c) { return fit_amplitude(c, beta, est.gap, gap.lo, gap.hi); };
    auto record = [&](const char* name, const WindowedFit& f) {
        est.amplitudes[name] = {f.central.amplitude, f.amplitude_error};
    };
    const WindowedFit d_auto = fixed(corr.derivative(deriv.a, deriv.b));
    record("dH/ds", d_auto);
    record("H_I", fixed(corr.ii));
    record("M", fixed(corr.mm));
    // Identity route: <1|H|0> = 0 gives <1|dH/ds|0> = (B' - A' B / A) <1|H_P|0>.
    const double ratio = std::abs(deriv.b - deriv.a * env.b / env.a);

    if (corr.projected) {
        // |<1|X|0>| = |a_Xv| / sqrt(a_vv) with O_v as the source.
        record("V", gap);
        const WindowedFit d_cross = fixed(corr.derivative_cross(deriv.a, deriv.b));
        const WindowedFit p_cross = fixed(corr.pv);
        record("H_P", fixed(corr.pp));
        record("dH/ds x V", d_cross);
        record("H_P x V", p_cross);
        auto overlap = [&](double a_x, double a_v) { return a_v > 0 ? std::abs(a_x) / std::sqrt(a_v) : 0.0; };
        est.matel = overlap(d_cross.central.amplitude, gap.central.amplitude);
        est.matel_identity = ratio * overlap(p_cross.central.amplitude, gap.central.amplitude);
        std::vector<double> samples;
        for (std::size_t b = 0; b < gap.jackknife_amplitudes.size(); ++b) {
            samples.push_back(overlap(d_cross.jackknife_amplitudes[b], gap.jackknife_amplitudes[b]));
        }
        est.matel_error = jackknife_error(samples);
        if (!(gap.central.amplitude > 0.0)) est.flags.push_back("nonpositive projected amplitude");
    } else {
        record("H_P", gap);
        if (d_auto.central.amplitude > 0.0) {
            est.matel = std::sqrt(d_auto.central.amplitude);
            est.matel_error = 0.5 * d_auto.amplitude_error / est.matel;
        } else {
            est.flags.push_back("nonpositive dH/ds amplitude");
        }
        est.matel_identity = ratio * std::sqrt(std::max(0.0, gap.central.amplitude));
    }

    if (!gap.central.converged) est.flags.push_back("gap fit not converged");
    if (!gap.window_found) est.flags.push_back("fit window start not resolved");
    if (beta * est.gap < 3.0) est.flags.push_back("beta*gap < 3 (thermal contamination)");
    if (!(est.gap_error <= kMaxRelativeGapError * est.gap)) est.flags.push_back("gap relative error above 5%");
    est.reliable = est.flags.empty();
    return est;
}

std::uint64_t simulated_variables(int num_vars, int n_slices, int grid_points) {
    return std::uint64_t(num_vars) * std::uint64_t(n_slices) * std::uint64_t(grid_points);
}

QmcScanResult qmc_scan(const ProblemInstance& instance, const Schedule& schedule, const PimcConfig& config,
                       std::vector<double> s_grid, int points) {
    config.validate();
    QmcScanResult out;
    if (s_grid.empty()) {
        if (points < 1) throw std::invalid_argument("qmc_scan: need an s-grid or a point count");
        s_grid = uniform_grid(points, config.s_min, config.s_max);
    } else {
        std::vector<double> clipped;
        for (double s : s_grid) {
            const double c = std::clamp(s, config.s_min, config.s_max);
            if (clipped.empty() || c > clipped.back()) clipped.push_back(c);
        }
        if (clipped != s_grid) out.warnings.push_back("s-grid clipped to [s_min, s_max]");
        s_grid = std::move(clipped);
    }

    PimcEnsemble ens(instance, schedule, s_grid, config);
    out.grid_history.push_back(ens.grid());
    ens.run(config.sweeps_equil);

    auto low_swap_warning = [&](const char* phase) {
        const auto acc = ens.exchange_stats().acceptance();
        for (std::size_t k = 0; k < acc.size(); ++k) {
            if (acc[k] < 0.25) {
                char buf[160];
                std::snprintf(buf, sizeof buf, "%s: swap acceptance %.3f < 0.25 between s=%.4f and s=%.4f",
                              phase, acc[k], ens.grid()[k], ens.grid()[k + 1]);
                out.warnings.push_back(buf);
            }
        }
    };
    low_swap_warning("equilibration");

    for (int round = 0; round < config.feedback_rounds && ens.size() >= 3; ++round) {
        ens.reset_flow_statistics();
        ens.run(config.feedback_sweeps);
        try {
            const auto fb = feedback_optimize(ens);
            if (!fb.warning.empty()) out.warnings.push_back(fb.warning);
            if (!fb.changed) continue;
            ens.set_grid(fb.grid);
            out.grid_history.push_back(ens.grid());
            ens.run(config.sweeps_equil / 4);
        } catch (const InsufficientRoundTrips& e) {
            out.warnings.push_back(e.what());
            break;
        }
    }

    // Pilot: lagged operator matrices fix the projection per slot.
    const int half = config.n_slices / 2;
    const int lag0 = std::clamp(int(std::lround(kPilotTau0 / config.d_tau)), 1, half - 1);
    const int lag1 = std::clamp(int(std::lround(kPilotTau1 / config.d_tau)), lag0 + 1, half);
    std::vector<ProjectionPilot> pilots;
    for (std::size_t k = 0; k < ens.size(); ++k) pilots.emplace_back(config.n_slices, instance.num_vars(), lag0, lag1);
    {
        std::uint64_t sweep = 0;
        ens.set_observer([&](PimcEnsemble& e) {
            if (++sweep % config.measure_interval != 0) return;
            parallel_for(e.size(), config.workers, [&](std::size_t k) { pilots[k].add(e.replica(k)); });
        });
        ens.run(config.sweeps_pilot);
        ens.set_observer(nullptr);
    }

    ens.reset_exchange_statistics();
    ens.reset_flow_statistics();
    std::vector<CorrelatorAccumulator> acc;
    for (std::size_t k = 0; k < ens.size(); ++k) {
        std::vector<double> projection;
        if (pilots[k].samples() >= 2) projection = pilots[k].solve();
        acc.emplace_back(config.n_slices, instance.num_vars(), config.bins, std::move(projection));
    }
    const std::uint64_t total = std::uint64_t(config.sweeps_measure / config.measure_interval);
    if (total < std::uint64_t(config.bins)) throw std::invalid_argument("qmc_scan: fewer measurements than bins");
    std::uint64_t sweep = 0, taken = 0;
    ens.set_observer([&](PimcEnsemble& e) {
        if (++sweep % config.measure_interval != 0 || taken >= total) return;
        const int bin = static_cast<int>(taken * config.bins / total);
        parallel_for(e.size(), config.workers, [&](std::size_t k) { acc[k].add(e.replica(k), e.action(k), bin); });
        ++taken;
    });
    ens.run(config.sweeps_measure);
    ens.set_observer(nullptr);

    out.swap_acceptance = ens.exchange_stats().acceptance();
    low_swap_warning("measurement");
    for (std::size_t k = 0; k < ens.size(); ++k) out.flip_acceptance.push_back(ens.sweep_stats(k).acceptance());
    out.round_trips = ens.round_trips();
    out.temperature_ghz = config.temperature_ghz();
    out.simulated_variables = simulated_variables(instance.num_vars(), config.n_slices, int(ens.size()));

    out.points.resize(ens.size());
    parallel_for(ens.size(), config.workers, [&](std::size_t k) {
        const double s = ens.grid()[k];
        const auto res = acc[k].finalize(config.d_tau);
        out.points[k] = extract_gap_and_amplitudes(res, config.beta(), s, schedule.eval(s),
                                                   schedule.deriv(s));
    });

    SpectrumScan& scan = out.scan;
    scan.instance_id = instance.id;
    scan.schedule_name = schedule.name();
    scan.s_grid = ens.grid();
    for (const auto& p : out.points) {
        scan.e0.push_back(p.energy);
        scan.e1.push_back(p.energy + p.gap);
        scan.gaps.push_back(p.gap);
        scan.gap_errors.push_back(p.gap_error);
        scan.matrix_elems.push_back(p.matel);
    }
    std::optional<std::size_t> best, best_any;
    for (std::size_t k = 0; k < out.points.size(); ++k) {
        if (!best_any || out.points[k].gap < out.points[*best_any].gap) best_any = k;
        if (out.points[k].reliable && (!best || out.points[k].gap < out.points[*best].gap)) best = k;
    }
    if (!best) {
        best = best_any;
        scan.reliable = false;
        scan.flags.push_back("no reliable gap estimate");
    } else if (*best_any != *best) {
        scan.reliable = false;
        char buf[128];
        std::snprintf(buf, sizeof buf, "smaller gap at unreliable point s=%.4f", out.points[*best_any].s);
        scan.flags.push_back(buf);
    }
    const GapEstimate& star = out.points[*best];
    for (const auto& f : star.flags) {
        scan.reliable = false;
        scan.flags.push_back("at s*: " + f);
    }
    scan.s_star = star.s;
    scan.g_min = star.gap;
    scan.matel_at_star = star.matel;
    scan.t_adiabatic = star.gap > 0.0 ? adiabatic_time(star.gap, star.matel) : std::nan("");
    return out;
}

}  // namespace aqo
