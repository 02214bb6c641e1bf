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
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "aqo/exact.hpp"
#include "aqo/fit.hpp"
#include "aqo/instance.hpp"
#include "aqo/rng.hpp"
#include "aqo/schedule.hpp"

namespace aqo {

// Path-integral Monte Carlo in the Suzuki-Trotter picture.  Imaginary time is
// in ns, energies in GHz, so Delta tau * E is dimensionless.
struct PimcConfig {
    int n_slices = 256;
    double d_tau = 0.25;  // ns
    int sweeps_equil = 20000;
    int sweeps_measure = 100000;
    int sweeps_pilot = 10000;  // projection pilot, before measurement
    int bins = 20;
    int swap_interval = 1;
    int feedback_rounds = 2;
    int feedback_sweeps = 10000;  // sweeps per feedback round
    int measure_interval = 2;
    std::uint64_t seed = 1;
    double s_min = 0.02;
    double s_max = 0.98;
    int workers = 1;

    double beta() const { return n_slices * d_tau; }
    // 1 / (P d_tau) in GHz.
    double temperature_ghz() const { return 1.0 / (n_slices * d_tau); }
    void validate() const;
};

// Per-s effective classical couplings.  Weight exp(-S) with
//   S = sum_k field_scale * E_P(slice k) - j_perp * sum_{k,i} s_{k,i} s_{k+1,i}.
struct ClassicalAction {
    double s = 0.0;
    double a = 0.0;            // A(s), GHz
    double b = 0.0;            // B(s), GHz
    double field_scale = 0.0;  // d_tau * B(s)
    double j_perp = 0.0;       // 1/2 ln coth(d_tau A)
    double tanh_a = 0.0;       // tanh(d_tau A), H_I bond estimator on agreement
    double coth_a = 0.0;       // coth(d_tau A), on disagreement
    std::vector<double> fields;     // field_scale * h_i
    std::vector<double> couplings;  // field_scale * J_e, aligned with graph edges

    // Acceptance thresholds for couplings that are exact thirds.  With
    // u = s * 3 e_loc in [-field3_max, field3_max] and v = s * (s_prev + s_next),
    // entry (u + field3_max) * 3 + (v / 2 + 1) holds exp(-dS) * 2^64, or
    // kAlwaysAccept when dS <= 0.  field3_max < 0 disables the table.
    static constexpr std::uint64_t kAlwaysAccept = ~std::uint64_t{0};
    int field3_max = -1;
    std::vector<std::uint64_t> threshold;

    double action(double problem_energy, std::int64_t time_bond_sum) const {
        return field_scale * problem_energy - j_perp * static_cast<double>(time_bond_sum);
    }
};

// Throws std::domain_error when A(s) <= 0.
ClassicalAction build_action(const ProblemInstance& instance, const Schedule& schedule, double s,
                             const PimcConfig& config);
// Action at explicit envelope values.
ClassicalAction build_action(const ProblemInstance& instance, double a, double b, double s,
                             double d_tau);

enum class FlowTag : std::int8_t { unset, up, down };

// Spins are stored site-major: spins[i * P + k] for site i, slice k.
struct Replica {
    int num_vars = 0;
    int n_slices = 0;
    std::vector<std::int8_t> spins;
    std::vector<double> slice_energy;  // E_P per slice, GHz
    std::int64_t time_bond_sum = 0;    // sum over sites and slices of s_k s_{k+1}
    FlowTag flow_tag = FlowTag::unset;
    int identity = 0;  // stable label that follows the configuration through swaps

    std::int8_t spin(int site, int slice) const { return spins[site * n_slices + slice]; }
    double problem_energy() const;
    // Recomputes caches from the spins.
    void refresh(const ProblemInstance& instance);
};

Replica make_replica(const ProblemInstance& instance, int n_slices, Xoshiro256& rng);

// Neighbor lists with unscaled couplings, shared by all sweeps.
struct SpinModel {
    explicit SpinModel(const ProblemInstance& instance);
    int num_vars;
    std::vector<double> h;
    std::vector<int> offsets;  // CSR into neighbors / couplings
    std::vector<int> neighbors;
    std::vector<double> couplings;
    // 3 h and 3 J when all are integers, else empty.
    std::vector<int> h3;
    std::vector<int> couplings3;
    int max_degree = 0;
    bool integral() const { return !h3.empty(); }
};

struct SweepStats {
    std::uint64_t proposed = 0;
    std::uint64_t accepted = 0;
    double acceptance() const { return proposed ? double(accepted) / double(proposed) : 0.0; }
};

// One proposed flip per (site, slice): sites in index order, even slices
// then odd slices.
SweepStats metropolis_sweep(Replica& replica, const SpinModel& model, const ClassicalAction& action,
                            Xoshiro256& rng);

struct ExchangeStats {
    std::vector<std::uint64_t> attempts;  // per adjacent pair
    std::vector<std::uint64_t> accepts;
    std::vector<double> acceptance() const;
};

class InsufficientRoundTrips : public std::runtime_error {
  public:
    InsufficientRoundTrips(std::uint64_t round_trips, std::size_t slots);
    std::uint64_t round_trips;
    std::size_t slots;
};

class PimcEnsemble {
  public:
    PimcEnsemble(const ProblemInstance& instance, const Schedule& schedule, std::vector<double> grid,
                 const PimcConfig& config);

    std::size_t size() const { return replicas_.size(); }
    const std::vector<double>& grid() const { return grid_; }
    const ClassicalAction& action(std::size_t k) const { return actions_[k]; }
    const Replica& replica(std::size_t k) const { return replicas_[k]; }
    Replica& replica(std::size_t k) { return replicas_[k]; }
    const SpinModel& model() const { return model_; }
    const PimcConfig& config() const { return config_; }

    // Replaces the grid; configurations stay in their slots.
    void set_grid(std::vector<double> grid);

    // One sweep of every replica, concurrently over slots.
    void sweep_all();
    // Adjacent swaps; pair parity alternates between calls.
    void exchange_round();
    // swap_interval sweeps then one exchange round, repeated `sweeps` times.
    void run(int sweeps);

    // Called after every sweep of `run`.  Hook for measurement.
    void set_observer(std::function<void(PimcEnsemble&)> observer) { observer_ = std::move(observer); }

    const ExchangeStats& exchange_stats() const { return exchange_; }
    const SweepStats& sweep_stats(std::size_t k) const { return sweep_stats_[k]; }
    const std::vector<std::uint64_t>& flow_up() const { return n_up_; }
    const std::vector<std::uint64_t>& flow_down() const { return n_down_; }
    std::uint64_t round_trips() const { return round_trips_; }
    void reset_flow_statistics();
    void reset_exchange_statistics();

  private:
    void update_flow();

    const ProblemInstance* instance_;
    const Schedule* schedule_;
    PimcConfig config_;
    SpinModel model_;
    std::vector<double> grid_;
    std::vector<ClassicalAction> actions_;
    std::vector<Replica> replicas_;
    std::vector<Xoshiro256> slot_rng_;
    Xoshiro256 exchange_rng_;
    std::vector<SweepStats> sweep_stats_;
    ExchangeStats exchange_;
    std::vector<std::uint64_t> n_up_, n_down_;
    std::uint64_t round_trips_ = 0;
    std::uint64_t exchange_rounds_ = 0;
    std::function<void(PimcEnsemble&)> observer_;
};

// Swap acceptance probability min(1, exp(-dS)) for slots k and k+1.
double exchange_probability(const ClassicalAction& lo, const ClassicalAction& hi, const Replica& x_lo,
                            const Replica& x_hi);

struct FeedbackResult {
    std::vector<double> grid;
    std::vector<double> fraction;  // smoothed f(s_k)
    bool changed = false;
    std::string warning;
};

// Equidistributes the up-fraction f over a new grid with pinned ends.
// f is smoothed by isotonic (non-increasing) regression.  Slots with no
// tagged visits are skipped.
FeedbackResult feedback_grid(const std::vector<double>& grid, const std::vector<std::uint64_t>& n_up,
                             const std::vector<std::uint64_t>& n_down);

// Uses the ensemble's flow histogram.  Throws InsufficientRoundTrips when
// fewer than one round trip per slot was observed.
FeedbackResult feedback_optimize(const PimcEnsemble& ensemble);

// Per-slice operator series for one configuration.
struct SliceSeries {
    std::vector<double> problem;     // H_P(k)
    std::vector<double> driver;      // H_I(k), averaged over the two adjacent bonds
    std::vector<double> magnetization;  // sum_i s_{k,i}
};
SliceSeries slice_series(const Replica& replica, const ClassicalAction& action);

// Lagged correlation matrix of the operators (s^z_0 .. s^z_{N-1}, H_P) at
// two lags.  The generalized eigenproblem C(t1) v = lambda C(t0) v gives the
// combination O_v with the slowest decay, which isolates the lowest
// excitation reachable from the ground state.
class ProjectionPilot {
  public:
    ProjectionPilot(int n_slices, int num_vars, int lag0, int lag1);

    void add(const Replica& replica);
    std::uint64_t samples() const { return count_; }
    int lag0() const { return lag0_; }
    int lag1() const { return lag1_; }

    // Coefficients of O_v over (s^z_i..., H_P) with v^T C(t0) v = 1.  Falls
    // back to H_P alone when C(t0) has no resolvable directions.
    std::vector<double> solve() const;

  private:
    int n_slices_, num_vars_, lag0_, lag1_;
    std::uint64_t count_ = 0;
    std::vector<double> sum_;                // per operator
    std::vector<double> prod0_, prod1_;      // row-major n x n
};

// Binned correlator accumulator for one replica slot.  Channels: H_P, H_I,
// total s^z and, with a projection, O_v.  Pairs: PP, II, IP, MM and VV, IV, PV.
// Cross pairs are symmetrized in tau.
class CorrelatorAccumulator {
  public:
    CorrelatorAccumulator(int n_slices, int num_vars, int bins, std::vector<double> projection = {});
    ~CorrelatorAccumulator();
    CorrelatorAccumulator(CorrelatorAccumulator&&) noexcept;
    CorrelatorAccumulator& operator=(CorrelatorAccumulator&&) noexcept;

    void add(const Replica& replica, const ClassicalAction& action, int bin);

    int bins() const { return bins_; }
    int lags() const { return n_slices_ / 2 + 1; }
    bool projected() const { return !projection_.empty(); }
    std::uint64_t samples() const;

    struct Result {
        // Means of H_P, H_I, total s^z (and O_v) with jackknife errors.
        double mean[4] = {0, 0, 0, 0};
        double error[4] = {0, 0, 0, 0};
        std::vector<double> site_mean;  // <s^z_i>
        std::vector<double> site_error;
        Correlator pp, ii, ip, mm;
        bool projected = false;
        Correlator vv, iv, pv;
        // a' X_I + b' X_P per jackknife sample, for X = (ii, ip, pp) or (iv, pv).
        Correlator derivative(double da, double db) const;
        Correlator derivative_cross(double da, double db) const;
    };
    Result finalize(double d_tau) const;

  private:
    struct Bin;
    struct Fft;
    int n_slices_;
    int num_vars_;
    int bins_;
    std::vector<double> projection_;
    std::vector<Bin> bin_data_;
    std::unique_ptr<Fft> fft_;
};

struct GapEstimate {
    double s = 0.0;
    double gap = 0.0;  // GHz
    double gap_error = 0.0;
    std::map<std::string, std::pair<double, double>> amplitudes;  // name -> (value, error)
    double tau_lo = 0.0;
    double tau_hi = 0.0;
    double chi2_dof = 0.0;
    // |<1|dH/ds|0>|: |a_(dH/ds x V)| / sqrt(a_VV) with the projected source,
    // or sqrt(a_(dH/ds)) without one.
    double matel = 0.0;
    double matel_error = 0.0;
    // Same element from <1|H(s)|0> = 0, through the H_P channel only:
    // |B' - A' B / A| times the H_P overlap.  Cross-checks `matel`.
    double matel_identity = 0.0;
    double energy = 0.0;  // <H(s)>
    bool reliable = true;
    std::vector<std::string> flags;
};

inline constexpr double kMaxRelativeGapError = 0.05;

// Fits the projected correlator (H_P without a projection) for the gap, then
// the other channels with the gap fixed.  Flags the estimate when a fit
// fails, beta * gap < 3, or the gap error exceeds kMaxRelativeGapError.
GapEstimate extract_gap_and_amplitudes(const CorrelatorAccumulator::Result& correlators, double beta,
                                       double s, Envelope env, Envelope deriv);

struct QmcScanResult {
    SpectrumScan scan;
    std::vector<GapEstimate> points;
    std::vector<std::vector<double>> grid_history;
    std::vector<double> swap_acceptance;
    std::vector<double> flip_acceptance;
    std::uint64_t round_trips = 0;
    std::uint64_t simulated_variables = 0;  // N * P * K
    double temperature_ghz = 0.0;
    std::vector<std::string> warnings;
};

// Full protocol: equilibration with exchanges, feedback rounds, measurement,
// per-point fits and minimum-gap selection.  An empty `s_grid` means a
// uniform grid with `points` entries on [s_min, s_max].
QmcScanResult qmc_scan(const ProblemInstance& instance, const Schedule& schedule,
                       const PimcConfig& config, std::vector<double> s_grid, int points = 0);

// N * P * K.
std::uint64_t simulated_variables(int num_vars, int n_slices, int grid_points);

}  // namespace aqo
