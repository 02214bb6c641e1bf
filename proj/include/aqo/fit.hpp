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

#include <optional>
#include <vector>

namespace aqo {

// Imaginary-time correlator C(tau_m) for m = 0 .. P/2 with jackknife
// resamples (one per left-out bin).
struct Correlator {
    std::vector<double> tau;
    std::vector<double> mean;
    std::vector<double> error;
    std::vector<std::vector<double>> jackknife;

    // Recomputes `error` from the jackknife resamples.
    void update_errors();
};

// e^{-g tau} + e^{-g (beta - tau)}
double periodic_exp(double gap, double tau, double beta);

struct ExpFit {
    double amplitude = 0.0;
    double gap = 0.0;
    double chi2_dof = 0.0;
    bool converged = false;
};

// Weighted least squares of a * periodic_exp(g, tau, beta) on points
// [lo, hi).  With `fixed_gap` only the amplitude is fitted.
ExpFit fit_periodic_exp(const std::vector<double>& tau, const std::vector<double>& y,
                        const std::vector<double>& sigma, double beta, std::size_t lo,
                        std::size_t hi, std::optional<double> fixed_gap = std::nullopt);

struct TwoExpFit {
    double a1 = 0.0, g1 = 0.0;
    double a2 = 0.0, g2 = 0.0;
    double chi2_dof = 0.0;
    bool converged = false;
};

// a1 periodic_exp(g1) + a2 periodic_exp(g2) with g1 < g2.  A starting
// point skips the global grid search and only refines locally.
TwoExpFit fit_two_periodic_exp(const std::vector<double>& tau, const std::vector<double>& y,
                               const std::vector<double>& sigma, double beta, std::size_t lo,
                               std::size_t hi, const TwoExpFit* start = nullptr);

struct WindowedFit {
    ExpFit central;
    double gap_error = 0.0;
    double amplitude_error = 0.0;
    std::size_t lo = 0;
    std::size_t hi = 0;
    bool window_found = true;
    std::vector<double> jackknife_gaps;
    std::vector<double> jackknife_amplitudes;
};

// sqrt((B - 1) / B * sum (x_b - mean)^2) for B leave-one-out samples.
double jackknife_error(const std::vector<double>& samples);

inline constexpr std::size_t kMinWindowPoints = 6;
inline constexpr double kSignificanceSigmas = 2.0;
inline constexpr double kSignalSigmas = 2.0;
inline constexpr double kPlateauOffset = 1.0;  // ns

// One past the last lag before C first drops below 2 standard errors, or
// the full range (up to beta/2) when it never does.
std::size_t signal_end(const Correlator& c);

// Scans the window start upward from the second lag and stops at the first
// one whose single-exponential gap agrees, within 2 jackknife standard
// errors of the difference, with the gap fitted from `kPlateauOffset` later;
// hi is `signal_end`.  The reported fit uses that window with jackknife errors.
WindowedFit fit_gap(const Correlator& c, double beta);

// Amplitude of `c` with the gap held at `gap` over [lo, hi).
WindowedFit fit_amplitude(const Correlator& c, double beta, double gap, std::size_t lo,
                          std::size_t hi);

}  // namespace aqo
