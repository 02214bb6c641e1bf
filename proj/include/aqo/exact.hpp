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

#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "aqo/instance.hpp"
#include "aqo/schedule.hpp"

namespace aqo {

inline constexpr int kExactMaxVars = 26;
inline constexpr int kDenseMaxVars = 12;
inline constexpr double kDegeneracyTolerance = 1e-12;  // GHz

// Computational basis: bit i of the state index is 0 for sigma^z_i = +1.
//
// H(s) = A(s) H_I + B(s) H_P with H_I = -sum_i sigma^x_i, applied
// matrix-free: H_P is a precomputed diagonal, H_I is N bit-flip passes.
class TransverseIsing {
  public:
    explicit TransverseIsing(const ProblemInstance& instance);

    int num_vars() const { return n_; }
    std::size_t dim() const { return diag_.size(); }
    const std::vector<double>& problem_diagonal() const { return diag_; }

    // out = a * H_I v + b * H_P v.
    void apply(double a, double b, std::span<const double> v, std::span<double> out) const;

    // Upper bound on the spectral radius of a H_I + b H_P.
    double norm_bound(double a, double b) const;

  private:
    int n_;
    std::vector<double> diag_;
    double diag_max_abs_ = 0.0;
};

std::vector<double> apply_hamiltonian(const ProblemInstance& instance, const Schedule& schedule,
                                      double s, std::span<const double> v);

enum class EigenMethod { automatic, dense, krylov };

struct LowestTwo {
    double e0 = 0.0;  // GHz
    double e1 = 0.0;
    std::vector<double> v0;
    std::vector<double> v1;
    bool degenerate = false;
    double residual = 0.0;  // max of ||H v - E v|| over the two pairs
    int iterations = 0;     // Krylov matrix-vector products (0 for dense)
};

class EigenNotConverged : public std::runtime_error {
  public:
    EigenNotConverged(const std::string& what, double best_residual)
        : std::runtime_error(what), best_residual(best_residual) {}
    double best_residual;
};

// Lowest two eigenpairs of a H_I + b H_P.  Eigenvectors are normalized with
// the largest-magnitude amplitude positive.
LowestTwo lowest_two(const TransverseIsing& op, double a, double b,
                     EigenMethod method = EigenMethod::automatic);
LowestTwo lowest_two(const ProblemInstance& instance, const Schedule& schedule, double s,
                     EigenMethod method = EigenMethod::automatic);

// |<v1| A'(s) H_I + B'(s) H_P |v0>| in GHz.
double matrix_element_dHds(const TransverseIsing& op, const Schedule& schedule, double s,
                           std::span<const double> v0, std::span<const double> v1);
double matrix_element_dHds(const ProblemInstance& instance, const Schedule& schedule, double s,
                           std::span<const double> v0, std::span<const double> v1);

// t_a = 4 |<1|dH/ds|0>| / (pi g^2) with hbar = 1, evaluated on angular
// frequencies.  Inputs are ordinary frequencies in GHz, so omega = 2 pi f
// contributes the 1 / (2 pi 1e9) factor.  Returns seconds.
double adiabatic_time(double g_min_ghz, double matel_ghz);

// Same formula with no unit conversion.
double adiabatic_time_natural(double g_min, double matel);

struct SpectrumScan {
    std::string instance_id;
    std::string schedule_name;
    std::vector<double> s_grid;
    std::vector<double> e0;
    std::vector<double> e1;
    std::vector<double> gaps;
    std::vector<double> matrix_elems;
    std::vector<double> gap_errors;  // empty for exact scans
    double s_star = 0.0;
    double g_min = 0.0;
    double matel_at_star = 0.0;
    double t_adiabatic = 0.0;  // seconds
    bool reliable = true;
    std::vector<std::string> flags;
};

struct ScanOptions {
    bool refine = true;
    double refine_tolerance = 1e-4;
    EigenMethod method = EigenMethod::automatic;
    int workers = 1;
};

SpectrumScan scan_and_refine(const ProblemInstance& instance, const Schedule& schedule,
                             const std::vector<double>& s_grid, ScanOptions options = {});

std::vector<double> uniform_grid(int points, double lo = 0.0, double hi = 1.0);

}  // namespace aqo
