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

#include "aqo/exact.hpp"

#include <lapacke.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "aqo/parallel.hpp"
#include "aqo/rng.hpp"

namespace aqo {

TransverseIsing::TransverseIsing(const ProblemInstance& instance) : n_(instance.num_vars()) {
    validate(instance);
    if (n_ > kExactMaxVars) {
        throw std::invalid_argument("exact: " + std::to_string(n_) + " variables exceeds guard " +
                                    std::to_string(kExactMaxVars));
    }
    const std::size_t dim = std::size_t{1} << n_;
    diag_.assign(dim, 0.0);
    for (std::size_t x = 0; x < dim; ++x) {
        double e = 0.0;
        for (int i = 0; i < n_; ++i) e += ((x >> i) & 1) ? -instance.h[i] : instance.h[i];
        const auto& edges = instance.graph.edges;
        for (std::size_t k = 0; k < edges.size(); ++k) {
            const bool differ = ((x >> edges[k].i) ^ (x >> edges[k].j)) & 1;
            e += differ ? -instance.j[k] : instance.j[k];
        }
        diag_[x] = e;
        diag_max_abs_ = std::max(diag_max_abs_, std::abs(e));
    }
}

void TransverseIsing::apply(double a, double b, std::span<const double> v,
                            std::span<double> out) const {
    const std::size_t dim = diag_.size();
    if (v.size() != dim || out.size() != dim) {
        throw std::invalid_argument("apply_hamiltonian: vector dimension " + std::to_string(v.size()) +
                                    " does not match 2^" + std::to_string(n_));
    }
    for (std::size_t x = 0; x < dim; ++x) out[x] = b * diag_[x] * v[x];
    if (a == 0.0) return;
    for (int i = 0; i < n_; ++i) {
        const std::size_t bit = std::size_t{1} << i;
        for (std::size_t base = 0; base < dim; base += 2 * bit) {
            for (std::size_t x = base; x < base + bit; ++x) {
                out[x] -= a * v[x + bit];
                out[x + bit] -= a * v[x];
            }
        }
    }
}

double TransverseIsing::norm_bound(double a, double b) const {
    return std::abs(a) * n_ + std::abs(b) * diag_max_abs_;
}

std::vector<double> apply_hamiltonian(const ProblemInstance& instance, const Schedule& schedule,
                                      double s, std::span<const double> v) {
    TransverseIsing op(instance);
    const auto env = schedule.eval(s);
    std::vector<double> out(v.size());
    op.apply(env.a, env.b, v, out);
    return out;
}

namespace {

double dot(std::span<const double> x, std::span<const double> y) {
    double acc = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * y[k];
    return acc;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t k = 0; k < x.size(); ++k) y[k] += alpha * x[k];
}

void fix_phase(std::vector<double>& v) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < v.size(); ++k) {
        if (std::abs(v[k]) > std::abs(v[best]) * (1.0 + 1e-12)) best = k;
    }
    if (v[best] < 0.0) {
        for (double& x : v) x = -x;
    }
}

double residual_norm(const TransverseIsing& op, double a, double b, const std::vector<double>& v,
                     double e) {
    std::vector<double> hv(v.size());
    op.apply(a, b, v, hv);
    axpy(-e, v, hv);
    return std::sqrt(dot(hv, hv));
}

// LAPACK dsyevr on the full matrix, selecting only the two lowest pairs.
LowestTwo dense_lowest_two(const TransverseIsing& op, double a, double b) {
    const auto dim = static_cast<lapack_int>(op.dim());
    std::vector<double> h(static_cast<std::size_t>(dim) * dim, 0.0);
    const auto& diag = op.problem_diagonal();
    for (std::size_t x = 0; x < op.dim(); ++x) {
        h[x * dim + x] = b * diag[x];
        for (int i = 0; i < op.num_vars(); ++i) h[x * dim + (x ^ (std::size_t{1} << i))] = -a;
    }
    const lapack_int want = std::min<lapack_int>(2, dim);
    lapack_int found = 0;
    std::vector<double> w(dim), z(static_cast<std::size_t>(dim) * want);
    std::vector<lapack_int> support(2 * want);
    const lapack_int info = LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', dim, h.data(), dim, 0.0, 0.0, 1,
                                           want, 0.0, &found, w.data(), z.data(), dim, support.data());
    if (info != 0 || found != want) {
        throw EigenNotConverged("dense eigensolver failed (info " + std::to_string(info) + ")", 0.0);
    }
    LowestTwo r;
    r.e0 = w[0];
    r.e1 = want > 1 ? w[1] : r.e0;
    r.v0.assign(z.begin(), z.begin() + dim);
    if (want > 1) r.v1.assign(z.begin() + dim, z.end());
    return r;
}

// Thick-restart Lanczos with full reorthogonalization (block classical
// Gram-Schmidt, two passes).  The projected matrix is accumulated from
// explicit overlaps, so the arrowhead left by a restart needs no special
// casing.
LowestTwo krylov_lowest_two(const TransverseIsing& op, double a, double b) {
    constexpr int kMaxRestarts = 2000;
    constexpr double kMemoryBudget = 2.0e9;
    const std::size_t dim = op.dim();
    const auto n = static_cast<Eigen::Index>(dim);
    const double scale = std::max(op.norm_bound(a, b), 1e-300);
    const double tol =
        scale * std::max(1e-13, 64.0 * std::numeric_limits<double>::epsilon() * std::sqrt(double(dim)));

    const auto by_memory = static_cast<std::size_t>(kMemoryBudget / (8.0 * double(dim)));
    const int m = static_cast<int>(std::min<std::size_t>({40, dim, std::max<std::size_t>(by_memory, 8)}));
    const int keep = std::min(std::max(2, m / 3), m - 1);

    Xoshiro256 rng(0x1a2b3c4dULL);
    Eigen::MatrixXd basis(n, m);
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(m, m);
    Eigen::VectorXd w(n), coeffs(m);

    // Projects w off the first `upto` basis columns; adds the overlaps to
    // `acc` when given.  Returns the remaining norm.
    auto orthogonalize = [&](Eigen::VectorXd& v, int upto, Eigen::VectorXd* acc) {
        if (upto == 0) return v.norm();
        auto q = basis.leftCols(upto);
        for (int pass = 0; pass < 2; ++pass) {
            const Eigen::VectorXd c = q.transpose() * v;
            v.noalias() -= q * c;
            if (acc) acc->head(upto) += c;
        }
        return v.norm();
    };
    auto random_unit = [&](int upto) {
        for (int attempt = 0; attempt < 8; ++attempt) {
            Eigen::VectorXd v(n);
            for (auto& x : v) x = rng.uniform() - 0.5;
            const double nrm = orthogonalize(v, upto, nullptr);
            if (nrm > 1e-8) return Eigen::VectorXd(v / nrm);
        }
        throw EigenNotConverged("krylov: cannot extend basis", std::numeric_limits<double>::infinity());
    };
    auto apply = [&](const auto& in, Eigen::VectorXd& out) {
        op.apply(a, b, std::span<const double>(in.data(), dim), std::span<double>(out.data(), dim));
    };

    basis.col(0) = random_unit(0);
    int j = 0;
    double beta = 0.0;
    Eigen::VectorXd residual_vec;
    double best_residual = std::numeric_limits<double>::infinity();
    int matvecs = 0;

    for (int restart = 0; restart < kMaxRestarts; ++restart) {
        bool exhausted = false;
        while (j < m) {
            apply(basis.col(j), w);
            ++matvecs;
            coeffs.setZero();
            const double nrm = orthogonalize(w, j + 1, &coeffs);
            for (int i = 0; i <= j; ++i) t(i, j) = t(j, i) = coeffs[i];
            if (static_cast<std::size_t>(j + 1) == dim) {
                beta = 0.0;
                exhausted = true;
                ++j;
                break;
            }
            if (nrm <= 1e-12 * scale) {
                // Invariant subspace: continue from a fresh orthogonal direction.
                beta = 0.0;
                w = random_unit(j + 1);
            } else {
                beta = nrm;
                w /= nrm;
            }
            if (j + 1 < m) {
                basis.col(j + 1) = w;
            } else {
                residual_vec = w;
            }
            ++j;
        }

        const int size = j;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(t.topLeftCorner(size, size));
        if (es.info() != Eigen::Success) throw EigenNotConverged("krylov: projected solve failed", best_residual);
        const Eigen::VectorXd& theta = es.eigenvalues();
        const Eigen::MatrixXd& y = es.eigenvectors();
        const int nev = std::min(2, size);
        double est = 0.0;
        for (int i = 0; i < nev; ++i) est = std::max(est, std::abs(beta * y(size - 1, i)));

        auto ritz = [&](int i) {
            Eigen::VectorXd u = basis.leftCols(size) * y.col(i);
            u /= u.norm();
            return std::vector<double>(u.data(), u.data() + dim);
        };

        if (est <= tol || exhausted) {
            LowestTwo r;
            r.e0 = theta(0);
            r.e1 = nev > 1 ? theta(1) : theta(0);
            r.v0 = ritz(0);
            if (nev > 1) r.v1 = ritz(1);
            r.residual = residual_norm(op, a, b, r.v0, r.e0);
            if (nev > 1) r.residual = std::max(r.residual, residual_norm(op, a, b, r.v1, r.e1));
            r.iterations = matvecs;
            best_residual = std::min(best_residual, r.residual);
            if (r.residual <= 4.0 * tol || exhausted) return r;
        }
        best_residual = std::min(best_residual, est);

        // Restart from the `keep` lowest Ritz vectors plus the residual direction.
        const Eigen::MatrixXd kept = basis.leftCols(size) * y.leftCols(keep);
        basis.leftCols(keep) = kept;
        t.setZero();
        for (int i = 0; i < keep; ++i) {
            t(i, i) = theta(i);
            t(i, keep) = t(keep, i) = beta * y(size - 1, i);
        }
        // Reorthogonalize the residual against the compressed basis to
        // guard against drift accumulated over many restarts.
        const double nrm = orthogonalize(residual_vec, keep, nullptr);
        if (nrm < 1e-8) {
            residual_vec = random_unit(keep);
        } else {
            residual_vec /= nrm;
        }
        basis.col(keep) = residual_vec;
        j = keep;
    }
    throw EigenNotConverged("krylov: no convergence after restart cap, best residual " +
                                std::to_string(best_residual),
                            best_residual);
}

}  // namespace

LowestTwo lowest_two(const TransverseIsing& op, double a, double b, EigenMethod method) {
    if (method == EigenMethod::automatic) {
        method = op.num_vars() <= kDenseMaxVars ? EigenMethod::dense : EigenMethod::krylov;
    }
    if (method == EigenMethod::dense && op.num_vars() > kDenseMaxVars) {
        throw std::invalid_argument("lowest_two: dense path limited to " +
                                    std::to_string(kDenseMaxVars) + " variables");
    }
    LowestTwo r = method == EigenMethod::dense ? dense_lowest_two(op, a, b) : krylov_lowest_two(op, a, b);
    fix_phase(r.v0);
    if (!r.v1.empty()) fix_phase(r.v1);
    if (method == EigenMethod::dense) {
        r.residual = residual_norm(op, a, b, r.v0, r.e0);
        if (!r.v1.empty()) r.residual = std::max(r.residual, residual_norm(op, a, b, r.v1, r.e1));
        // A miscompiled or mis-dispatched BLAS shows up here first.
        if (!(r.residual <= 1e-9 * std::max(op.norm_bound(a, b), 1.0))) {
            throw EigenNotConverged("dense eigensolver returned inaccurate eigenvectors (residual " +
                                        std::to_string(r.residual) + "); check the linked BLAS",
                                    r.residual);
        }
    }
    r.degenerate = (r.e1 - r.e0) < kDegeneracyTolerance;
    return r;
}

LowestTwo lowest_two(const ProblemInstance& instance, const Schedule& schedule, double s,
                     EigenMethod method) {
    TransverseIsing op(instance);
    const auto env = schedule.eval(s);
    return lowest_two(op, env.a, env.b, method);
}

double matrix_element_dHds(const TransverseIsing& op, const Schedule& schedule, double s,
                           std::span<const double> v0, std::span<const double> v1) {
    const auto d = schedule.deriv(s);
    std::vector<double> w(v0.size());
    op.apply(d.a, d.b, v0, w);
    return std::abs(dot(v1, w));
}

double matrix_element_dHds(const ProblemInstance& instance, const Schedule& schedule, double s,
                           std::span<const double> v0, std::span<const double> v1) {
    return matrix_element_dHds(TransverseIsing(instance), schedule, s, v0, v1);
}

double adiabatic_time_natural(double g_min, double matel) {
    if (!(g_min > 0.0)) throw std::invalid_argument("adiabatic_time: g_min must be positive");
    return 4.0 * matel / (std::numbers::pi * g_min * g_min);
}

double adiabatic_time(double g_min_ghz, double matel_ghz) {
    return adiabatic_time_natural(g_min_ghz, matel_ghz) / (2.0 * std::numbers::pi * 1e9);
}

std::vector<double> uniform_grid(int points, double lo, double hi) {
    if (points < 2) throw std::invalid_argument("uniform_grid: need >= 2 points");
    std::vector<double> g(points);
    for (int k = 0; k < points; ++k) g[k] = lo + (hi - lo) * k / (points - 1);
    g.back() = hi;
    return g;
}

SpectrumScan scan_and_refine(const ProblemInstance& instance, const Schedule& schedule,
                             const std::vector<double>& s_grid, ScanOptions options) {
    if (s_grid.size() < 3) throw std::invalid_argument("scan_and_refine: need >= 3 grid points");
    for (std::size_t k = 0; k < s_grid.size(); ++k) {
        if (s_grid[k] < 0.0 || s_grid[k] > 1.0 || (k > 0 && !(s_grid[k] > s_grid[k - 1]))) {
            throw std::invalid_argument("scan_and_refine: grid must be strictly increasing in [0, 1]");
        }
    }
    const TransverseIsing op(instance);
    const std::size_t n = s_grid.size();
    SpectrumScan scan;
    scan.instance_id = instance.id;
    scan.schedule_name = schedule.name();
    scan.s_grid = s_grid;
    scan.e0.resize(n);
    scan.e1.resize(n);
    scan.gaps.resize(n);
    scan.matrix_elems.resize(n);
    std::vector<char> degenerate(n, 0);

    parallel_for(n, options.workers, [&](std::size_t k) {
        const auto env = schedule.eval(s_grid[k]);
        const auto pair = lowest_two(op, env.a, env.b, options.method);
        scan.e0[k] = pair.e0;
        scan.e1[k] = pair.e1;
        scan.gaps[k] = pair.e1 - pair.e0;
        scan.matrix_elems[k] = pair.v1.empty() ? 0.0
                                               : matrix_element_dHds(op, schedule, s_grid[k], pair.v0, pair.v1);
        degenerate[k] = pair.degenerate;
    });
    for (std::size_t k = 0; k < n; ++k) {
        if (degenerate[k]) {
            scan.reliable = false;
            scan.flags.push_back("degenerate at s=" + std::to_string(s_grid[k]));
        }
    }

    const std::size_t kmin =
        static_cast<std::size_t>(std::min_element(scan.gaps.begin(), scan.gaps.end()) - scan.gaps.begin());
    scan.s_star = s_grid[kmin];
    scan.g_min = scan.gaps[kmin];
    scan.matel_at_star = scan.matrix_elems[kmin];

    if (options.refine) {
        struct Probe {
            double s, gap, matel;
            bool degenerate;
        };
        auto probe = [&](double s) {
            const auto env = schedule.eval(s);
            const auto pair = lowest_two(op, env.a, env.b, options.method);
            const double m = pair.v1.empty() ? 0.0 : matrix_element_dHds(op, schedule, s, pair.v0, pair.v1);
            return Probe{s, pair.e1 - pair.e0, m, pair.degenerate};
        };
        double lo = s_grid[kmin == 0 ? 0 : kmin - 1];
        double hi = s_grid[std::min(kmin + 1, n - 1)];
        const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
        Probe c = probe(hi - invphi * (hi - lo));
        Probe d = probe(lo + invphi * (hi - lo));
        while (hi - lo > options.refine_tolerance) {
            if (c.gap < d.gap) {
                hi = d.s;
                d = c;
                c = probe(hi - invphi * (hi - lo));
            } else {
                lo = c.s;
                c = d;
                d = probe(lo + invphi * (hi - lo));
            }
        }
        const Probe& best = c.gap < d.gap ? c : d;
        if (best.gap <= scan.g_min) {
            scan.s_star = best.s;
            scan.g_min = best.gap;
            scan.matel_at_star = best.matel;
            if (best.degenerate) {
                scan.reliable = false;
                scan.flags.push_back("degenerate at refined s*");
            }
        }
    }

    // A symmetry can leave the first excited state uncoupled from the ground
    // state; the gap then does not bound the anneal and t_a degenerates.
    const auto slope = schedule.deriv(scan.s_star);
    double norm = instance.num_vars();
    for (double x : instance.h) norm += std::abs(x);
    for (double x : instance.j) norm += std::abs(x);
    if (scan.matel_at_star < 1e-9 * (std::abs(slope.a) + std::abs(slope.b)) * norm) {
        scan.reliable = false;
        scan.flags.push_back("first excited state uncoupled from the ground state at s*");
    }

    if (scan.g_min < kDegeneracyTolerance) {
        scan.reliable = false;
        scan.t_adiabatic = std::numeric_limits<double>::quiet_NaN();
    } else {
        scan.t_adiabatic = adiabatic_time(scan.g_min, scan.matel_at_star);
    }
    return scan;
}

}  // namespace aqo
