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

#include "aqo/fit.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace aqo {

namespace {

constexpr double kGapLo = 1e-4;  // GHz
constexpr double kGapHi = 200.0;
constexpr int kCoarse = 400;
constexpr double kInvPhi = 0.6180339887498949;

std::vector<double> weights(const std::vector<double>& sigma, std::size_t lo, std::size_t hi) {
    double smax = 0.0;
    for (std::size_t m = lo; m < hi; ++m) smax = std::max(smax, sigma[m]);
    std::vector<double> w(hi - lo, 1.0);
    if (smax <= 0.0) return w;
    const double floor = 1e-9 * smax;
    for (std::size_t m = lo; m < hi; ++m) {
        const double s = std::max(sigma[m], floor);
        w[m - lo] = 1.0 / (s * s);
    }
    return w;
}

double log_gap(int k, int n) {
    return std::log(kGapLo) + (std::log(kGapHi) - std::log(kGapLo)) * k / (n - 1);
}

template <class F>
double golden_min(F&& f, double lo, double hi, double tol) {
    double x1 = hi - kInvPhi * (hi - lo), x2 = lo + kInvPhi * (hi - lo);
    double f1 = f(x1), f2 = f(x2);
    while (hi - lo > tol) {
        if (f1 <= f2) {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - kInvPhi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + kInvPhi * (hi - lo);
            f2 = f(x2);
        }
    }
    return 0.5 * (lo + hi);
}

struct Problem {
    const std::vector<double>& tau;
    const std::vector<double>& y;
    const std::vector<double>& w;
    double beta;
    std::size_t lo, hi;

    // Optimal amplitude and chi^2 for fixed gap.
    std::pair<double, double> eval(double g) const {
        double scc = 0, scy = 0, syy = 0;
        for (std::size_t m = lo; m < hi; ++m) {
            const double c = periodic_exp(g, tau[m], beta), wm = w[m - lo];
            scc += wm * c * c;
            scy += wm * c * y[m];
            syy += wm * y[m] * y[m];
        }
        if (scc <= 0) return {0.0, syy};
        const double a = scy / scc;
        return {a, std::max(0.0, syy - a * scy)};
    }

    // Two-exponential chi^2 with amplitudes solved linearly.
    double eval2(double g1, double g2, double* a1, double* a2) const {
        double s11 = 0, s12 = 0, s22 = 0, b1 = 0, b2 = 0, syy = 0;
        for (std::size_t m = lo; m < hi; ++m) {
            const double c1 = periodic_exp(g1, tau[m], beta), c2 = periodic_exp(g2, tau[m], beta);
            const double wm = w[m - lo];
            s11 += wm * c1 * c1;
            s12 += wm * c1 * c2;
            s22 += wm * c2 * c2;
            b1 += wm * c1 * y[m];
            b2 += wm * c2 * y[m];
            syy += wm * y[m] * y[m];
        }
        const double det = s11 * s22 - s12 * s12;
        if (!(std::abs(det) > 1e-300 * std::max(1.0, s11 * s22))) {
            *a1 = *a2 = 0;
            return std::numeric_limits<double>::infinity();
        }
        *a1 = (s22 * b1 - s12 * b2) / det;
        *a2 = (s11 * b2 - s12 * b1) / det;
        return std::max(0.0, syy - *a1 * b1 - *a2 * b2);
    }
};

std::size_t dof(std::size_t points, std::size_t params) {
    return points > params ? points - params : 1;
}

// Solves the 4x4 system m x = r in place by partial pivoting; false when singular.
bool solve4(std::array<std::array<double, 4>, 4> m, std::array<double, 4>& r) {
    for (int c = 0; c < 4; ++c) {
        int piv = c;
        for (int k = c + 1; k < 4; ++k) {
            if (std::abs(m[k][c]) > std::abs(m[piv][c])) piv = k;
        }
        if (!(std::abs(m[piv][c]) > 0)) return false;
        std::swap(m[c], m[piv]);
        std::swap(r[c], r[piv]);
        for (int k = c + 1; k < 4; ++k) {
            const double f = m[k][c] / m[c][c];
            for (int j = c; j < 4; ++j) m[k][j] -= f * m[c][j];
            r[k] -= f * r[c];
        }
    }
    for (int c = 3; c >= 0; --c) {
        for (int j = c + 1; j < 4; ++j) r[c] -= m[c][j] * r[j];
        r[c] /= m[c][c];
    }
    return true;
}

// Levenberg-Marquardt on (a1, g1, a2, g2) from a nearby start.
void polish_two(const Problem& p, TwoExpFit& f) {
    std::array<double, 4> x{f.a1, f.g1, f.a2, f.g2};
    auto chi2_at = [&](const std::array<double, 4>& v) {
        double chi2 = 0;
        for (std::size_t m = p.lo; m < p.hi; ++m) {
            const double r = p.y[m] - v[0] * periodic_exp(v[1], p.tau[m], p.beta) -
                             v[2] * periodic_exp(v[3], p.tau[m], p.beta);
            chi2 += p.w[m - p.lo] * r * r;
        }
        return chi2;
    };
    double chi2 = chi2_at(x), lambda = 1e-3;
    for (int it = 0; it < 200 && lambda < 1e12; ++it) {
        std::array<std::array<double, 4>, 4> jtj{};
        std::array<double, 4> jtr{};
        for (std::size_t m = p.lo; m < p.hi; ++m) {
            const double t = p.tau[m], u = p.beta - t;
            const double e1 = std::exp(-x[1] * t), f1 = std::exp(-x[1] * u);
            const double e2 = std::exp(-x[3] * t), f2 = std::exp(-x[3] * u);
            const std::array<double, 4> d{e1 + f1, -x[0] * (t * e1 + u * f1), e2 + f2, -x[2] * (t * e2 + u * f2)};
            const double r = p.y[m] - x[0] * d[0] - x[2] * d[2], wm = p.w[m - p.lo];
            for (int i = 0; i < 4; ++i) {
                jtr[i] += wm * d[i] * r;
                for (int j = 0; j < 4; ++j) jtj[i][j] += wm * d[i] * d[j];
            }
        }
        auto step = jtr;
        auto damped = jtj;
        for (int i = 0; i < 4; ++i) damped[i][i] *= 1.0 + lambda;
        if (!solve4(damped, step)) break;
        std::array<double, 4> trial{x[0] + step[0], x[1] + step[1], x[2] + step[2], x[3] + step[3]};
        const double c = trial[1] > 0 && trial[3] > trial[1] ? chi2_at(trial) : std::numeric_limits<double>::infinity();
        if (c < chi2) {
            const bool done = chi2 - c <= 1e-14 * chi2;
            x = trial;
            chi2 = c;
            lambda *= 0.1;
            if (done) break;
        } else {
            lambda *= 10;
        }
    }
    f.a1 = x[0];
    f.g1 = x[1];
    f.a2 = x[2];
    f.g2 = x[3];
}

}  // namespace

std::size_t signal_end(const Correlator& c) {
    const std::size_t n = c.mean.size();
    std::size_t hi = n;
    for (std::size_t m = 1; m < n; ++m) {
        if (c.mean[m] < kSignalSigmas * c.error[m]) {
            hi = m;
            break;
        }
    }
    return std::clamp(hi, std::min(n, kMinWindowPoints + 2), n);
}

double jackknife_error(const std::vector<double>& samples) {
    const std::size_t b = samples.size();
    if (b < 2) return 0.0;
    double mean = 0.0;
    for (double x : samples) mean += x;
    mean /= static_cast<double>(b);
    double var = 0.0;
    for (double x : samples) var += (x - mean) * (x - mean);
    return std::sqrt(var * static_cast<double>(b - 1) / static_cast<double>(b));
}

void Correlator::update_errors() {
    error.assign(mean.size(), 0.0);
    if (jackknife.size() < 2) return;
    std::vector<double> col(jackknife.size());
    for (std::size_t m = 0; m < mean.size(); ++m) {
        for (std::size_t b = 0; b < jackknife.size(); ++b) col[b] = jackknife[b][m];
        error[m] = jackknife_error(col);
    }
}

double periodic_exp(double gap, double tau, double beta) {
    return std::exp(-gap * tau) + std::exp(-gap * (beta - tau));
}

ExpFit fit_periodic_exp(const std::vector<double>& tau, const std::vector<double>& y,
                        const std::vector<double>& sigma, double beta, std::size_t lo, std::size_t hi,
                        std::optional<double> fixed_gap) {
    if (hi > y.size() || hi > tau.size() || hi > sigma.size() || lo >= hi) {
        throw std::invalid_argument("fit_periodic_exp: bad window");
    }
    const auto w = weights(sigma, lo, hi);
    const Problem p{tau, y, w, beta, lo, hi};
    ExpFit fit;
    if (fixed_gap) {
        auto [a, chi2] = p.eval(*fixed_gap);
        fit.amplitude = a;
        fit.gap = *fixed_gap;
        fit.chi2_dof = chi2 / static_cast<double>(dof(hi - lo, 1));
        fit.converged = std::isfinite(a);
        return fit;
    }
    int best = 0;
    double best_chi2 = std::numeric_limits<double>::infinity();
    for (int k = 0; k < kCoarse; ++k) {
        const double chi2 = p.eval(std::exp(log_gap(k, kCoarse))).second;
        if (chi2 < best_chi2) {
            best_chi2 = chi2;
            best = k;
        }
    }
    const double lo_x = log_gap(std::max(0, best - 1), kCoarse);
    const double hi_x = log_gap(std::min(kCoarse - 1, best + 1), kCoarse);
    const double x = golden_min([&](double lx) { return p.eval(std::exp(lx)).second; }, lo_x, hi_x, 1e-10);
    fit.gap = std::exp(x);
    auto [a, chi2] = p.eval(fit.gap);
    fit.amplitude = a;
    fit.chi2_dof = chi2 / static_cast<double>(dof(hi - lo, 2));
    fit.converged = best > 0 && best < kCoarse - 1 && std::isfinite(a);
    return fit;
}

TwoExpFit fit_two_periodic_exp(const std::vector<double>& tau, const std::vector<double>& y,
                               const std::vector<double>& sigma, double beta, std::size_t lo,
                               std::size_t hi, const TwoExpFit* start) {
    if (hi > y.size() || lo + 4 > hi) throw std::invalid_argument("fit_two_periodic_exp: bad window");
    const auto w = weights(sigma, lo, hi);
    const Problem p{tau, y, w, beta, lo, hi};
    constexpr int n = 48;
    const double step = log_gap(1, n) - log_gap(0, n);
    double a1 = 0, a2 = 0;
    double x1, x2;
    int rounds = 2;
    if (start && start->g1 > 0 && start->g2 > start->g1) {
        x1 = std::log(start->g1);
        x2 = std::log(start->g2);
    } else {
        rounds = 6;
        // Basis table on the coarse gap grid; pairs are scored without exp calls.
        std::vector<double> basis(static_cast<std::size_t>(n) * (hi - lo));
        for (int g = 0; g < n; ++g) {
            const double gap = std::exp(log_gap(g, n));
            for (std::size_t m = lo; m < hi; ++m) basis[g * (hi - lo) + (m - lo)] = periodic_exp(gap, tau[m], beta);
        }
        double syy = 0;
        for (std::size_t m = lo; m < hi; ++m) syy += w[m - lo] * y[m] * y[m];
        double best = std::numeric_limits<double>::infinity();
        int b1 = 0, b2 = 1;
        for (int i = 0; i < n; ++i) {
            const double* c1 = &basis[i * (hi - lo)];
            for (int j = i + 1; j < n; ++j) {
                const double* c2 = &basis[j * (hi - lo)];
                double s11 = 0, s12 = 0, s22 = 0, r1 = 0, r2 = 0;
                for (std::size_t m = 0; m < hi - lo; ++m) {
                    const double wm = w[m], ym = y[lo + m];
                    s11 += wm * c1[m] * c1[m];
                    s12 += wm * c1[m] * c2[m];
                    s22 += wm * c2[m] * c2[m];
                    r1 += wm * c1[m] * ym;
                    r2 += wm * c2[m] * ym;
                }
                const double det = s11 * s22 - s12 * s12;
                if (!(det > 1e-14 * s11 * s22)) continue;
                const double q1 = (s22 * r1 - s12 * r2) / det, q2 = (s11 * r2 - s12 * r1) / det;
                const double chi2 = syy - q1 * r1 - q2 * r2;
                if (chi2 < best) {
                    best = chi2;
                    b1 = i;
                    b2 = j;
                }
            }
        }
        x1 = log_gap(b1, n);
        x2 = log_gap(b2, n);
    }
    const double xmin = std::log(kGapLo), xmax = std::log(kGapHi);
    for (int round = 0; round < rounds; ++round) {
        x1 = golden_min([&](double lx) {
            return lx >= x2 ? std::numeric_limits<double>::infinity()
                            : p.eval2(std::exp(lx), std::exp(x2), &a1, &a2);
        }, std::max(xmin, x1 - step), std::min(x1 + step, x2), 1e-7);
        x2 = golden_min([&](double lx) {
            return lx <= x1 ? std::numeric_limits<double>::infinity()
                            : p.eval2(std::exp(x1), std::exp(lx), &a1, &a2);
        }, std::max(x2 - step, x1), std::min(xmax, x2 + step), 1e-7);
    }
    TwoExpFit fit;
    fit.g1 = std::exp(x1);
    fit.g2 = std::exp(x2);
    p.eval2(fit.g1, fit.g2, &fit.a1, &fit.a2);
    polish_two(p, fit);
    const double chi2 = p.eval2(fit.g1, fit.g2, &fit.a1, &fit.a2);
    fit.chi2_dof = chi2 / static_cast<double>(dof(hi - lo, 4));
    fit.converged = std::isfinite(chi2);
    return fit;
}

WindowedFit fit_amplitude(const Correlator& c, double beta, double gap, std::size_t lo, std::size_t hi) {
    WindowedFit out;
    out.lo = lo;
    out.hi = hi;
    out.central = fit_periodic_exp(c.tau, c.mean, c.error, beta, lo, hi, gap);
    std::vector<double> amps;
    for (const auto& sample : c.jackknife) {
        amps.push_back(fit_periodic_exp(c.tau, sample, c.error, beta, lo, hi, gap).amplitude);
    }
    out.amplitude_error = jackknife_error(amps);
    out.jackknife_amplitudes = std::move(amps);
    return out;
}

WindowedFit fit_gap(const Correlator& c, double beta) {
    const std::size_t n = c.mean.size();
    if (n < kMinWindowPoints + 2) throw std::invalid_argument("fit_gap: too few lags");
    const std::size_t hi = signal_end(c);
    const std::size_t last_lo = hi - kMinWindowPoints;
    WindowedFit out;
    out.hi = hi;
    out.lo = last_lo;
    out.window_found = false;
    const double step = c.tau[1] - c.tau[0];
    const auto offset = static_cast<std::size_t>(std::ceil(kPlateauOffset / step - 1e-9));
    for (std::size_t lo = 1; lo + offset <= last_lo; ++lo) {
        const double near = fit_periodic_exp(c.tau, c.mean, c.error, beta, lo, hi).gap;
        const double far = fit_periodic_exp(c.tau, c.mean, c.error, beta, lo + offset, hi).gap;
        std::vector<double> diff;
        for (const auto& sample : c.jackknife) {
            diff.push_back(fit_periodic_exp(c.tau, sample, c.error, beta, lo, hi).gap -
                           fit_periodic_exp(c.tau, sample, c.error, beta, lo + offset, hi).gap);
        }
        if (std::abs(near - far) < kSignificanceSigmas * jackknife_error(diff)) {
            out.lo = lo;
            out.window_found = true;
            break;
        }
    }
    out.central = fit_periodic_exp(c.tau, c.mean, c.error, beta, out.lo, hi);
    std::vector<double> gaps, amps;
    for (const auto& sample : c.jackknife) {
        const auto f = fit_periodic_exp(c.tau, sample, c.error, beta, out.lo, hi);
        gaps.push_back(f.gap);
        amps.push_back(f.amplitude);
    }
    out.gap_error = jackknife_error(gaps);
    out.amplitude_error = jackknife_error(amps);
    out.jackknife_gaps = std::move(gaps);
    out.jackknife_amplitudes = std::move(amps);
    return out;
}

}  // namespace aqo
