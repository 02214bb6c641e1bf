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

#include "aqo/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace aqo {

namespace {

// Shape-preserving three-point end slope (as in PCHIP).
double end_slope(double h0, double h1, double d0, double d1) {
    double m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if (m * d0 <= 0.0) return 0.0;
    if (d0 * d1 <= 0.0 && std::abs(m) > std::abs(3.0 * d0)) return 3.0 * d0;
    return m;
}

std::vector<double> monotone_slopes(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    std::vector<double> h(n - 1), d(n - 1), m(n, 0.0);
    for (std::size_t k = 0; k + 1 < n; ++k) {
        h[k] = x[k + 1] - x[k];
        d[k] = (y[k + 1] - y[k]) / h[k];
    }
    if (n == 2) {
        m[0] = m[1] = d[0];
        return m;
    }
    for (std::size_t k = 1; k + 1 < n; ++k) {
        if (d[k - 1] * d[k] <= 0.0) continue;
        const double w1 = 2.0 * h[k] + h[k - 1];
        const double w2 = h[k] + 2.0 * h[k - 1];
        m[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
    }
    m[0] = end_slope(h[0], h[1], d[0], d[1]);
    m[n - 1] = end_slope(h[n - 2], h[n - 3], d[n - 2], d[n - 3]);
    return m;
}

struct Segment {
    std::size_t k;
    double t;
    double h;
};

Segment locate(const std::vector<double>& x, double s) {
    if (!(s >= 0.0 && s <= 1.0)) {
        throw std::domain_error("schedule: s = " + std::to_string(s) + " outside [0, 1]");
    }
    auto it = std::upper_bound(x.begin(), x.end(), s);
    std::size_t k = it == x.begin() ? 0 : static_cast<std::size_t>(it - x.begin()) - 1;
    k = std::min(k, x.size() - 2);
    const double h = x[k + 1] - x[k];
    return {k, (s - x[k]) / h, h};
}

double hermite(const std::vector<double>& y, const std::vector<double>& m, const Segment& g) {
    const double t = g.t, t2 = t * t, t3 = t2 * t;
    return (2 * t3 - 3 * t2 + 1) * y[g.k] + (t3 - 2 * t2 + t) * g.h * m[g.k] +
           (-2 * t3 + 3 * t2) * y[g.k + 1] + (t3 - t2) * g.h * m[g.k + 1];
}

double hermite_deriv(const std::vector<double>& y, const std::vector<double>& m, const Segment& g) {
    const double t = g.t, t2 = t * t;
    return ((6 * t2 - 6 * t) * y[g.k] + (6 * t2 - 6 * t) * -y[g.k + 1]) / g.h +
           (3 * t2 - 4 * t + 1) * m[g.k] + (3 * t2 - 2 * t) * m[g.k + 1];
}

}  // namespace

Schedule::Schedule(std::vector<double> knots, std::vector<double> a_vals,
                   std::vector<double> b_vals, std::string name)
    : knots_(std::move(knots)), a_(std::move(a_vals)), b_(std::move(b_vals)), name_(std::move(name)) {
    const std::size_t n = knots_.size();
    if (n < 2 || a_.size() != n || b_.size() != n) {
        throw std::invalid_argument("schedule: need >= 2 knots with matching A and B columns");
    }
    if (knots_.front() != 0.0 || knots_.back() != 1.0) {
        throw std::invalid_argument("schedule: knots must include endpoints s=0 and s=1");
    }
    for (std::size_t k = 0; k < n; ++k) {
        if (!std::isfinite(knots_[k]) || !std::isfinite(a_[k]) || !std::isfinite(b_[k])) {
            throw std::invalid_argument("schedule: non-finite value at knot " + std::to_string(k));
        }
        if (k > 0 && !(knots_[k] > knots_[k - 1])) {
            throw std::invalid_argument("schedule: s not strictly increasing");
        }
        if (a_[k] < 0.0 || b_[k] < 0.0) throw std::invalid_argument("schedule: negative energy");
        if (k > 0 && a_[k] > a_[k - 1]) throw std::invalid_argument("schedule: A not non-increasing");
        if (k > 0 && b_[k] < b_[k - 1]) throw std::invalid_argument("schedule: B not non-decreasing");
    }
    if (!(a_.front() >= 10.0 * b_.front()) || a_.front() <= 0.0) {
        throw std::invalid_argument("schedule: A(0) >> B(0) violated (need A(0) >= 10 B(0))");
    }
    if (!(b_.back() >= 10.0 * a_.back()) || b_.back() <= 0.0) {
        throw std::invalid_argument("schedule: B(1) >> A(1) violated (need B(1) >= 10 A(1))");
    }
    da_ = monotone_slopes(knots_, a_);
    db_ = monotone_slopes(knots_, b_);
}

Envelope Schedule::eval(double s) const {
    const auto g = locate(knots_, s);
    if (g.t == 0.0) return {a_[g.k], b_[g.k]};
    if (g.t == 1.0) return {a_[g.k + 1], b_[g.k + 1]};
    if (knots_.size() == 2) {
        return {a_[0] + (a_[1] - a_[0]) * g.t, b_[0] + (b_[1] - b_[0]) * g.t};
    }
    return {hermite(a_, da_, g), hermite(b_, db_, g)};
}

Envelope Schedule::deriv(double s) const {
    const auto g = locate(knots_, s);
    return {hermite_deriv(a_, da_, g), hermite_deriv(b_, db_, g)};
}

Schedule linear_schedule(double a0, double b1) {
    if (!(a0 > 0.0) || !(b1 > 0.0)) {
        throw std::invalid_argument("linear_schedule: scales must be positive");
    }
    char name[64];
    std::snprintf(name, sizeof name, "linear(%g,%g)", a0, b1);
    return Schedule({0.0, 1.0}, {a0, 0.0}, {0.0, b1}, name);
}

Schedule parse_schedule(const std::string& text, std::string name) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    std::vector<double> s, a, b;
    bool header = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (!header) {
            std::string compact;
            for (char c : line)
                if (c != ' ') compact += c;
            if (compact != "s,A_GHz,B_GHz") {
                throw std::invalid_argument("schedule: line 1: expected header 's,A_GHz,B_GHz'");
            }
            header = true;
            continue;
        }
        std::istringstream ls(line);
        std::string f[3];
        for (auto& field : f) {
            if (!std::getline(ls, field, ',')) {
                throw std::invalid_argument("schedule: line " + std::to_string(lineno) +
                                            ": expected three columns");
            }
        }
        try {
            s.push_back(std::stod(f[0]));
            a.push_back(std::stod(f[1]));
            b.push_back(std::stod(f[2]));
        } catch (const std::exception&) {
            throw std::invalid_argument("schedule: line " + std::to_string(lineno) + ": bad number");
        }
    }
    if (!header) throw std::invalid_argument("schedule: empty file");
    return Schedule(std::move(s), std::move(a), std::move(b), std::move(name));
}

Schedule load_schedule(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("load_schedule: cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_schedule(buf.str(), path.stem().string());
}

std::string serialize_schedule(const Schedule& schedule) {
    std::string out = "s,A_GHz,B_GHz\n";
    char buf[128];
    for (std::size_t k = 0; k < schedule.knots().size(); ++k) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", schedule.knots()[k],
                      schedule.a_vals()[k], schedule.b_vals()[k]);
        out += buf;
    }
    return out;
}

void save_schedule(const Schedule& schedule, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("save_schedule: cannot open " + path.string());
    out << serialize_schedule(schedule);
}

}  // namespace aqo
